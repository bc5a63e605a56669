//! Two-period consumption problem with a riskless rate: closed form, numeric
//! solution, comparative-statics signs and the indifference-curve data behind
//! the classic three-panel figure.

use std::path::Path;

use serde::Serialize;

use crate::aggregator::Aggregator;
use crate::error::{Error, Result};
use crate::numerics::{bisect, maximize_with_derivative, sign, ScanOptions};
use crate::report::{num, write_csv};

/// Relative step for the finite-difference derivatives in rates.
const FD_STEP: f64 = 1e-5;
/// `|1 - eps psi|` below which signs are not compared.
const SIGN_TOL: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct TwoPeriodProblem {
    pub e1: f64,
    pub e2: f64,
    pub rf: f64,
    /// Continuation utility per unit of second-period consumption.
    pub rho: f64,
    pub aggregator: Aggregator,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoPeriodSolution {
    pub c1: f64,
    pub c2: f64,
    pub utility: f64,
}

impl TwoPeriodProblem {
    pub fn new(e1: f64, e2: f64, rf: f64, rho: f64, aggregator: Aggregator) -> Result<Self> {
        let p = TwoPeriodProblem {
            e1,
            e2,
            rf,
            rho,
            aggregator,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e1 >= 0.0 && self.e2 >= 0.0) {
            return Err(Error::InvalidProblem("endowments must be >= 0".into()));
        }
        if !(self.rf > 0.0 && self.rho > 0.0) {
            return Err(Error::InvalidProblem("Rf and rho must be positive".into()));
        }
        if !(self.lifetime_wealth() > 0.0) {
            return Err(Error::InvalidProblem("lifetime wealth must be positive".into()));
        }
        if !self.aggregator.has_inada() {
            return Err(Error::InvalidProblem(
                "aggregator must satisfy Inada conditions".into(),
            ));
        }
        Ok(())
    }

    pub fn lifetime_wealth(&self) -> f64 {
        self.e1 + self.e2 / self.rf
    }

    pub fn second_period(&self, c1: f64) -> f64 {
        self.rf * (self.e1 - c1) + self.e2
    }

    fn with_rf(&self, rf: f64) -> Self {
        TwoPeriodProblem { rf, ..self.clone() }
    }

    fn with_rho(&self, rho: f64) -> Self {
        TwoPeriodProblem { rho, ..self.clone() }
    }

    fn finish(&self, c1: f64) -> TwoPeriodSolution {
        let c2 = self.second_period(c1);
        TwoPeriodSolution {
            c1,
            c2,
            utility: self.aggregator.value(c1, self.rho * c2),
        }
    }
}

/// Closed-form demand for CES and Cobb-Douglas aggregators.
pub fn closed_form_consumption(beta: f64, psi: f64, p: &TwoPeriodProblem) -> f64 {
    let a = (1.0 - beta).powf(psi);
    a * p.lifetime_wealth() / (a + beta.powf(psi) * (p.rho * p.rf).powf(psi - 1.0))
}

pub fn solve_two_period(p: &TwoPeriodProblem) -> Result<TwoPeriodSolution> {
    p.validate()?;
    match p.aggregator {
        Aggregator::EpsteinZin { beta, psi } => Ok(p.finish(closed_form_consumption(beta, psi, p))),
        Aggregator::CobbDouglas { beta } => Ok(p.finish(closed_form_consumption(beta, 1.0, p))),
        Aggregator::Custom(_) => solve_two_period_numeric(p),
    }
}

/// Maximises `f(c, rho (Rf (e1 - c) + e2))` over `c` in `(0, W)` for any
/// aggregator, rejecting objectives with several local maxima.
pub fn solve_two_period_numeric(p: &TwoPeriodProblem) -> Result<TwoPeriodSolution> {
    p.validate()?;
    let agg = &p.aggregator;
    let k = p.rho * p.rf;
    let m = maximize_with_derivative(
        |c| Ok(agg.value(c, p.rho * p.second_period(c))),
        |c| {
            let d = agg.partials(c, p.rho * p.second_period(c));
            Ok(d.fc - k * d.fv)
        },
        0.0,
        p.lifetime_wealth(),
        ScanOptions {
            scan_points: 64,
            include_upper: false,
            reject_multimodal: true,
        },
    )?;
    let sol = p.finish(m.x);
    let d = agg.partials(sol.c1, p.rho * sol.c2);
    let foc = (d.fc - k * d.fv) / d.fc;
    if !(foc.abs() < 1e-6) {
        return Err(Error::NonConvergence {
            what: "two-period optimiser",
            residual: foc,
        });
    }
    Ok(sol)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoPeriodSigns {
    pub c1: f64,
    pub psi: f64,
    /// `(e1 - c + e2/Rf) / (e1 - c)`.
    pub epsilon: f64,
    /// Predicted sign of `dc/drho`: `sign(1 - psi)`.
    pub drho_sign: i8,
    /// Predicted sign of `dc/dRf`: `sign(1 - eps psi)`, flipped for borrowers.
    pub drf_sign: i8,
    pub dc_drho_fd: f64,
    pub dc_drf_fd: f64,
    /// Predictions match finite differences away from the knife edge.
    pub agree: bool,
}

pub fn two_period_signs(p: &TwoPeriodProblem) -> Result<TwoPeriodSigns> {
    let sol = solve_two_period(p)?;
    let savings = p.e1 - sol.c1;
    if savings.abs() <= 1e-12 * p.lifetime_wealth() {
        return Err(Error::ZeroSaver);
    }
    let psi = p.aggregator.eis_at(sol.c1, p.rho * sol.c2)?;
    let epsilon = (savings + p.e2 / p.rf) / savings;

    let hr = FD_STEP * p.rho;
    let dc_drho_fd = (solve_two_period(&p.with_rho(p.rho + hr))?.c1
        - solve_two_period(&p.with_rho(p.rho - hr))?.c1)
        / (2.0 * hr);
    let hf = FD_STEP * p.rf;
    let dc_drf_fd = (solve_two_period(&p.with_rf(p.rf + hf))?.c1
        - solve_two_period(&p.with_rf(p.rf - hf))?.c1)
        / (2.0 * hf);

    let rho_gap = 1.0 - psi;
    let rf_gap = 1.0 - epsilon * psi;
    let drho_sign = if rho_gap.abs() > SIGN_TOL { sign(rho_gap) } else { 0 };
    let drf_sign = if rf_gap.abs() > SIGN_TOL {
        sign(rf_gap) * sign(savings)
    } else {
        0
    };
    let agree = (drho_sign == 0 || drho_sign == sign(dc_drho_fd))
        && (drf_sign == 0 || drf_sign == sign(dc_drf_fd));
    Ok(TwoPeriodSigns {
        c1: sol.c1,
        psi,
        epsilon,
        drho_sign,
        drf_sign,
        dc_drho_fd,
        dc_drf_fd,
        agree,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub beta: f64,
    pub psi: f64,
    pub rf: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub panel: String,
    pub curve_id: String,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FigureData {
    pub bundles: Vec<Bundle>,
    pub points: Vec<CurvePoint>,
}

/// Inputs for the budget-line and indifference-curve data.
#[derive(Clone, Debug)]
pub struct FigureSpec {
    pub betas: Vec<f64>,
    pub psis: Vec<f64>,
    pub rates: Vec<f64>,
    pub resolution: usize,
    pub e1: f64,
    pub e2: f64,
    pub rho: f64,
}

impl FigureSpec {
    /// Unit first-period endowment, no second-period income.
    pub fn standard(betas: Vec<f64>, psis: Vec<f64>, rates: Vec<f64>, resolution: usize) -> Self {
        FigureSpec {
            betas,
            psis,
            rates,
            resolution,
            e1: 1.0,
            e2: 0.0,
            rho: 1.0,
        }
    }
}

fn panel_name(beta: f64, psi: f64, many_betas: bool) -> String {
    if many_betas {
        format!("beta={beta},psi={psi}")
    } else {
        format!("psi={psi}")
    }
}

pub fn figure1_data(spec: &FigureSpec) -> Result<FigureData> {
    if spec.psis.is_empty() || spec.rates.is_empty() || spec.betas.is_empty() {
        return Err(Error::InvalidProblem(
            "figure needs at least one beta, psi and rate".into(),
        ));
    }
    let n = spec.resolution.max(2);
    let many_betas = spec.betas.len() > 1;
    let mut out = FigureData::default();
    for &beta in &spec.betas {
        for &psi in &spec.psis {
            let panel = panel_name(beta, psi, many_betas);
            let agg = Aggregator::epstein_zin(beta, psi)?;
            for &rf in &spec.rates {
                let p = TwoPeriodProblem::new(spec.e1, spec.e2, rf, spec.rho, agg.clone())?;
                let sol = solve_two_period(&p)?;
                out.bundles.push(Bundle {
                    beta,
                    psi,
                    rf,
                    c1: sol.c1,
                    c2: sol.c2,
                });
                let w = p.lifetime_wealth();
                let budget = format!("budget_Rf={rf}");
                for k in 0..n {
                    let c1 = w * k as f64 / (n - 1) as f64;
                    out.points.push(CurvePoint {
                        panel: panel.clone(),
                        curve_id: budget.clone(),
                        c1,
                        c2: p.second_period(c1),
                    });
                }
                let indiff = format!("indifference_Rf={rf}");
                for k in 1..=n {
                    let c1 = 1.5 * w * k as f64 / n as f64;
                    if let Some(v) = indifference_v(&agg, c1, sol.utility)? {
                        out.points.push(CurvePoint {
                            panel: panel.clone(),
                            curve_id: indiff.clone(),
                            c1,
                            c2: v / spec.rho,
                        });
                    }
                }
                out.points.push(CurvePoint {
                    panel: panel.clone(),
                    curve_id: format!("optimum_Rf={rf}"),
                    c1: sol.c1,
                    c2: sol.c2,
                });
            }
        }
    }
    Ok(out)
}

/// Solves `f(c, v) = target` for `v` by bisection. `None` when no `v` reaches
/// the target (bounded CES utility in `v`) or `c` alone already exceeds it.
fn indifference_v(agg: &Aggregator, c: f64, target: f64) -> Result<Option<f64>> {
    if agg.value(c, 0.0) >= target {
        return Ok(None);
    }
    let mut hi = 1.0;
    while agg.value(c, hi) < target {
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(None);
        }
    }
    bisect(|v| Ok(agg.value(c, v) - target), 0.0, hi).map(Some)
}

pub fn write_figure_csv(data: &FigureData, path: &Path) -> Result<()> {
    write_csv(
        path,
        &["panel", "curve_id", "c1", "c2"],
        data.points
            .iter()
            .map(|p| vec![p.panel.clone(), p.curve_id.clone(), num(p.c1), num(p.c2)]),
    )
}
