//! Backward induction for finite-horizon problems: an exact recursion for
//! homothetic settings and a grid solver for everything else.

mod backward;
pub mod cache;
mod homothetic;

use std::path::Path;

use crate::aggregator::Aggregator;
use crate::error::{Error, Result};
use crate::grid::{Eval, Interpolant, WealthGrid};
use crate::numerics::{maximize_with_derivative, ScanOptions};
use crate::report::{num, write_csv};

pub use backward::{default_tensor_span, solve_backward, solve_backward_with, SolveOptions};
pub use homothetic::solve_homothetic;

/// How the state is represented on the grid.
#[derive(Clone, Debug, PartialEq)]
pub enum Layout {
    /// Wealth only.
    Wealth,
    /// Labour income reduced by homogeneity to the ratio `w / p`.
    IncomeRatio,
    /// Labour income on a tensor grid with one layer per permanent-income level.
    IncomeTensor { layers: Vec<f64> },
}

/// Tabulated period `t` solution on one permanent-income layer.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodTable {
    /// Permanent income of the layer (1 for the wealth and ratio layouts).
    pub p: f64,
    pub cash: WealthGrid,
    pub value: Vec<f64>,
    pub consumption: Vec<f64>,
    /// Portfolio chosen at the optimal savings of each cash node.
    pub portfolio: Vec<usize>,
    pub savings: WealthGrid,
    pub continuation: Vec<f64>,
    pub continuation_portfolio: Vec<usize>,
    /// Asymptotic slopes of the value and continuation value above the grid,
    /// when known.
    pub value_tail: Option<f64>,
    pub continuation_tail: Option<f64>,
}

impl PeriodTable {
    pub fn value_interp(&self) -> Result<Interpolant> {
        Ok(Interpolant::new(&self.cash, &self.value)?.with_tail(self.value_tail))
    }

    pub fn continuation_interp(&self) -> Result<Interpolant> {
        Ok(Interpolant::new(&self.savings, &self.continuation)?.with_tail(self.continuation_tail))
    }

    /// Savings intervals around kinks of the tabulated continuation value:
    /// portfolio switches, or a jump in the log-log slope sequence whose
    /// second difference exceeds 1% of the slope.
    pub fn kinks(&self) -> Vec<(f64, f64)> {
        let s = self.savings.nodes();
        let n = s.len();
        let mut flagged = vec![false; n];
        for j in 1..n {
            if self.continuation_portfolio[j] != self.continuation_portfolio[j - 1] {
                flagged[j - 1] = true;
                flagged[j] = true;
            }
        }
        let shift = self.savings.shift();
        let u: Vec<f64> = s.iter().map(|x| (x + shift).ln()).collect();
        let y: Vec<f64> = self.continuation.iter().map(|v| v.ln()).collect();
        let slope: Vec<f64> = (0..n - 1).map(|j| (y[j + 1] - y[j]) / (u[j + 1] - u[j])).collect();
        for j in 1..slope.len().saturating_sub(1) {
            let second = slope[j + 1] - 2.0 * slope[j] + slope[j - 1];
            if second.abs() > 1e-2 * slope[j].abs() {
                flagged[j] = true;
                flagged[j + 1] = true;
            }
        }
        (0..n)
            .filter(|&j| flagged[j])
            .map(|j| (s[j.saturating_sub(1)], s[(j + 1).min(n - 1)]))
            .collect()
    }
}

/// `b_t`, the portfolio certainty equivalent `rho_t` and the consumption share
/// for each period of a homothetic problem.
#[derive(Clone, Debug, PartialEq)]
pub struct HomotheticCoefficients {
    /// `V_t(w) = b[t] w` for `t < T`.
    pub b: Vec<f64>,
    /// Terminal scale per final-period state.
    pub b_terminal: Vec<f64>,
    /// `v_t(s) = rho[t] s`.
    pub rho: Vec<f64>,
    pub share: Vec<f64>,
    pub portfolio: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub layout: Layout,
    /// Aggregator of each period.
    pub aggregators: Vec<Aggregator>,
    /// Per period, one table per permanent-income layer. Empty for the exact
    /// homothetic recursion.
    pub tables: Vec<Vec<PeriodTable>>,
    pub homothetic: Option<HomotheticCoefficients>,
}

/// One CSV row of a tabulated solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Row {
    pub t: usize,
    pub p: f64,
    pub w: f64,
    pub value: f64,
    pub c: f64,
    pub theta: usize,
}

impl Solution {
    pub fn horizon(&self) -> usize {
        self.aggregators.len()
    }

    /// First (or only) layer of period `t`.
    pub fn table(&self, t: usize) -> Result<&PeriodTable> {
        self.tables
            .get(t)
            .and_then(|l| l.first())
            .ok_or_else(|| Error::InvalidProblem(format!("no tabulated solution for period {t}")))
    }

    /// Continuation value of period `t` at permanent income `p`. The wealth
    /// layout ignores `p`.
    pub fn continuation_fn(&self, t: usize, p: f64) -> Result<ContinuationFn> {
        if t >= self.horizon() {
            return Err(Error::InvalidProblem(format!("period {t} beyond horizon")));
        }
        if let Some(h) = &self.homothetic {
            return Ok(ContinuationFn::linear(h.rho[t]));
        }
        match &self.layout {
            Layout::Wealth => {
                let table = self.table(t)?;
                Ok(ContinuationFn::table(table.continuation_interp()?, 1.0, false, table.kinks()))
            }
            Layout::IncomeRatio => {
                if !(p > 0.0) {
                    return Err(Error::Domain(format!(
                        "ratio layout needs positive permanent income, got {p}"
                    )));
                }
                let table = self.table(t)?;
                Ok(ContinuationFn::table(table.continuation_interp()?, p, true, table.kinks()))
            }
            Layout::IncomeTensor { layers } => {
                let k = layers
                    .iter()
                    .position(|q| (q - p).abs() <= 1e-12 * q.abs().max(1.0))
                    .ok_or_else(|| {
                        Error::Incompatible(format!("p = {p} is not a layer of the tensor grid"))
                    })?;
                let table = &self.tables[t][k];
                Ok(ContinuationFn::table(table.continuation_interp()?, 1.0, true, table.kinks()))
            }
        }
    }

    /// Re-optimises consumption at an arbitrary wealth using the tabulated
    /// continuation value.
    pub fn consumption_at(&self, t: usize, w: f64, p: f64) -> Result<f64> {
        if let Some(h) = &self.homothetic {
            return Ok(h.share[t] * w);
        }
        let cont = self.continuation_fn(t, p)?;
        Ok(optimize_consumption(&self.aggregators[t], &cont, w)?.0)
    }

    pub fn value_at(&self, t: usize, w: f64, p: f64) -> Result<f64> {
        if let Some(h) = &self.homothetic {
            return Ok(h.b[t] * w);
        }
        let cont = self.continuation_fn(t, p)?;
        Ok(optimize_consumption(&self.aggregators[t], &cont, w)?.1)
    }

    /// CSV rows. Tabulated solutions use their own nodes; the homothetic
    /// recursion is tabulated on `grid`.
    pub fn rows(&self, grid: &WealthGrid) -> Vec<Row> {
        let mut rows = Vec::new();
        if let Some(h) = &self.homothetic {
            for t in 0..self.horizon() {
                for &w in grid.nodes() {
                    rows.push(Row {
                        t,
                        p: 0.0,
                        w,
                        value: h.b[t] * w,
                        c: h.share[t] * w,
                        theta: h.portfolio[t],
                    });
                }
            }
            return rows;
        }
        for (t, layers) in self.tables.iter().enumerate() {
            for table in layers {
                for (i, &w) in table.cash.nodes().iter().enumerate() {
                    rows.push(Row {
                        t,
                        p: table.p,
                        w,
                        value: table.value[i],
                        c: table.consumption[i],
                        theta: table.portfolio[i],
                    });
                }
            }
        }
        rows
    }

    pub fn write_csv(&self, path: &Path, grid: &WealthGrid) -> Result<()> {
        let tensor = matches!(self.layout, Layout::IncomeTensor { .. });
        let header: &[&str] = if tensor {
            &["t", "p", "w", "V", "c", "theta"]
        } else {
            &["t", "w", "V", "c", "theta"]
        };
        write_csv(
            path,
            header,
            self.rows(grid).into_iter().map(|r| {
                let mut row = vec![r.t.to_string()];
                if tensor {
                    row.push(num(r.p));
                }
                row.extend([num(r.w), num(r.value), num(r.c), r.theta.to_string()]);
                row
            }),
        )
    }
}

#[derive(Clone, Debug)]
enum ContinuationKind {
    Linear(f64),
    Table(Interpolant),
}

/// Continuation value in savings, exact or interpolated, possibly rescaled by
/// permanent income: `v(s) = p v_hat(s / p)`.
#[derive(Clone, Debug)]
pub struct ContinuationFn {
    kind: ContinuationKind,
    p: f64,
    zero_ok: bool,
    kinks: Vec<(f64, f64)>,
}

impl ContinuationFn {
    pub fn linear(g: f64) -> Self {
        ContinuationFn {
            kind: ContinuationKind::Linear(g),
            p: 1.0,
            zero_ok: false,
            kinks: Vec::new(),
        }
    }

    pub fn table(interp: Interpolant, p: f64, zero_ok: bool, kinks: Vec<(f64, f64)>) -> Self {
        ContinuationFn {
            kind: ContinuationKind::Table(interp),
            p,
            zero_ok,
            kinks,
        }
    }

    /// Value, first and second derivative in savings.
    pub fn eval(&self, s: f64) -> Result<Eval> {
        match &self.kind {
            ContinuationKind::Linear(g) => Ok(Eval {
                v: g * s,
                d1: *g,
                d2: 0.0,
            }),
            ContinuationKind::Table(it) => {
                let e = it.eval(s / self.p)?;
                Ok(Eval {
                    v: self.p * e.v,
                    d1: e.d1,
                    d2: e.d2 / self.p,
                })
            }
        }
    }

    /// Zero savings leave a positive continuation value (labour income).
    pub fn zero_savings_feasible(&self) -> bool {
        self.zero_ok
    }

    pub fn smooth_at(&self, s: f64) -> bool {
        let x = s / self.p;
        !self.kinks.iter().any(|&(a, b)| x >= a && x <= b)
    }
}

/// `max_c f(c, v(w - c))`, allowing `c = w` when zero savings are feasible.
pub(crate) fn optimize_consumption(agg: &Aggregator, cont: &ContinuationFn, w: f64) -> Result<(f64, f64)> {
    let m = maximize_with_derivative(
        |c| Ok(agg.value(c, cont.eval(w - c)?.v)),
        |c| {
            let e = cont.eval(w - c)?;
            let p = agg.partials(c, e.v);
            Ok(p.fc - p.fv * e.d1)
        },
        0.0,
        w,
        ScanOptions {
            scan_points: 40,
            include_upper: cont.zero_savings_feasible(),
            reject_multimodal: false,
        },
    )?;
    Ok((m.x, m.value))
}
