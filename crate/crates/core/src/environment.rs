//! One-period reductions `(f, v(., alpha))`: an aggregator and a continuation
//! value in savings that depends on a shock parameter `alpha`.
//!
//! Convention: `v` is increasing in `alpha`. Paths built from a shocked and a
//! baseline solution put the shocked setting at `alpha = 0` and the baseline
//! at `alpha = 1`.

use crate::aggregator::Aggregator;
use crate::error::{Error, Result};
use crate::numerics::{bisect, maximize_with_derivative, ScanOptions};
use crate::solver::ContinuationFn;

/// Continuation value and its derivatives at `(savings, alpha)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuationPoint {
    pub v: f64,
    pub v_w: f64,
    pub v_ww: f64,
    pub v_a: f64,
    pub v_wa: f64,
}

pub trait Environment: Send + Sync {
    fn aggregator(&self) -> &Aggregator;

    fn continuation(&self, savings: f64, alpha: f64) -> Result<ContinuationPoint>;

    fn alpha_range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    /// Lower bound on savings; consumption ranges over `(0, w - min_savings)`.
    fn min_savings(&self, _alpha: f64) -> f64 {
        0.0
    }

    /// Whether consumption may equal wealth (zero savings is feasible with a
    /// positive continuation value).
    fn allows_corner(&self) -> bool {
        false
    }

    /// `(g, g_alpha)` when `v(s, alpha) = g(alpha) s` exactly.
    fn homothetic_scale(&self, _alpha: f64) -> Option<(f64, f64)> {
        None
    }

    /// False near nodes where the tabulated continuation value has a kink.
    fn smooth_at(&self, _savings: f64, _alpha: f64) -> bool {
        true
    }
}

fn check_alpha(alpha: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if alpha >= lo && alpha <= hi {
        Ok(())
    } else {
        Err(Error::AlphaOutOfRange { alpha, lo, hi })
    }
}

/// Optimal consumption at wealth `w`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Optimum {
    pub c: f64,
    pub savings: f64,
    pub value: f64,
    pub corner: bool,
}

pub fn optimal_consumption<E: Environment + ?Sized>(env: &E, w: f64, alpha: f64) -> Result<Optimum> {
    let agg = env.aggregator();
    let hi = w - env.min_savings(alpha);
    if !(hi > 0.0) {
        return Err(Error::InvalidProblem(format!("no feasible consumption at wealth {w}")));
    }
    let corner_ok = env.allows_corner() && env.min_savings(alpha) == 0.0;
    let m = maximize_with_derivative(
        |c| Ok(agg.value(c, env.continuation(w - c, alpha)?.v)),
        |c| {
            let k = env.continuation(w - c, alpha)?;
            let p = agg.partials(c, k.v);
            Ok(p.fc - p.fv * k.v_w)
        },
        0.0,
        hi,
        ScanOptions {
            scan_points: 32,
            include_upper: corner_ok,
            reject_multimodal: false,
        },
    )?;
    let lo = env.min_savings(alpha);
    let s0 = w - m.x;
    if !m.upper_corner && s0 - lo < m.x {
        if let Some(s) = refine_savings(env, w, alpha, s0, lo) {
            let value = agg.value(w - s, env.continuation(s, alpha)?.v);
            if value >= m.value {
                return Ok(Optimum {
                    c: w - s,
                    savings: s,
                    value,
                    corner: false,
                });
            }
        }
    }
    Ok(Optimum {
        c: m.x,
        savings: s0,
        value: m.value,
        corner: m.upper_corner,
    })
}

/// Re-solves the first-order condition in the savings variable when savings
/// are the smaller side of the budget, so they carry full relative precision
/// instead of the absolute precision of `w - c`.
fn refine_savings<E: Environment + ?Sized>(env: &E, w: f64, alpha: f64, s0: f64, lo: f64) -> Option<f64> {
    let agg = env.aggregator();
    // positive when consumption should rise, i.e. savings fall
    let g = |s: f64| -> Result<f64> {
        let k = env.continuation(s, alpha)?;
        let p = agg.partials(w - s, k.v);
        Ok(p.fc - p.fv * k.v_w)
    };
    let mut d = 16.0 * f64::EPSILON * w.abs().max(s0.abs());
    for i in 0..80 {
        let a = if s0 - d > lo { s0 - d } else { lo + (s0 - lo) * 0.5f64.powi(i + 1) };
        let b = (s0 + d).min(0.5 * (s0 + w));
        if !(a > lo && a < b) {
            return None;
        }
        let (ga, gb) = (g(a).ok()?, g(b).ok()?);
        if ga < 0.0 && gb > 0.0 {
            return bisect(|s| g(s).map(|x| if x.is_nan() { 0.0 } else { x }), a, b).ok();
        }
        d *= 4.0;
    }
    None
}

/// `v(s, alpha) = g(alpha) s` with `g` exponential or affine in `alpha`.
#[derive(Clone, Debug)]
pub struct LinearEnvironment {
    pub aggregator: Aggregator,
    pub scale: LinearScale,
}

#[derive(Clone, Copy, Debug)]
pub enum LinearScale {
    /// `g0 exp(k alpha)`.
    Exponential { g0: f64, k: f64 },
    /// `(1 - alpha) g_shocked + alpha g_base`.
    Path { g_shocked: f64, g_base: f64 },
}

impl LinearScale {
    fn eval(&self, alpha: f64) -> (f64, f64) {
        match *self {
            LinearScale::Exponential { g0, k } => {
                let g = g0 * (k * alpha).exp();
                (g, k * g)
            }
            LinearScale::Path { g_shocked, g_base } => (
                (1.0 - alpha) * g_shocked + alpha * g_base,
                g_base - g_shocked,
            ),
        }
    }
}

impl Environment for LinearEnvironment {
    fn aggregator(&self) -> &Aggregator {
        &self.aggregator
    }

    fn continuation(&self, s: f64, alpha: f64) -> Result<ContinuationPoint> {
        if let LinearScale::Path { .. } = self.scale {
            check_alpha(alpha, (0.0, 1.0))?;
        }
        let (g, ga) = self.scale.eval(alpha);
        Ok(ContinuationPoint {
            v: g * s,
            v_w: g,
            v_ww: 0.0,
            v_a: ga * s,
            v_wa: ga,
        })
    }

    fn alpha_range(&self) -> (f64, f64) {
        match self.scale {
            LinearScale::Path { .. } => (0.0, 1.0),
            LinearScale::Exponential { .. } => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    fn homothetic_scale(&self, alpha: f64) -> Option<(f64, f64)> {
        Some(self.scale.eval(alpha))
    }
}

/// `v(s, alpha) = g0 exp(k alpha) s^kappa + m0 + m1 alpha`, concave in `s`
/// for `kappa <= 1`.
#[derive(Clone, Debug)]
pub struct PowerEnvironment {
    pub aggregator: Aggregator,
    pub g0: f64,
    pub k: f64,
    pub kappa: f64,
    pub m0: f64,
    pub m1: f64,
}

impl Environment for PowerEnvironment {
    fn aggregator(&self) -> &Aggregator {
        &self.aggregator
    }

    fn continuation(&self, s: f64, alpha: f64) -> Result<ContinuationPoint> {
        if !(s > 0.0) {
            return Err(Error::Domain(format!("savings must be positive, got {s}")));
        }
        let g = self.g0 * (self.k * alpha).exp();
        let sk = s.powf(self.kappa);
        Ok(ContinuationPoint {
            v: g * sk + self.m0 + self.m1 * alpha,
            v_w: g * self.kappa * sk / s,
            v_ww: g * self.kappa * (self.kappa - 1.0) * sk / (s * s),
            v_a: self.k * g * sk + self.m1,
            v_wa: self.k * g * self.kappa * sk / s,
        })
    }

    fn alpha_range(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    fn homothetic_scale(&self, alpha: f64) -> Option<(f64, f64)> {
        if self.kappa == 1.0 && self.m0 == 0.0 && self.m1 == 0.0 && self.aggregator.is_homogeneous() {
            let g = self.g0 * (self.k * alpha).exp();
            Some((g, self.k * g))
        } else {
            None
        }
    }
}

/// Which parameter of the two-period problem plays the role of `alpha`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TwoPeriodShift {
    Rate,
    Scale,
}

/// Two-period continuation `v(s) = rho (Rf s + e2)`; `alpha` is `Rf` or `rho`.
#[derive(Clone, Debug)]
pub struct TwoPeriodEnvironment {
    pub aggregator: Aggregator,
    pub e2: f64,
    pub rf: f64,
    pub rho: f64,
    pub shift: TwoPeriodShift,
}

impl TwoPeriodEnvironment {
    fn params(&self, alpha: f64) -> (f64, f64) {
        match self.shift {
            TwoPeriodShift::Rate => (alpha, self.rho),
            TwoPeriodShift::Scale => (self.rf, alpha),
        }
    }

    /// Current value of the shifted parameter.
    pub fn alpha(&self) -> f64 {
        match self.shift {
            TwoPeriodShift::Rate => self.rf,
            TwoPeriodShift::Scale => self.rho,
        }
    }
}

impl Environment for TwoPeriodEnvironment {
    fn aggregator(&self) -> &Aggregator {
        &self.aggregator
    }

    fn continuation(&self, s: f64, alpha: f64) -> Result<ContinuationPoint> {
        check_alpha(alpha, self.alpha_range())?;
        let (rf, rho) = self.params(alpha);
        let (v_a, v_wa) = match self.shift {
            TwoPeriodShift::Rate => (rho * s, rho),
            TwoPeriodShift::Scale => (rf * s + self.e2, rf),
        };
        Ok(ContinuationPoint {
            v: rho * (rf * s + self.e2),
            v_w: rho * rf,
            v_ww: 0.0,
            v_a,
            v_wa,
        })
    }

    fn alpha_range(&self) -> (f64, f64) {
        (f64::MIN_POSITIVE, f64::INFINITY)
    }

    fn min_savings(&self, alpha: f64) -> f64 {
        -self.e2 / self.params(alpha).0
    }

    fn homothetic_scale(&self, alpha: f64) -> Option<(f64, f64)> {
        if self.e2 != 0.0 || !self.aggregator.is_homogeneous() {
            return None;
        }
        let (rf, rho) = self.params(alpha);
        Some(match self.shift {
            TwoPeriodShift::Rate => (rho * rf, rho),
            TwoPeriodShift::Scale => (rho * rf, rf),
        })
    }
}

/// Convex combination of a shocked (`alpha = 0`) and a baseline (`alpha = 1`)
/// tabulated continuation value.
#[derive(Clone, Debug)]
pub struct PathEnvironment {
    pub aggregator: Aggregator,
    pub shocked: ContinuationFn,
    pub baseline: ContinuationFn,
}

impl Environment for PathEnvironment {
    fn aggregator(&self) -> &Aggregator {
        &self.aggregator
    }

    fn continuation(&self, s: f64, alpha: f64) -> Result<ContinuationPoint> {
        check_alpha(alpha, (0.0, 1.0))?;
        let a = self.shocked.eval(s)?;
        let b = self.baseline.eval(s)?;
        Ok(ContinuationPoint {
            v: (1.0 - alpha) * a.v + alpha * b.v,
            v_w: (1.0 - alpha) * a.d1 + alpha * b.d1,
            v_ww: (1.0 - alpha) * a.d2 + alpha * b.d2,
            v_a: b.v - a.v,
            v_wa: b.d1 - a.d1,
        })
    }

    fn allows_corner(&self) -> bool {
        self.shocked.zero_savings_feasible() && self.baseline.zero_savings_feasible()
    }

    fn smooth_at(&self, s: f64, _alpha: f64) -> bool {
        self.shocked.smooth_at(s) && self.baseline.smooth_at(s)
    }
}
