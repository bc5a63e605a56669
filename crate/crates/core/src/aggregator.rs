//! Intertemporal aggregators `f(c, v)` combining current consumption with the
//! certainty equivalent of continuation utility.

use std::fmt;
use std::sync::Arc;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Threshold under which an EIS parameter is treated as exactly one.
pub const UNIT_EIS_TOL: f64 = 1e-10;

/// Value and partial derivatives of an aggregator up to second order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Partials {
    pub f: f64,
    pub fc: f64,
    pub fv: f64,
    pub fcc: f64,
    pub fcv: f64,
    pub fvv: f64,
}

/// A user supplied aggregator. Partials must be analytic.
pub trait CustomAggregator: Send + Sync + fmt::Debug {
    /// Stable identifier, used when hashing settings.
    fn name(&self) -> String;
    fn value(&self, c: f64, v: f64) -> f64;
    fn partials(&self, c: f64, v: f64) -> Partials;
    fn homogeneous_degree_one(&self) -> bool;
    fn inada(&self) -> bool;
}

#[derive(Clone, Debug)]
pub enum Aggregator {
    /// CES aggregator with discount factor `beta` and EIS `psi`.
    EpsteinZin { beta: f64, psi: f64 },
    /// The unit-EIS limit `c^(1-beta) v^beta`.
    CobbDouglas { beta: f64 },
    Custom(Arc<dyn CustomAggregator>),
}

impl Aggregator {
    pub fn epstein_zin(beta: f64, psi: f64) -> Result<Self> {
        check_beta(beta)?;
        if !(psi > 0.0) || !psi.is_finite() {
            return Err(Error::Domain(format!("EIS parameter must be positive, got {psi}")));
        }
        Ok(Aggregator::EpsteinZin { beta, psi })
    }

    pub fn cobb_douglas(beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Aggregator::CobbDouglas { beta })
    }

    pub fn custom(handle: impl CustomAggregator + 'static) -> Self {
        Aggregator::Custom(Arc::new(handle))
    }

    /// CES exponent `1 - 1/psi`, `None` for the Cobb-Douglas case.
    fn ces_exponent(&self) -> Option<(f64, f64)> {
        match *self {
            Aggregator::EpsteinZin { beta, psi } if (psi - 1.0).abs() >= UNIT_EIS_TOL => {
                Some((beta, 1.0 - 1.0 / psi))
            }
            _ => None,
        }
    }

    fn discount(&self) -> Option<f64> {
        match *self {
            Aggregator::EpsteinZin { beta, .. } | Aggregator::CobbDouglas { beta } => Some(beta),
            Aggregator::Custom(_) => None,
        }
    }

    pub fn value(&self, c: f64, v: f64) -> f64 {
        if let Aggregator::Custom(h) = self {
            return h.value(c, v);
        }
        let beta = self.discount().unwrap();
        match self.ces_exponent() {
            Some((_, rho)) => ces_value(beta, rho, c, v),
            None => {
                if c == 0.0 || v == 0.0 {
                    0.0
                } else {
                    c.powf(1.0 - beta) * v.powf(beta)
                }
            }
        }
    }

    pub fn partials(&self, c: f64, v: f64) -> Partials {
        if let Aggregator::Custom(h) = self {
            return h.partials(c, v);
        }
        let beta = self.discount().unwrap();
        let (f, fc, fv, one_minus_rho) = match self.ces_exponent() {
            Some((_, rho)) => {
                let f = ces_value(beta, rho, c, v);
                let scale = f.powf(1.0 - rho);
                (
                    f,
                    (1.0 - beta) * c.powf(rho - 1.0) * scale,
                    beta * v.powf(rho - 1.0) * scale,
                    1.0 - rho,
                )
            }
            None => {
                let f = c.powf(1.0 - beta) * v.powf(beta);
                (f, (1.0 - beta) * f / c, beta * f / v, 1.0)
            }
        };
        Partials {
            f,
            fc,
            fv,
            fcc: one_minus_rho * fc * (fc / f - 1.0 / c),
            fcv: one_minus_rho * fc * fv / f,
            fvv: one_minus_rho * fv * (fv / f - 1.0 / v),
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        match self {
            Aggregator::Custom(h) => h.homogeneous_degree_one(),
            _ => true,
        }
    }

    pub fn has_inada(&self) -> bool {
        match self {
            Aggregator::Custom(h) => h.inada(),
            _ => true,
        }
    }

    /// EIS parameter for the built-in families.
    pub fn psi_parameter(&self) -> Option<f64> {
        match *self {
            Aggregator::EpsteinZin { psi, .. } => Some(psi),
            Aggregator::CobbDouglas { .. } => Some(1.0),
            Aggregator::Custom(_) => None,
        }
    }

    /// Elasticity of substitution between `c` and `v` at a point. Exact for
    /// the built-in families, otherwise traced along the indifference curve.
    pub fn eis_at(&self, c: f64, v: f64) -> Result<f64> {
        match self.psi_parameter() {
            Some(psi) => Ok(psi),
            None => indifference_eis(self, c, v, 1e-4),
        }
    }

    /// Sampled check of monotonicity and, for homogeneous aggregators, of
    /// degree-one homogeneity and the Euler identity.
    pub fn check_invariants(&self) -> Result<()> {
        const PTS: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 7.0];
        for &c in &PTS {
            for &v in &PTS {
                let p = self.partials(c, v);
                if !(p.fc > 0.0 && p.fv > 0.0) {
                    return Err(Error::Domain(format!(
                        "aggregator not strictly increasing at ({c}, {v})"
                    )));
                }
                if self.is_homogeneous() {
                    for &lambda in &[0.3, 2.5] {
                        let lhs = self.value(lambda * c, lambda * v);
                        let rhs = lambda * p.f;
                        if (lhs - rhs).abs() > 1e-10 * rhs.abs() {
                            return Err(Error::Domain(format!(
                                "aggregator flagged homogeneous fails scaling at ({c}, {v})"
                            )));
                        }
                    }
                    let euler = c * p.fc + v * p.fv;
                    if (euler - p.f).abs() > 1e-8 * p.f.abs() {
                        return Err(Error::Domain(format!(
                            "Euler identity fails at ({c}, {v}): {euler} vs {}",
                            p.f
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("discount factor must lie in (0, 1), got {beta}")))
    }
}

fn ces_value(beta: f64, rho: f64, c: f64, v: f64) -> f64 {
    if rho < 0.0 && (c == 0.0 || v == 0.0) {
        return 0.0;
    }
    ((1.0 - beta) * c.powf(rho) + beta * v.powf(rho)).powf(1.0 / rho)
}

/// Elasticity of substitution from the indifference curve through `(c, v)`:
/// perturbs `s = log(f_c / f_v)` by `±h`, solves for the point on the same
/// indifference curve with that slope, and differentiates `log(c / v)`.
pub fn indifference_eis(agg: &Aggregator, c: f64, v: f64, h: f64) -> Result<f64> {
    let p = agg.partials(c, v);
    let s0 = (p.fc / p.fv).ln();
    let target = p.f;
    let up = solve_on_indifference(agg, c, v, target, s0 + h)?;
    let down = solve_on_indifference(agg, c, v, target, s0 - h)?;
    Ok(-(up - down) / (2.0 * h))
}

/// Newton iteration in `(log c, log v)`; returns `log(c / v)` at the solution.
fn solve_on_indifference(agg: &Aggregator, c0: f64, v0: f64, target: f64, slope: f64) -> Result<f64> {
    let (mut x, mut y) = (c0.ln(), v0.ln());
    let mut last = f64::INFINITY;
    for _ in 0..60 {
        let (c, v) = (x.exp(), y.exp());
        let p = agg.partials(c, v);
        let r1 = p.f / target - 1.0;
        let r2 = (p.fc / p.fv).ln() - slope;
        let norm = r1.abs().max(r2.abs());
        // near psi = 1 the value carries a 1/rho amplification of rounding,
        // so the residual floor can sit above the strict threshold; stop
        // once Newton no longer improves a residual that is already small
        if norm < 1e-15 || (norm < 1e-12 && norm >= 0.5 * last) {
            return Ok(x - y);
        }
        last = norm;
        let j11 = p.fc * c / target;
        let j12 = p.fv * v / target;
        let j21 = c * (p.fcc / p.fc - p.fcv / p.fv);
        let j22 = v * (p.fcv / p.fc - p.fvv / p.fv);
        let det = j11 * j22 - j12 * j21;
        if !det.is_finite() || det.abs() < 1e-300 {
            return Err(Error::Singular(format!(
                "indifference-curve system at ({c}, {v}); aggregator not strictly quasi-concave"
            )));
        }
        let dx = (r1 * j22 - r2 * j12) / det;
        let dy = (j11 * r2 - j21 * r1) / det;
        x -= dx;
        y -= dy;
        if !x.is_finite() || !y.is_finite() {
            break;
        }
    }
    Err(Error::NonConvergence {
        what: "indifference-curve Newton",
        residual: last,
    })
}

/// `f(c / scale, v)` with `scale >= 1`: future consumption expenditure buys
/// less utility.
#[derive(Debug)]
pub struct ScaledConsumption {
    pub inner: Aggregator,
    pub scale: f64,
}

impl CustomAggregator for ScaledConsumption {
    fn name(&self) -> String {
        format!("scaled-consumption({}, {:?})", self.scale, self.inner.describe())
    }

    fn value(&self, c: f64, v: f64) -> f64 {
        self.inner.value(c / self.scale, v)
    }

    fn partials(&self, c: f64, v: f64) -> Partials {
        let k = self.scale;
        let p = self.inner.partials(c / k, v);
        Partials {
            f: p.f,
            fc: p.fc / k,
            fv: p.fv,
            fcc: p.fcc / (k * k),
            fcv: p.fcv / k,
            fvv: p.fvv,
        }
    }

    fn homogeneous_degree_one(&self) -> bool {
        self.inner.is_homogeneous()
    }

    fn inada(&self) -> bool {
        self.inner.has_inada()
    }
}

#[derive(Serialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
enum AggregatorRepr {
    EpsteinZin { beta: f64, psi: f64 },
    CobbDouglas { beta: f64 },
    Custom { name: String },
}

impl Aggregator {
    fn repr(&self) -> AggregatorRepr {
        match self {
            Aggregator::EpsteinZin { beta, psi } => AggregatorRepr::EpsteinZin {
                beta: *beta,
                psi: *psi,
            },
            Aggregator::CobbDouglas { beta } => AggregatorRepr::CobbDouglas { beta: *beta },
            Aggregator::Custom(h) => AggregatorRepr::Custom { name: h.name() },
        }
    }

    /// Short human-readable description.
    pub fn describe(&self) -> String {
        serde_json::to_string(&self.repr()).unwrap_or_default()
    }
}

impl Serialize for Aggregator {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.repr().serialize(serializer)
    }
}
