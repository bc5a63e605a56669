//! Certainty equivalents over finite-support distributions of continuation
//! utility.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_GAMMA_TOL: f64 = 1e-10;

/// Curvature `phi` of a quasi-arithmetic mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Curvature {
    /// `phi(x) = (x^(1-gamma) - 1) / (1 - gamma)`, `log x` at `gamma = 1`.
    Crra { gamma: f64 },
    /// CRRA followed by the concave map `y -> (1 - exp(-k y)) / k`. Raises risk
    /// aversion without keeping the mean homogeneous.
    CrraExponential { gamma: f64, k: f64 },
}

fn is_log(gamma: f64) -> bool {
    (gamma - 1.0).abs() < UNIT_GAMMA_TOL
}

fn box_cox(gamma: f64, x: f64) -> f64 {
    if is_log(gamma) {
        x.ln()
    } else {
        (x.powf(1.0 - gamma) - 1.0) / (1.0 - gamma)
    }
}

fn box_cox_inv(gamma: f64, y: f64) -> f64 {
    if is_log(gamma) {
        y.exp()
    } else {
        (1.0 + (1.0 - gamma) * y).max(0.0).powf(1.0 / (1.0 - gamma))
    }
}

impl Curvature {
    pub fn crra(gamma: f64) -> Self {
        Curvature::Crra { gamma }
    }

    pub fn gamma(&self) -> f64 {
        match *self {
            Curvature::Crra { gamma } | Curvature::CrraExponential { gamma, .. } => gamma,
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        matches!(self, Curvature::Crra { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let gamma = self.gamma();
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::Domain(format!("risk curvature must be >= 0, got {gamma}")));
        }
        if let Curvature::CrraExponential { k, .. } = *self {
            if !(k > 0.0) || !k.is_finite() {
                return Err(Error::Domain(format!("exponential coefficient must be > 0, got {k}")));
            }
        }
        Ok(())
    }

    /// Whether `phi(0)` is finite.
    pub fn defined_at_zero(&self) -> bool {
        self.gamma() < 1.0 && !is_log(self.gamma())
    }

    pub fn phi(&self, x: f64) -> f64 {
        match *self {
            Curvature::Crra { gamma } => box_cox(gamma, x),
            Curvature::CrraExponential { gamma, k } => (1.0 - (-k * box_cox(gamma, x)).exp()) / k,
        }
    }

    pub fn phi_inv(&self, y: f64) -> f64 {
        match *self {
            Curvature::Crra { gamma } => box_cox_inv(gamma, y),
            Curvature::CrraExponential { gamma, k } => {
                let z = 1.0 - k * y;
                if z <= 0.0 {
                    f64::INFINITY
                } else {
                    box_cox_inv(gamma, -z.ln() / k)
                }
            }
        }
    }

    /// `phi^-1(E[phi(x)])`, clamped to the support range.
    pub fn mean(&self, values: &[f64], probs: &[f64]) -> Result<f64> {
        check_inputs(values, probs)?;
        let (lo, hi) = min_max(values);
        if lo == hi {
            return Ok(lo);
        }
        if lo == 0.0 && !self.defined_at_zero() {
            return Err(Error::Domain(format!(
                "zero continuation utility with risk curvature {} (phi undefined at 0)",
                self.gamma()
            )));
        }
        let m = match *self {
            Curvature::Crra { gamma } => power_mean(gamma, values, probs, hi),
            _ => {
                let e: f64 = values.iter().zip(probs).map(|(&x, &p)| p * self.phi(x)).sum();
                self.phi_inv(e)
            }
        };
        Ok(m.clamp(lo, hi))
    }
}

/// Power mean computed relative to the largest value to avoid overflow.
fn power_mean(gamma: f64, values: &[f64], probs: &[f64], hi: f64) -> f64 {
    if is_log(gamma) {
        let e: f64 = values.iter().zip(probs).map(|(&x, &p)| p * (x / hi).ln()).sum();
        hi * e.exp()
    } else {
        let q = 1.0 - gamma;
        let e: f64 = values
            .iter()
            .zip(probs)
            .map(|(&x, &p)| p * (x / hi).powf(q))
            .sum();
        hi * e.powf(1.0 / q)
    }
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn check_inputs(values: &[f64], probs: &[f64]) -> Result<()> {
    if values.len() != probs.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.len(),
            found: values.len(),
        });
    }
    if values.is_empty() {
        return Err(Error::Domain("empty utility vector".into()));
    }
    if let Some(x) = values.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::Domain(format!("utility values must be finite and >= 0, got {x}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CertaintyEquivalent {
    QuasiArithmetic {
        risk: Curvature,
    },
    /// Per-prior certainty equivalents averaged with ambiguity curvature.
    SmoothAmbiguity {
        risk: Curvature,
        ambiguity: Curvature,
        weights: Vec<f64>,
        priors: Vec<Vec<f64>>,
    },
    /// Worst case over a set of priors.
    MultiPrior {
        risk: Curvature,
        priors: Vec<Vec<f64>>,
    },
}

impl CertaintyEquivalent {
    pub fn crra(gamma: f64) -> Self {
        CertaintyEquivalent::QuasiArithmetic {
            risk: Curvature::crra(gamma),
        }
    }

    pub fn risk(&self) -> &Curvature {
        match self {
            CertaintyEquivalent::QuasiArithmetic { risk }
            | CertaintyEquivalent::SmoothAmbiguity { risk, .. }
            | CertaintyEquivalent::MultiPrior { risk, .. } => risk,
        }
    }

    /// Degree-one homogeneity (every layer CRRA).
    pub fn is_homogeneous(&self) -> bool {
        match self {
            CertaintyEquivalent::SmoothAmbiguity { risk, ambiguity, .. } => {
                risk.is_homogeneous() && ambiguity.is_homogeneous()
            }
            other => other.risk().is_homogeneous(),
        }
    }

    /// Plain CRRA expected utility.
    pub fn is_crra(&self) -> bool {
        matches!(self, CertaintyEquivalent::QuasiArithmetic { risk: Curvature::Crra { .. } })
    }

    /// Priors carried by the ambiguity variants.
    pub fn priors(&self) -> Option<&[Vec<f64>]> {
        match self {
            CertaintyEquivalent::QuasiArithmetic { .. } => None,
            CertaintyEquivalent::SmoothAmbiguity { priors, .. }
            | CertaintyEquivalent::MultiPrior { priors, .. } => Some(priors),
        }
    }

    /// Checks curvature parameters and that every prior is a distribution
    /// over `states` outcomes.
    pub fn validate(&self, states: usize) -> Result<()> {
        self.risk().validate()?;
        if let CertaintyEquivalent::SmoothAmbiguity { ambiguity, weights, priors, .. } = self {
            ambiguity.validate()?;
            if weights.len() != priors.len() {
                return Err(Error::DimensionMismatch {
                    expected: priors.len(),
                    found: weights.len(),
                });
            }
            check_distribution(weights, "prior weights")?;
        }
        if let Some(priors) = self.priors() {
            if priors.is_empty() {
                return Err(Error::Domain("ambiguity requires at least one prior".into()));
            }
            for prior in priors {
                if prior.len() != states {
                    return Err(Error::DimensionMismatch {
                        expected: states,
                        found: prior.len(),
                    });
                }
                check_distribution(prior, "prior")?;
            }
        }
        Ok(())
    }

    /// Evaluates the certainty equivalent. `probs` is the objective
    /// distribution; the ambiguity variants use their own priors instead.
    pub fn eval(&self, values: &[f64], probs: &[f64]) -> Result<f64> {
        match self {
            CertaintyEquivalent::QuasiArithmetic { risk } => risk.mean(values, probs),
            CertaintyEquivalent::SmoothAmbiguity {
                risk,
                ambiguity,
                weights,
                priors,
            } => {
                let inner = priors
                    .iter()
                    .map(|prior| risk.mean(values, prior))
                    .collect::<Result<Vec<_>>>()?;
                let (lo, hi) = min_max(values);
                Ok(ambiguity.mean(&inner, weights)?.clamp(lo, hi))
            }
            CertaintyEquivalent::MultiPrior { risk, priors } => {
                // phi is increasing, so the worst prior minimises the certainty
                // equivalent itself
                let mut worst = f64::INFINITY;
                for prior in priors {
                    worst = worst.min(risk.mean(values, prior)?);
                }
                Ok(worst)
            }
        }
    }
}

pub(crate) fn check_distribution(probs: &[f64], what: &str) -> Result<()> {
    if probs.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) {
        return Err(Error::Domain(format!("{what}: probabilities must lie in [0, 1]")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("{what}: probabilities sum to {total}, not 1")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crra_two_point_example() {
        let ce = CertaintyEquivalent::crra(2.0);
        let m = ce.eval(&[1.0, 2.0], &[0.5, 0.5]).unwrap();
        assert!((m - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_values_are_returned_exactly() {
        let curvatures = [
            Curvature::crra(0.0),
            Curvature::crra(1.0),
            Curvature::crra(7.5),
            Curvature::CrraExponential { gamma: 2.0, k: 0.7 },
        ];
        for risk in curvatures {
            for x in [0.0, 0.37, 12.0] {
                let ce = CertaintyEquivalent::QuasiArithmetic { risk: risk.clone() };
                assert_eq!(ce.eval(&[x, x, x], &[0.2, 0.3, 0.5]).unwrap(), x);
            }
        }
    }

    #[test]
    fn single_prior_multi_prior_is_quasi_arithmetic() {
        let probs = vec![0.1, 0.6, 0.3];
        let values = [0.4, 1.1, 2.5];
        let qa = CertaintyEquivalent::crra(3.0).eval(&values, &probs).unwrap();
        let mp = CertaintyEquivalent::MultiPrior {
            risk: Curvature::crra(3.0),
            priors: vec![probs.clone()],
        }
        .eval(&values, &[0.0; 3])
        .unwrap();
        assert_eq!(qa, mp);
    }

    #[test]
    fn log_branch_is_continuous() {
        let values = [0.5, 1.5, 3.0];
        let probs = [0.3, 0.3, 0.4];
        let at_one = Curvature::crra(1.0).mean(&values, &probs).unwrap();
        let near = Curvature::crra(1.0 + 1e-7).mean(&values, &probs).unwrap();
        assert!((at_one - near).abs() < 1e-6);
    }

    #[test]
    fn zero_value_with_log_curvature_is_a_domain_error() {
        let r = CertaintyEquivalent::crra(1.0).eval(&[0.0, 1.0], &[0.5, 0.5]);
        assert!(matches!(r, Err(Error::Domain(_))));
        let ok = CertaintyEquivalent::crra(0.5).eval(&[0.0, 1.0], &[0.5, 0.5]).unwrap();
        assert!((ok - 0.25).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_detected() {
        let r = CertaintyEquivalent::crra(2.0).eval(&[1.0], &[0.5, 0.5]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn exponential_composition_round_trips() {
        let c = Curvature::CrraExponential { gamma: 3.0, k: 0.4 };
        for x in [0.3, 1.0, 4.0] {
            assert!((c.phi_inv(c.phi(x)) - x).abs() < 1e-12 * x);
        }
    }

    #[test]
    fn smooth_ambiguity_with_equal_curvatures_collapses() {
        let priors = vec![vec![0.5, 0.5], vec![0.2, 0.8]];
        let weights = vec![0.25, 0.75];
        let values = [0.8, 1.6];
        let sa = CertaintyEquivalent::SmoothAmbiguity {
            risk: Curvature::crra(2.0),
            ambiguity: Curvature::crra(2.0),
            weights: weights.clone(),
            priors: priors.clone(),
        }
        .eval(&values, &[0.5, 0.5])
        .unwrap();
        let mixed: Vec<f64> = (0..2)
            .map(|s| weights[0] * priors[0][s] + weights[1] * priors[1][s])
            .collect();
        let qa = CertaintyEquivalent::crra(2.0).eval(&values, &mixed).unwrap();
        assert!((sa - qa).abs() < 1e-14);
    }
}
