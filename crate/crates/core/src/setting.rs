//! Problem descriptions: uncertainty, portfolios, preferences per period and
//! the optional labour-income and entrepreneur extensions.

use serde::{Deserialize, Serialize};

use crate::aggregator::Aggregator;
use crate::certainty::{check_distribution, CertaintyEquivalent};
use crate::error::{Error, Result};

const DOMINANCE_TOL: f64 = 1e-12;

/// Finite-support distribution of a positive scalar shock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let d = Distribution { values, probs };
        d.validate("distribution")?;
        Ok(d)
    }

    pub fn degenerate(x: f64) -> Self {
        Distribution {
            values: vec![x],
            probs: vec![1.0],
        }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if self.values.len() != self.probs.len() {
            return Err(Error::DimensionMismatch {
                expected: self.probs.len(),
                found: self.values.len(),
            });
        }
        if self.values.is_empty() {
            return Err(Error::InvalidSetting(format!("{what}: empty support")));
        }
        if self.probs.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::InvalidSetting(format!(
                "{what}: probabilities must lie in (0, 1]"
            )));
        }
        check_distribution(&self.probs, what)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(x, p)| x * p).sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.values
            .iter()
            .zip(&self.probs)
            .filter(|(v, _)| **v <= x)
            .map(|(_, p)| p)
            .sum()
    }

    /// `int_{-inf}^x F(t) dt`.
    pub fn integrated_cdf(&self, x: f64) -> f64 {
        self.values
            .iter()
            .zip(&self.probs)
            .map(|(v, p)| p * (x - v).max(0.0))
            .sum()
    }

    fn support_union(&self, other: &Distribution) -> Vec<f64> {
        let mut pts: Vec<f64> = self.values.iter().chain(&other.values).cloned().collect();
        pts.sort_by(|a, b| a.total_cmp(b));
        pts.dedup();
        pts
    }

    /// `self` first-order dominates `other`: `F_self <= F_other` everywhere.
    pub fn fosd_dominates(&self, other: &Distribution) -> bool {
        self.support_union(other)
            .iter()
            .all(|&x| self.cdf(x) <= other.cdf(x) + DOMINANCE_TOL)
    }

    /// `self` second-order dominates `other` with equal means (`other` is a
    /// mean-preserving spread of `self`).
    pub fn sosd_dominates(&self, other: &Distribution) -> bool {
        let scale = self.mean().abs().max(1.0);
        if (self.mean() - other.mean()).abs() > DOMINANCE_TOL * scale {
            return false;
        }
        self.support_union(other)
            .iter()
            .all(|&x| self.integrated_cdf(x) <= other.integrated_cdf(x) + DOMINANCE_TOL * scale)
    }

    pub fn scaled(&self, factor: f64) -> Distribution {
        Distribution {
            values: self.values.iter().map(|x| x * factor).collect(),
            probs: self.probs.clone(),
        }
    }

    /// Splits every atom `x` into `x ± s` with equal halves of its mass, where
    /// `s = sigma * x` truncated to keep outcomes strictly inside `(lo, hi)`.
    pub fn spread(&self, sigma: f64, lo: f64, hi: f64) -> Distribution {
        let mut values = Vec::with_capacity(2 * self.len());
        let mut probs = Vec::with_capacity(2 * self.len());
        for (&x, &p) in self.values.iter().zip(&self.probs) {
            let s = (sigma * x.abs()).min(0.999 * (x - lo)).min(0.999 * (hi - x)).max(0.0);
            values.push(x - s);
            values.push(x + s);
            probs.push(0.5 * p);
            probs.push(0.5 * p);
        }
        Distribution { values, probs }
    }
}

/// Next-period outcomes with strictly positive probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    pub probs: Vec<f64>,
}

impl StateSpace {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let s = StateSpace { probs };
        s.validate()?;
        Ok(s)
    }

    pub fn certain() -> Self {
        StateSpace { probs: vec![1.0] }
    }

    pub fn uniform(n: usize) -> Self {
        StateSpace {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.is_empty() {
            return Err(Error::InvalidSetting("empty state space".into()));
        }
        if self.probs.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::InvalidSetting(
                "state probabilities must lie in (0, 1]".into(),
            ));
        }
        check_distribution(&self.probs, "state space")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub name: String,
    /// Gross return in each state.
    pub returns: Vec<f64>,
}

impl Portfolio {
    pub fn new(name: impl Into<String>, returns: Vec<f64>) -> Self {
        Portfolio {
            name: name.into(),
            returns,
        }
    }

    pub fn riskless(name: impl Into<String>, gross: f64, states: usize) -> Self {
        Portfolio::new(name, vec![gross; states])
    }

    pub fn mean_return(&self, states: &StateSpace) -> f64 {
        self.returns.iter().zip(&states.probs).map(|(r, p)| r * p).sum()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Period {
    pub aggregator: Aggregator,
    pub ce: CertaintyEquivalent,
    pub states: StateSpace,
    pub portfolios: Vec<Portfolio>,
}

/// Terminal utility `u_T(c) = b_T c + intercept`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalUtility {
    /// One entry per final-period state, or a single constant.
    pub scale: Vec<f64>,
    pub intercept: f64,
}

impl TerminalUtility {
    pub fn linear(b: f64) -> Self {
        TerminalUtility {
            scale: vec![b],
            intercept: 0.0,
        }
    }

    pub fn scale_at(&self, state: usize) -> f64 {
        if self.scale.len() == 1 {
            self.scale[0]
        } else {
            self.scale[state]
        }
    }

    pub fn value(&self, state: usize, c: f64) -> f64 {
        self.scale_at(state) * c + self.intercept
    }

    pub fn is_linear(&self) -> bool {
        self.intercept == 0.0
    }
}

/// Permanent income `p` with transitory (`tau`) and permanent (`eta`) shocks:
/// income next period is `p * eta * tau`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncomeBlock {
    pub p0: f64,
    pub transitory: Distribution,
    pub permanent: Distribution,
}

impl IncomeBlock {
    pub fn validate(&self) -> Result<()> {
        if !(self.p0 >= 0.0) || !self.p0.is_finite() {
            return Err(Error::InvalidSetting(format!(
                "permanent income must be >= 0, got {}",
                self.p0
            )));
        }
        self.transitory.validate("transitory income shocks")?;
        self.permanent.validate("permanent income shocks")?;
        for (what, d) in [("transitory", &self.transitory), ("permanent", &self.permanent)] {
            if d.values.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidSetting(format!(
                    "{what} income shocks must be strictly positive"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Technology {
    /// `k^a l^(1-a)`.
    CobbDouglas { capital_exponent: f64 },
    /// `(w k^s + (1-w) l^s)^(1/s)` with `s < 1`, `s != 0`.
    Ces { capital_weight: f64, exponent: f64 },
}

impl Technology {
    pub fn output(&self, k: f64, l: f64) -> f64 {
        match *self {
            Technology::CobbDouglas { capital_exponent: a } => k.powf(a) * l.powf(1.0 - a),
            Technology::Ces {
                capital_weight: w,
                exponent: s,
            } => (w * k.powf(s) + (1.0 - w) * l.powf(s)).powf(1.0 / s),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Technology::CobbDouglas { capital_exponent: a } if a > 0.0 && a < 1.0 => Ok(()),
            Technology::Ces {
                capital_weight: w,
                exponent: s,
            } if w > 0.0 && w < 1.0 && s < 1.0 && s != 0.0 => Ok(()),
            _ => Err(Error::InvalidSetting(format!("invalid technology {self:?}"))),
        }
    }
}

/// Entrepreneur with a constant-returns firm financed by own funds and capped
/// default-free debt. The block is stationary and applies to every period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntrepreneurBlock {
    pub technology: Technology,
    pub productivity: Distribution,
    pub wage: Distribution,
    pub depreciation: Distribution,
    pub capital_price: f64,
    pub leverage_cap: f64,
    pub debt_rate: f64,
    pub tax: f64,
    /// Candidate fractions of savings placed in capital.
    pub capital_shares: Vec<f64>,
    /// Candidate fractions of the borrowing limit drawn.
    pub leverage_fractions: Vec<f64>,
}

impl EntrepreneurBlock {
    /// Largest depreciation outcome compatible with default-free debt.
    pub fn depreciation_bound(&self) -> f64 {
        1.0 - self.leverage_cap * (1.0 + self.debt_rate)
    }

    pub fn validate(&self) -> Result<()> {
        self.technology.validate()?;
        self.productivity.validate("productivity")?;
        self.wage.validate("wage")?;
        self.depreciation.validate("depreciation")?;
        if self.productivity.min() <= 0.0 || self.wage.min() <= 0.0 {
            return Err(Error::InvalidSetting(
                "productivity and wage outcomes must be positive".into(),
            ));
        }
        if !(self.capital_price > 0.0) {
            return Err(Error::InvalidSetting("capital price must be positive".into()));
        }
        if !(self.leverage_cap > 0.0 && self.leverage_cap < 1.0) {
            return Err(Error::InvalidSetting(format!(
                "leverage cap must lie in (0, 1), got {}",
                self.leverage_cap
            )));
        }
        if !(self.tax >= 0.0 && self.tax < 1.0) {
            return Err(Error::InvalidSetting(format!("tax must lie in [0, 1), got {}", self.tax)));
        }
        if self.depreciation.min() < 0.0 {
            return Err(Error::InvalidSetting("depreciation must be >= 0".into()));
        }
        for &d in &self.depreciation.values {
            let margin = self.capital_price * (1.0 - d)
                - self.leverage_cap * self.capital_price * (1.0 + self.debt_rate);
            if !(margin > 0.0) {
                return Err(Error::InvalidSetting(format!(
                    "default-free condition fails at depreciation {d} (margin {margin})"
                )));
            }
        }
        if self.capital_shares.is_empty() || self.leverage_fractions.is_empty() {
            return Err(Error::InvalidSetting(
                "entrepreneur needs candidate capital shares and leverage fractions".into(),
            ));
        }
        if self
            .capital_shares
            .iter()
            .chain(&self.leverage_fractions)
            .any(|x| !(*x >= 0.0 && *x <= 1.0))
        {
            return Err(Error::InvalidSetting(
                "capital shares and leverage fractions must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Setting {
    /// Decision periods `0..T`; period `t` carries the returns realised at `t+1`.
    pub periods: Vec<Period>,
    pub terminal: TerminalUtility,
    pub income: Option<IncomeBlock>,
    pub entrepreneur: Option<EntrepreneurBlock>,
}

impl Setting {
    /// Same period repeated `horizon` times.
    pub fn stationary(horizon: usize, period: Period, terminal: TerminalUtility) -> Self {
        Setting {
            periods: vec![period; horizon],
            terminal,
            income: None,
            entrepreneur: None,
        }
    }

    pub fn horizon(&self) -> usize {
        self.periods.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.periods.is_empty() {
            return Err(Error::InvalidSetting("horizon must be at least 1".into()));
        }
        for (t, period) in self.periods.iter().enumerate() {
            let ctx = |e: Error| Error::InvalidSetting(format!("period {t}: {e}"));
            period.states.validate().map_err(ctx)?;
            period.ce.validate(period.states.len()).map_err(ctx)?;
            if period.portfolios.is_empty() {
                return Err(Error::InvalidSetting(format!("period {t}: no portfolios")));
            }
            for p in &period.portfolios {
                if p.returns.len() != period.states.len() {
                    return Err(Error::DimensionMismatch {
                        expected: period.states.len(),
                        found: p.returns.len(),
                    });
                }
                if p.returns.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
                    return Err(Error::InvalidSetting(format!(
                        "period {t}: portfolio `{}` has a non-positive or unbounded return",
                        p.name
                    )));
                }
            }
        }
        let last = self.periods.last().unwrap().states.len();
        if self.terminal.scale.len() != 1 && self.terminal.scale.len() != last {
            return Err(Error::DimensionMismatch {
                expected: last,
                found: self.terminal.scale.len(),
            });
        }
        if self.terminal.scale.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::InvalidSetting("terminal scale must be positive".into()));
        }
        if let Some(income) = &self.income {
            income.validate()?;
        }
        if let Some(ent) = &self.entrepreneur {
            ent.validate()?;
            if self.income.is_some() {
                return Err(Error::InvalidSetting(
                    "income and entrepreneur blocks cannot be combined".into(),
                ));
            }
            if self.periods.iter().any(|p| !p.ce.is_crra()) {
                return Err(Error::InvalidSetting(
                    "entrepreneur settings require CRRA certainty equivalents".into(),
                ));
            }
        }
        Ok(())
    }

    /// Linear value functions are guaranteed: degree-one aggregators and
    /// certainty equivalents, linear terminal utility, no labour income.
    pub fn is_homothetic(&self) -> bool {
        self.income.is_none()
            && self.terminal.is_linear()
            && self
                .periods
                .iter()
                .all(|p| p.aggregator.is_homogeneous() && p.ce.is_homogeneous())
    }

    /// Folds the entrepreneur block into ordinary portfolios over the joint
    /// state space. Settings without the block are returned unchanged.
    pub fn reduced(&self) -> Result<Setting> {
        match &self.entrepreneur {
            None => Ok(self.clone()),
            Some(block) => crate::shocks::entrepreneur::reduce_setting(self, block),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(values: &[f64], probs: &[f64]) -> Distribution {
        Distribution::new(values.to_vec(), probs.to_vec()).unwrap()
    }

    #[test]
    fn downshift_is_fosd_dominated() {
        let base = d(&[0.9, 1.1], &[0.5, 0.5]);
        assert!(base.fosd_dominates(&base.scaled(0.95)));
        assert!(!base.scaled(0.95).fosd_dominates(&base));
    }

    #[test]
    fn spread_preserves_mean_and_is_riskier() {
        let base = d(&[0.8, 1.0, 1.3], &[0.2, 0.5, 0.3]);
        let wide = base.spread(0.1, 0.0, f64::INFINITY);
        assert!((wide.mean() - base.mean()).abs() < 1e-12);
        assert!(base.sosd_dominates(&wide));
        assert!(!wide.sosd_dominates(&base) || wide == base);
    }

    #[test]
    fn spread_respects_bounds() {
        let base = d(&[0.05], &[1.0]);
        let wide = base.spread(2.0, 0.0, 0.08);
        assert!(wide.min() > 0.0 && wide.max() < 0.08);
        assert!((wide.mean() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn state_space_rejects_zero_probability() {
        assert!(StateSpace::new(vec![0.0, 1.0]).is_err());
        assert!(StateSpace::new(vec![0.3, 0.7]).is_ok());
        assert!(StateSpace::new(vec![0.3, 0.6]).is_err());
    }
}
