//! The fifteen comparative-statics shocks, each lowering the continuation
//! value, and the checks that they do.

pub mod entrepreneur;

use serde::{Deserialize, Serialize};

use crate::aggregator::{Aggregator, ScaledConsumption};
use crate::certainty::{CertaintyEquivalent, Curvature};
use crate::environment::{Environment, PathEnvironment};
use crate::error::{Error, Result};
use crate::grid::WealthGrid;
use crate::numerics::central_diff;
use crate::parallel::Execution;
use crate::regularity::Status;
use crate::setting::{Distribution, Portfolio, Setting};
use crate::solver::{default_tensor_span, solve_backward_with, solve_homothetic, Layout, SolveOptions, Solution};
use crate::statics::remv_at;

/// Which income shock a constructor acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncomeComponent {
    Transitory,
    Permanent,
}

/// How risk aversion is raised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskTransform {
    /// `gamma += magnitude`; keeps the certainty equivalent homogeneous.
    #[default]
    Gamma,
    /// Composes `phi` with `y -> (1 - exp(-k y)) / k`, `k = magnitude`.
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ShockKind {
    ConcavifyRisk {
        #[serde(default)]
        transform: RiskTransform,
    },
    /// Keeps the listed portfolios, or drops the last `ceil(m (n - 1))`.
    ShrinkPortfolios {
        #[serde(default)]
        keep: Option<Vec<usize>>,
    },
    FosdReturns,
    SosdReturns,
    DevalueConsumption,
    ConcavifyAmbiguity,
    EnlargePriors,
    FosdIncome { component: IncomeComponent },
    ShrinkHedging {
        #[serde(default)]
        keep: Option<Vec<usize>>,
    },
    SosdIncome { component: IncomeComponent },
    FosdProductivity,
    FosdWageUp,
    FosdDepreciationUp,
    SosdDepreciation,
    TaxUp,
}

impl ShockKind {
    /// Label `cs1` .. `cs15`.
    pub fn label(&self) -> &'static str {
        match self {
            ShockKind::ConcavifyRisk { .. } => "cs1",
            ShockKind::ShrinkPortfolios { .. } => "cs2",
            ShockKind::FosdReturns => "cs3",
            ShockKind::SosdReturns => "cs4",
            ShockKind::DevalueConsumption => "cs5",
            ShockKind::ConcavifyAmbiguity => "cs6",
            ShockKind::EnlargePriors => "cs7",
            ShockKind::FosdIncome { .. } => "cs8",
            ShockKind::ShrinkHedging { .. } => "cs9",
            ShockKind::SosdIncome { .. } => "cs10",
            ShockKind::FosdProductivity => "cs11",
            ShockKind::FosdWageUp => "cs12",
            ShockKind::FosdDepreciationUp => "cs13",
            ShockKind::SosdDepreciation => "cs14",
            ShockKind::TaxUp => "cs15",
        }
    }

    /// Parses `cs1` .. `cs15` with default options.
    pub fn from_label(label: &str) -> Result<Self> {
        let income = IncomeComponent::Transitory;
        Ok(match label {
            "cs1" => ShockKind::ConcavifyRisk {
                transform: RiskTransform::Gamma,
            },
            "cs2" => ShockKind::ShrinkPortfolios { keep: None },
            "cs3" => ShockKind::FosdReturns,
            "cs4" => ShockKind::SosdReturns,
            "cs5" => ShockKind::DevalueConsumption,
            "cs6" => ShockKind::ConcavifyAmbiguity,
            "cs7" => ShockKind::EnlargePriors,
            "cs8" => ShockKind::FosdIncome { component: income },
            "cs9" => ShockKind::ShrinkHedging { keep: None },
            "cs10" => ShockKind::SosdIncome { component: income },
            "cs11" => ShockKind::FosdProductivity,
            "cs12" => ShockKind::FosdWageUp,
            "cs13" => ShockKind::FosdDepreciationUp,
            "cs14" => ShockKind::SosdDepreciation,
            "cs15" => ShockKind::TaxUp,
            other => return Err(Error::InvalidSetting(format!("unknown shock `{other}`"))),
        })
    }

    /// Second-order shocks, whose effect relies on concave value functions.
    pub fn needs_concavity(&self) -> bool {
        matches!(
            self,
            ShockKind::SosdReturns | ShockKind::SosdIncome { .. } | ShockKind::SosdDepreciation
        )
    }

    fn acts_on_blocks(&self) -> bool {
        matches!(
            self,
            ShockKind::FosdIncome { .. }
                | ShockKind::SosdIncome { .. }
                | ShockKind::FosdProductivity
                | ShockKind::FosdWageUp
                | ShockKind::FosdDepreciationUp
                | ShockKind::SosdDepreciation
                | ShockKind::TaxUp
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shock {
    #[serde(flatten)]
    pub kind: ShockKind,
    /// Size of the change; zero is the identity for every kind.
    pub magnitude: f64,
    /// Affected periods. Defaults to every period, except for devalued
    /// consumption which defaults to `t >= 1` (it acts through next period's
    /// aggregator). Income and entrepreneur blocks are stationary and always
    /// shocked in every period.
    #[serde(default)]
    pub periods: Option<Vec<usize>>,
}

impl Shock {
    pub fn new(kind: ShockKind, magnitude: f64) -> Self {
        Shock {
            kind,
            magnitude,
            periods: None,
        }
    }

    fn affected(&self, horizon: usize) -> Result<Vec<usize>> {
        match &self.periods {
            Some(list) => {
                if self.kind.acts_on_blocks() {
                    return Err(Error::Incompatible(format!(
                        "{} shocks a stationary block and cannot be restricted to periods",
                        self.kind.label()
                    )));
                }
                if let Some(t) = list.iter().find(|&&t| t >= horizon) {
                    return Err(Error::Incompatible(format!("period {t} beyond horizon {horizon}")));
                }
                Ok(list.clone())
            }
            None if self.kind == ShockKind::DevalueConsumption => Ok((1..horizon).collect()),
            None => Ok((0..horizon).collect()),
        }
    }
}

fn incompatible(label: &str, why: &str) -> Error {
    Error::Incompatible(format!("{label}: {why}"))
}

fn state_distribution(returns: &[f64], probs: &[f64]) -> Distribution {
    Distribution {
        values: returns.to_vec(),
        probs: probs.to_vec(),
    }
}

fn shrink(portfolios: &[Portfolio], keep: &Option<Vec<usize>>, m: f64, label: &str) -> Result<Vec<Portfolio>> {
    let n = portfolios.len();
    let kept: Vec<usize> = match keep {
        Some(list) => {
            let mut list = list.clone();
            list.sort_unstable();
            list.dedup();
            if list.iter().any(|&i| i >= n) {
                return Err(incompatible(label, "kept portfolio index out of range"));
            }
            list
        }
        None => {
            if !(0.0..=1.0).contains(&m) {
                return Err(incompatible(label, "magnitude must lie in [0, 1]"));
            }
            let drop = (m * (n as f64 - 1.0)).ceil() as usize;
            (0..n - drop.min(n - 1)).collect()
        }
    };
    if kept.is_empty() {
        return Err(incompatible(label, "cannot remove every portfolio"));
    }
    if keep.is_some() && kept.len() == n {
        return Err(incompatible(label, "the kept set must be a strict subset"));
    }
    Ok(kept.into_iter().map(|i| portfolios[i].clone()).collect())
}

/// Returns a copy of `s` with the shock applied; `s` is left untouched.
pub fn apply_shock(s: &Setting, sh: &Shock) -> Result<Setting> {
    s.validate()?;
    let label = sh.kind.label();
    let m = sh.magnitude;
    if !(m >= 0.0) || !m.is_finite() {
        return Err(incompatible(label, "magnitude must be finite and >= 0"));
    }
    let periods = sh.affected(s.horizon())?;
    let mut out = s.clone();
    match &sh.kind {
        ShockKind::ConcavifyRisk { transform } => {
            for &t in &periods {
                let ce = &mut out.periods[t].ce;
                let risk = match ce {
                    CertaintyEquivalent::QuasiArithmetic { risk }
                    | CertaintyEquivalent::SmoothAmbiguity { risk, .. }
                    | CertaintyEquivalent::MultiPrior { risk, .. } => risk,
                };
                *risk = concavify(risk, *transform, m);
            }
        }
        ShockKind::ShrinkPortfolios { keep } | ShockKind::ShrinkHedging { keep } => {
            if matches!(sh.kind, ShockKind::ShrinkHedging { .. }) && s.income.is_none() {
                return Err(incompatible(label, "needs an income block"));
            }
            for &t in &periods {
                out.periods[t].portfolios = shrink(&s.periods[t].portfolios, keep, m, label)?;
            }
        }
        ShockKind::FosdReturns => {
            if m >= 1.0 {
                return Err(incompatible(label, "downshift must be below 1"));
            }
            for &t in &periods {
                let probs = s.periods[t].states.probs.clone();
                for p in &mut out.periods[t].portfolios {
                    let base = state_distribution(&p.returns, &probs);
                    p.returns.iter_mut().for_each(|r| *r *= 1.0 - m);
                    if !base.fosd_dominates(&state_distribution(&p.returns, &probs)) {
                        return Err(incompatible(label, "shifted returns are not dominated"));
                    }
                }
            }
        }
        ShockKind::SosdReturns => spread_returns(&mut out, s, &periods, m)?,
        ShockKind::DevalueConsumption => {
            for &t in &periods {
                let inner = s.periods[t].aggregator.clone();
                out.periods[t].aggregator = Aggregator::custom(ScaledConsumption { inner, scale: 1.0 + m });
            }
        }
        ShockKind::ConcavifyAmbiguity => {
            for &t in &periods {
                match &mut out.periods[t].ce {
                    CertaintyEquivalent::SmoothAmbiguity { ambiguity, .. } => {
                        *ambiguity = concavify(ambiguity, RiskTransform::Gamma, m);
                    }
                    _ => return Err(incompatible(label, "needs smooth-ambiguity preferences")),
                }
            }
        }
        ShockKind::EnlargePriors => {
            for &t in &periods {
                let period = &s.periods[t];
                let (risk, mut priors) = match &period.ce {
                    CertaintyEquivalent::QuasiArithmetic { risk } => (risk.clone(), vec![period.states.probs.clone()]),
                    CertaintyEquivalent::MultiPrior { risk, priors } => (risk.clone(), priors.clone()),
                    CertaintyEquivalent::SmoothAmbiguity { .. } => {
                        return Err(incompatible(label, "prior sets are enlarged under multi-prior preferences"))
                    }
                };
                let extra = pessimistic_prior(period, &priors[0], m);
                let new = priors.iter().all(|p| p.iter().zip(&extra).any(|(a, b)| (a - b).abs() > 1e-15));
                if m > 0.0 && !new {
                    return Err(incompatible(label, "returns do not vary across states; no new prior"));
                }
                if new {
                    priors.push(extra);
                }
                out.periods[t].ce = CertaintyEquivalent::MultiPrior { risk, priors };
            }
        }
        ShockKind::FosdIncome { component } | ShockKind::SosdIncome { component } => {
            let income = out.income.as_mut().ok_or_else(|| incompatible(label, "needs an income block"))?;
            let d = match component {
                IncomeComponent::Transitory => &mut income.transitory,
                IncomeComponent::Permanent => &mut income.permanent,
            };
            let base = d.clone();
            if matches!(sh.kind, ShockKind::FosdIncome { .. }) {
                if m >= 1.0 {
                    return Err(incompatible(label, "downshift must be below 1"));
                }
                *d = base.scaled(1.0 - m);
                if !base.fosd_dominates(d) {
                    return Err(incompatible(label, "shifted income is not dominated"));
                }
            } else {
                *d = base.spread(m, 0.0, f64::INFINITY);
                if !base.sosd_dominates(d) {
                    return Err(incompatible(label, "spread income is not riskier"));
                }
            }
        }
        ShockKind::FosdProductivity
        | ShockKind::FosdWageUp
        | ShockKind::FosdDepreciationUp
        | ShockKind::SosdDepreciation
        | ShockKind::TaxUp => {
            let block = out
                .entrepreneur
                .as_mut()
                .ok_or_else(|| incompatible(label, "needs an entrepreneur block"))?;
            match sh.kind {
                ShockKind::FosdProductivity => {
                    if m >= 1.0 {
                        return Err(incompatible(label, "downshift must be below 1"));
                    }
                    let base = block.productivity.clone();
                    block.productivity = base.scaled(1.0 - m);
                    debug_assert!(base.fosd_dominates(&block.productivity));
                }
                ShockKind::FosdWageUp => {
                    let base = block.wage.clone();
                    block.wage = base.scaled(1.0 + m);
                    debug_assert!(block.wage.fosd_dominates(&base));
                }
                ShockKind::FosdDepreciationUp => {
                    let base = block.depreciation.clone();
                    block.depreciation = base.scaled(1.0 + m);
                    if block.depreciation.max() >= block.depreciation_bound() {
                        return Err(incompatible(label, "depreciation would violate the default-free condition"));
                    }
                }
                ShockKind::SosdDepreciation => {
                    let base = block.depreciation.clone();
                    block.depreciation = base.spread(m, 0.0, block.depreciation_bound());
                    if !base.sosd_dominates(&block.depreciation) {
                        return Err(incompatible(label, "spread depreciation is not riskier"));
                    }
                }
                ShockKind::TaxUp => {
                    let base = s.entrepreneur.as_ref().unwrap();
                    if entrepreneur::min_taxable_base(s, base)? < 0.0 {
                        return Err(incompatible(
                            label,
                            "a tax increase lowers wealth only where the taxable base is nonnegative",
                        ));
                    }
                    block.tax += m;
                    if block.tax >= 1.0 {
                        return Err(incompatible(label, "tax rate must stay below 1"));
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    out.validate()?;
    Ok(out)
}

fn concavify(c: &Curvature, transform: RiskTransform, m: f64) -> Curvature {
    match (c, transform) {
        (Curvature::Crra { gamma }, RiskTransform::Gamma) => Curvature::Crra { gamma: gamma + m },
        (Curvature::CrraExponential { gamma, k }, RiskTransform::Gamma) => Curvature::CrraExponential {
            gamma: gamma + m,
            k: *k,
        },
        (_, RiskTransform::Exponential) if m == 0.0 => c.clone(),
        (Curvature::Crra { gamma }, RiskTransform::Exponential) => Curvature::CrraExponential { gamma: *gamma, k: m },
        // composing two exponential maps raises the coefficient
        (Curvature::CrraExponential { gamma, k }, RiskTransform::Exponential) => {
            Curvature::CrraExponential { gamma: *gamma, k: k + m }
        }
    }
}

/// Tilts `base` towards states with low average returns:
/// `pi(w) ~ base(w) Rbar(w)^(-10 m)`.
fn pessimistic_prior(period: &crate::setting::Period, base: &[f64], m: f64) -> Vec<f64> {
    let n = period.portfolios.len() as f64;
    let weights: Vec<f64> = (0..base.len())
        .map(|w| {
            let rbar = period.portfolios.iter().map(|p| p.returns[w]).sum::<f64>() / n;
            base[w] * rbar.powf(-10.0 * m)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut prior: Vec<f64> = weights.iter().map(|x| x / total).collect();
    // renormalise the last entry so the prior passes the 1e-12 sum check
    let head: f64 = prior[..prior.len() - 1].iter().sum();
    *prior.last_mut().unwrap() = 1.0 - head;
    prior
}

/// Splits every return state into two equally likely states with all returns
/// scaled by `1 -/+ m`, a mean-preserving spread of each portfolio.
fn spread_returns(out: &mut Setting, s: &Setting, periods: &[usize], m: f64) -> Result<()> {
    let sigma = m.min(0.999);
    let last = s.horizon() - 1;
    for &t in periods {
        let period = &s.periods[t];
        let split = |xs: &[f64], f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            xs.iter().flat_map(|&x| [f(x, -1.0), f(x, 1.0)]).collect()
        };
        let halves = |x: f64, _: f64| 0.5 * x;
        let probs = split(&period.states.probs, &halves);
        let target = &mut out.periods[t];
        for (p, base) in target.portfolios.iter_mut().zip(&period.portfolios) {
            p.returns = split(&base.returns, &|r, sgn| r * (1.0 + sgn * sigma));
            let before = state_distribution(&base.returns, &period.states.probs);
            if !before.sosd_dominates(&state_distribution(&p.returns, &probs)) {
                return Err(incompatible("cs4", "spread returns are not riskier"));
            }
        }
        target.ce = match &period.ce {
            CertaintyEquivalent::QuasiArithmetic { .. } => period.ce.clone(),
            CertaintyEquivalent::SmoothAmbiguity { risk, ambiguity, weights, priors } => {
                CertaintyEquivalent::SmoothAmbiguity {
                    risk: risk.clone(),
                    ambiguity: ambiguity.clone(),
                    weights: weights.clone(),
                    priors: priors.iter().map(|p| split(p, &halves)).collect(),
                }
            }
            CertaintyEquivalent::MultiPrior { risk, priors } => CertaintyEquivalent::MultiPrior {
                risk: risk.clone(),
                priors: priors.iter().map(|p| split(p, &halves)).collect(),
            },
        };
        target.states.probs = probs;
        if t == last && out.terminal.scale.len() > 1 {
            out.terminal.scale = split(&s.terminal.scale, &|b, _| b);
        }
    }
    Ok(())
}

/// Continuation values of a baseline and a shocked setting at one savings
/// node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropRow {
    pub t: usize,
    /// Permanent-income layer (1 outside the tensor layout).
    pub p: f64,
    pub savings: f64,
    pub baseline: f64,
    pub shocked: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Concavity {
    NotRequired,
    Verified,
    /// First node where the baseline value function fails to be concave.
    Failed { t: usize, wealth: f64 },
}

#[derive(Clone, Debug)]
pub struct DropReport {
    pub rows: Vec<DropRow>,
    /// `max(shocked - baseline)` over every node and period.
    pub max_excess: f64,
    pub concavity: Concavity,
    /// Pass when no node exceeds the tolerance; a violation downgrades to a
    /// warning when the concavity hypothesis failed.
    pub status: Status,
}

pub const DROP_TOL: f64 = 1e-9;

/// Common layout options so both settings are tabulated on identical nodes.
pub fn common_options(a: &Setting, b: &Setting, exec: Execution) -> SolveOptions {
    let floor = [a, b]
        .iter()
        .filter_map(|s| s.income.as_ref().map(|i| i.transitory.min()))
        .fold(f64::INFINITY, f64::min);
    let span = [a, b]
        .iter()
        .filter_map(|s| s.income.as_ref().map(|i| default_tensor_span(s, i)))
        .fold(0.0, f64::max);
    SolveOptions {
        exec,
        grid_floor: floor.is_finite().then_some(floor),
        tensor_span: (span > 0.0).then_some(span),
        ..SolveOptions::default()
    }
}

/// Discrete concavity of every tabulated value function feeding a
/// continuation value (periods `1..T`), with relative slack `1e-9`.
pub fn check_concavity(sol: &Solution) -> Concavity {
    for (t, layers) in sol.tables.iter().enumerate().skip(1) {
        for table in layers {
            let w = table.cash.nodes();
            let v = &table.value;
            let slopes: Vec<f64> = (0..w.len() - 1).map(|j| (v[j + 1] - v[j]) / (w[j + 1] - w[j])).collect();
            for j in 1..slopes.len() {
                if slopes[j] > slopes[j - 1] + 1e-9 * slopes[j - 1].abs().max(1e-300) {
                    return Concavity::Failed { t, wealth: w[j] };
                }
            }
        }
    }
    Concavity::Verified
}

/// Solves both settings on `grid` and compares continuation values at every
/// savings node of every period.
pub fn verify_continuation_drop(
    baseline: &Setting,
    shocked: &Setting,
    grid: &WealthGrid,
    needs_concavity: bool,
    exec: Execution,
) -> Result<DropReport> {
    if baseline.horizon() != shocked.horizon() {
        return Err(Error::Incompatible("settings have different horizons".into()));
    }
    let opts = common_options(baseline, shocked, exec);
    let base = solve_backward_with(baseline, grid, &opts)?;
    let shock = solve_backward_with(shocked, grid, &opts)?;
    if base.layout != shock.layout {
        return Err(Error::Incompatible("settings solve on different layouts".into()));
    }
    let mut rows = Vec::new();
    let mut max_excess = f64::NEG_INFINITY;
    for (t, (lb, ls)) in base.tables.iter().zip(&shock.tables).enumerate() {
        for (tb, ts) in lb.iter().zip(ls) {
            debug_assert_eq!(tb.savings, ts.savings);
            for (k, &s) in tb.savings.nodes().iter().enumerate() {
                let row = DropRow {
                    t,
                    p: tb.p,
                    savings: s,
                    baseline: tb.continuation[k],
                    shocked: ts.continuation[k],
                };
                max_excess = max_excess.max(row.shocked - row.baseline);
                rows.push(row);
            }
        }
    }
    let concavity = if needs_concavity {
        check_concavity(&base)
    } else {
        Concavity::NotRequired
    };
    let status = if max_excess <= DROP_TOL {
        Status::Pass
    } else if matches!(concavity, Concavity::Failed { .. }) {
        Status::Warn
    } else {
        Status::Fail
    };
    Ok(DropReport {
        rows,
        max_excess,
        concavity,
        status,
    })
}

/// REMV of an income-risk path computed two ways.
#[derive(Clone, Debug)]
pub struct RemvCheck {
    /// Savings and permanent income actually used.
    pub savings: f64,
    pub p: f64,
    /// `(v_wa / v_w) / (v_a / v)` with wealth derivatives by finite differences.
    pub direct: f64,
    /// `(1 + (p/s) v_p / v_w) / (1 + (p/s) v_pa / v_wa)` with income
    /// derivatives by finite differences.
    pub formula: f64,
    /// Formula REMV as `p` falls towards 0 at fixed savings.
    pub limit: Vec<(f64, f64)>,
}

/// Compares the direct REMV with the income decomposition on the path from
/// `shock` applied to `s` (alpha = 0) to `s` itself (alpha = 1), at period
/// `t`. The savings level is moved to the log-midpoint of its grid cell so
/// finite differences never straddle a node. At `p = 0` the income block is
/// dropped and both routes use the exact linear continuation value.
pub fn income_remv_check(
    s: &Setting,
    shock: &Shock,
    grid: &WealthGrid,
    t: usize,
    savings: f64,
    p: f64,
    alpha: f64,
) -> Result<RemvCheck> {
    if s.income.is_none() {
        return Err(Error::Incompatible("income REMV check needs an income block".into()));
    }
    if !s.terminal.is_linear() || s.periods.iter().any(|q| !q.aggregator.is_homogeneous() || !q.ce.is_homogeneous()) {
        return Err(Error::NotHomothetic(
            "the income decomposition needs degree-one aggregators, CRRA certainty equivalents and linear terminal utility".into(),
        ));
    }
    let shocked = apply_shock(s, shock)?;
    if p == 0.0 {
        let strip = |x: &Setting| {
            let mut y = x.clone();
            y.income = None;
            solve_homothetic(&y)
        };
        let (hb, hs) = (strip(s)?, strip(&shocked)?);
        let env = crate::environment::LinearEnvironment {
            aggregator: s.periods[t].aggregator.clone(),
            scale: crate::environment::LinearScale::Path {
                g_shocked: hs.homothetic.as_ref().unwrap().rho[t],
                g_base: hb.homothetic.as_ref().unwrap().rho[t],
            },
        };
        let direct = remv_at(&env, savings, alpha)?;
        return Ok(RemvCheck {
            savings,
            p,
            direct,
            // no income terms: the decomposition collapses to 1
            formula: 1.0,
            limit: vec![(0.0, direct)],
        });
    }
    let opts = common_options(s, &shocked, Execution::default());
    let base = solve_backward_with(s, grid, &opts)?;
    let shock_sol = solve_backward_with(&shocked, grid, &opts)?;
    if base.layout != Layout::IncomeRatio {
        return Err(Error::Incompatible("income REMV check needs the ratio layout".into()));
    }
    let table = base.table(t)?;
    let x = mid_cell(&table.savings, savings / p);
    let savings = x * p;
    let env_at = |q: f64| -> Result<PathEnvironment> {
        Ok(PathEnvironment {
            aggregator: s.periods[t].aggregator.clone(),
            shocked: shock_sol.continuation_fn(t, q)?,
            baseline: base.continuation_fn(t, q)?,
        })
    };
    let env = env_at(p)?;
    let k = env.continuation(savings, alpha)?;
    if k.v_a == 0.0 {
        return Err(Error::UndefinedRemv);
    }
    let h = 1e-5 * savings;
    let v_w = central_diff(|y| Ok(env.continuation(y, alpha)?.v), savings, h)?;
    let v_wa = central_diff(|y| Ok(env.continuation(y, alpha)?.v_a), savings, h)?;
    let direct = (v_wa / v_w) / (k.v_a / k.v);
    let formula_at = |q: f64, sv: f64| -> Result<f64> {
        let env = env_at(q)?;
        let k = env.continuation(sv, alpha)?;
        let hq = 1e-5 * q;
        let (up, dn) = (env_at(q + hq)?, env_at(q - hq)?);
        let (ku, kd) = (up.continuation(sv, alpha)?, dn.continuation(sv, alpha)?);
        let v_p = (ku.v - kd.v) / (2.0 * hq);
        let v_pa = (ku.v_a - kd.v_a) / (2.0 * hq);
        let a = (q / sv) * (v_p / k.v_w);
        let b = (q / sv) * (v_pa / k.v_wa);
        Ok((1.0 + a) / (1.0 + b))
    };
    let formula = formula_at(p, savings)?;
    let mut limit = vec![(p, formula)];
    let mut q = p;
    for _ in 0..6 {
        q /= 10.0;
        match formula_at(q, mid_cell(&table.savings, savings / q) * q) {
            Ok(e) => limit.push((q, e)),
            Err(Error::OutOfGrid { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(RemvCheck {
        savings,
        p,
        direct,
        formula,
        limit,
    })
}

/// Log-midpoint (in shifted coordinates) of the grid cell containing `x`,
/// or `x` itself outside the grid.
fn mid_cell(grid: &WealthGrid, x: f64) -> f64 {
    let nodes = grid.nodes();
    let j = nodes.partition_point(|&n| n <= x);
    if j == 0 || j == nodes.len() {
        return x;
    }
    let sh = grid.shift();
    ((nodes[j - 1] + sh) * (nodes[j] + sh)).sqrt() - sh
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setting::{IncomeBlock, Period, StateSpace, TerminalUtility};

    fn setting() -> Setting {
        Setting::stationary(
            2,
            Period {
                aggregator: Aggregator::epstein_zin(0.9, 0.6).unwrap(),
                ce: CertaintyEquivalent::crra(3.0),
                states: StateSpace::uniform(2),
                portfolios: vec![
                    Portfolio::riskless("bond", 1.02, 2),
                    Portfolio::new("stock", vec![0.88, 1.3]),
                ],
            },
            TerminalUtility::linear(1.0),
        )
    }

    #[test]
    fn identity_downshift() {
        let s = setting();
        let out = apply_shock(&s, &Shock::new(ShockKind::FosdReturns, 0.0)).unwrap();
        for (a, b) in s.periods.iter().zip(&out.periods) {
            assert_eq!(a.portfolios, b.portfolios);
        }
    }

    #[test]
    fn return_spread_preserves_means() {
        let s = setting();
        let out = apply_shock(&s, &Shock::new(ShockKind::SosdReturns, 0.1)).unwrap();
        for (a, b) in s.periods.iter().zip(&out.periods) {
            assert_eq!(b.states.len(), 2 * a.states.len());
            for (pa, pb) in a.portfolios.iter().zip(&b.portfolios) {
                assert!((pa.mean_return(&a.states) - pb.mean_return(&b.states)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shrink_is_strict_and_checked() {
        let s = setting();
        let out = apply_shock(&s, &Shock::new(ShockKind::ShrinkPortfolios { keep: None }, 1.0)).unwrap();
        assert_eq!(out.periods[0].portfolios.len(), 1);
        let all = Shock::new(ShockKind::ShrinkPortfolios { keep: Some(vec![0, 1]) }, 0.0);
        assert!(matches!(apply_shock(&s, &all), Err(Error::Incompatible(_))));
    }

    #[test]
    fn block_shocks_need_blocks() {
        let s = setting();
        for label in ["cs8", "cs9", "cs10", "cs11", "cs12", "cs13", "cs14", "cs15"] {
            let sh = Shock::new(ShockKind::from_label(label).unwrap(), 0.1);
            assert!(matches!(apply_shock(&s, &sh), Err(Error::Incompatible(_))), "{label}");
        }
        let sh = Shock::new(ShockKind::ConcavifyAmbiguity, 0.1);
        assert!(matches!(apply_shock(&s, &sh), Err(Error::Incompatible(_))));
    }

    #[test]
    fn enlarged_priors_lower_continuation() {
        let s = setting();
        let shocked = apply_shock(&s, &Shock::new(ShockKind::EnlargePriors, 0.5)).unwrap();
        let grid = WealthGrid::log_spaced(0.1, 10.0, 64).unwrap();
        let r = verify_continuation_drop(&s, &shocked, &grid, false, Execution::Sequential).unwrap();
        assert_eq!(r.status, Status::Pass);
        assert!(r.max_excess < 0.0);
    }

    #[test]
    fn dropping_unchosen_portfolio_is_neutral() {
        let mut s = setting();
        for p in &mut s.periods {
            p.portfolios.push(Portfolio::riskless("cash", 1.0, 2));
        }
        let sh = Shock::new(ShockKind::ShrinkPortfolios { keep: Some(vec![0, 1]) }, 0.0);
        let shocked = apply_shock(&s, &sh).unwrap();
        let grid = WealthGrid::log_spaced(0.1, 10.0, 64).unwrap();
        let r = verify_continuation_drop(&s, &shocked, &grid, false, Execution::Sequential).unwrap();
        assert_eq!(r.max_excess, 0.0);
    }

    #[test]
    fn income_remv_at_zero_income_is_one() {
        let mut s = setting();
        s.income = Some(IncomeBlock {
            p0: 1.0,
            transitory: Distribution::new(vec![0.8, 1.2], vec![0.5, 0.5]).unwrap(),
            permanent: Distribution::degenerate(1.0),
        });
        let sh = Shock::new(ShockKind::ShrinkHedging { keep: Some(vec![0]) }, 0.0);
        let grid = WealthGrid::log_spaced(0.05, 50.0, 64).unwrap();
        let r = income_remv_check(&s, &sh, &grid, 0, 1.0, 0.0, 0.5).unwrap();
        assert_eq!((r.direct, r.formula), (1.0, 1.0));
    }
}
