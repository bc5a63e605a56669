//! TOML experiment files. Every table rejects unknown keys; semantic errors
//! name the offending field path.

use std::path::Path;

use serde::Deserialize;

use crate::aggregator::Aggregator;
use crate::certainty::CertaintyEquivalent;
use crate::error::{Error, Result};
use crate::grid::{Order, WealthGrid};
use crate::identify::{Group, ShifterDesign};
use crate::setting::{Distribution, EntrepreneurBlock, IncomeBlock, Period, Portfolio, Setting, StateSpace, TerminalUtility};
use crate::shocks::Shock;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub setting: Option<SettingSpec>,
    pub grid: Option<GridSpec>,
    pub solver: Option<SolverSpec>,
    pub two_period: Option<TwoPeriodSpec>,
    pub figure1: Option<Figure1Spec>,
    pub statics: Option<StaticsSpec>,
    #[serde(default)]
    pub shocks: Vec<Shock>,
    pub identify: Option<IdentifySpec>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AggregatorSpec {
    EpsteinZin { beta: f64, psi: f64 },
    CobbDouglas { beta: f64 },
}

impl AggregatorSpec {
    pub fn build(&self) -> Result<Aggregator> {
        match *self {
            AggregatorSpec::EpsteinZin { beta, psi } => Aggregator::epstein_zin(beta, psi),
            AggregatorSpec::CobbDouglas { beta } => Aggregator::cobb_douglas(beta),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioSpec {
    pub name: String,
    pub returns: Vec<f64>,
}

/// Per-period replacement of the default preferences or opportunity set.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodOverride {
    pub period: usize,
    pub aggregator: Option<AggregatorSpec>,
    pub ce: Option<CertaintyEquivalent>,
    pub probs: Option<Vec<f64>>,
    pub portfolios: Option<Vec<PortfolioSpec>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSpec {
    pub scale: Vec<f64>,
    #[serde(default)]
    pub intercept: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingSpec {
    pub horizon: usize,
    pub aggregator: AggregatorSpec,
    pub ce: CertaintyEquivalent,
    pub probs: Vec<f64>,
    pub portfolios: Vec<PortfolioSpec>,
    pub terminal: Option<TerminalSpec>,
    #[serde(default)]
    pub overrides: Vec<PeriodOverride>,
    pub income: Option<IncomeBlock>,
    pub entrepreneur: Option<EntrepreneurBlock>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    /// `cubic` (default) or the order-preserving `linear`.
    #[serde(default)]
    pub order: Order,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default)]
    pub sequential: bool,
    pub tensor_layers: Option<usize>,
    #[serde(default)]
    pub force_tensor: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoPeriodSpec {
    pub e1: f64,
    pub e2: f64,
    pub rf: f64,
    pub rho: f64,
    pub aggregator: AggregatorSpec,
    /// Random closed-form checks to run.
    #[serde(default = "default_two_period_checks")]
    pub random_checks: usize,
}

fn default_two_period_checks() -> usize {
    500
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Figure1Spec {
    pub betas: Vec<f64>,
    pub psis: Vec<f64>,
    pub rates: Vec<f64>,
    pub resolution: usize,
    #[serde(default = "one")]
    pub e1: f64,
    #[serde(default)]
    pub e2: f64,
    #[serde(default = "one")]
    pub rho: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticsSpec {
    #[serde(default = "default_cases")]
    pub cases: usize,
    #[serde(default = "default_certificates")]
    pub certificate_cases: usize,
}

fn default_cases() -> usize {
    1000
}

fn default_certificates() -> usize {
    100
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum FirstStageSpec {
    Known,
    FromPanel,
    Sign,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifySpec {
    pub groups: Vec<Group>,
    pub periods: usize,
    pub design: ShifterDesign,
    pub loading: f64,
    #[serde(default)]
    pub noise_sd: f64,
    pub wealth: [f64; 2],
    pub first_stage: FirstStageSpec,
}

/// Reads and parses a configuration file. Syntax errors carry the line and
/// column reported by the TOML parser.
pub fn load(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path)?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Config> {
    toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim_end().to_string()))
}

fn check_probs(field: &str, probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::config(field, "empty probability vector"));
    }
    if probs.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) {
        return Err(Error::config(field, "probabilities must lie in [0, 1]"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::config(field, format!("probabilities sum to {total}")));
    }
    Ok(())
}

fn prune_distribution(field: &str, d: &Distribution) -> Result<Distribution> {
    if d.values.len() != d.probs.len() {
        return Err(Error::config(
            field,
            format!("{} values but {} probabilities", d.values.len(), d.probs.len()),
        ));
    }
    check_probs(&format!("{field}.probs"), &d.probs)?;
    let (values, probs) = d
        .values
        .iter()
        .zip(&d.probs)
        .filter(|(_, p)| **p > 0.0)
        .map(|(v, p)| (*v, *p))
        .unzip();
    Ok(Distribution { values, probs })
}

fn keep<T: Clone>(xs: &[T], mask: &[bool]) -> Vec<T> {
    xs.iter().zip(mask).filter(|(_, k)| **k).map(|(x, _)| x.clone()).collect()
}

/// Drops zero-probability states from a period, its returns and priors.
fn build_period(
    field: &str,
    aggregator: &AggregatorSpec,
    ce: &CertaintyEquivalent,
    probs: &[f64],
    portfolios: &[PortfolioSpec],
) -> Result<(Period, Vec<bool>)> {
    check_probs(&format!("{field}.probs"), probs)?;
    let mask: Vec<bool> = probs.iter().map(|p| *p > 0.0).collect();
    if portfolios.is_empty() {
        return Err(Error::config(format!("{field}.portfolios"), "at least one portfolio is required"));
    }
    let mut out = Vec::new();
    for (i, p) in portfolios.iter().enumerate() {
        if p.returns.len() != probs.len() {
            return Err(Error::config(
                format!("{field}.portfolios[{i}].returns"),
                format!("{} returns for {} states", p.returns.len(), probs.len()),
            ));
        }
        out.push(Portfolio::new(p.name.clone(), keep(&p.returns, &mask)));
    }
    let ce = match ce {
        CertaintyEquivalent::QuasiArithmetic { .. } => ce.clone(),
        CertaintyEquivalent::SmoothAmbiguity {
            risk,
            ambiguity,
            weights,
            priors,
        } => CertaintyEquivalent::SmoothAmbiguity {
            risk: risk.clone(),
            ambiguity: ambiguity.clone(),
            weights: weights.clone(),
            priors: prune_priors(field, priors, &mask)?,
        },
        CertaintyEquivalent::MultiPrior { risk, priors } => CertaintyEquivalent::MultiPrior {
            risk: risk.clone(),
            priors: prune_priors(field, priors, &mask)?,
        },
    };
    let period = Period {
        aggregator: aggregator.build().map_err(|e| Error::config(format!("{field}.aggregator"), e.to_string()))?,
        ce,
        states: StateSpace {
            probs: keep(probs, &mask),
        },
        portfolios: out,
    };
    Ok((period, mask))
}

fn prune_priors(field: &str, priors: &[Vec<f64>], mask: &[bool]) -> Result<Vec<Vec<f64>>> {
    priors
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if p.len() != mask.len() {
                return Err(Error::config(
                    format!("{field}.ce.priors[{i}]"),
                    format!("{} entries for {} states", p.len(), mask.len()),
                ));
            }
            if p.iter().zip(mask).any(|(x, k)| !k && *x > 0.0) {
                return Err(Error::config(
                    format!("{field}.ce.priors[{i}]"),
                    "a prior puts mass on a zero-probability state",
                ));
            }
            Ok(keep(p, mask))
        })
        .collect()
}

impl SettingSpec {
    pub fn build(&self) -> Result<Setting> {
        if self.horizon == 0 {
            return Err(Error::config("setting.horizon", "must be at least 1"));
        }
        let mut periods = Vec::with_capacity(self.horizon);
        let mut last_mask = Vec::new();
        for t in 0..self.horizon {
            let ov = self.overrides.iter().find(|o| o.period == t);
            let field = match ov {
                Some(_) => format!("setting.overrides[period={t}]"),
                None => "setting".to_string(),
            };
            let (period, mask) = build_period(
                &field,
                ov.and_then(|o| o.aggregator.as_ref()).unwrap_or(&self.aggregator),
                ov.and_then(|o| o.ce.as_ref()).unwrap_or(&self.ce),
                ov.and_then(|o| o.probs.as_deref()).unwrap_or(&self.probs),
                ov.and_then(|o| o.portfolios.as_deref()).unwrap_or(&self.portfolios),
            )?;
            periods.push(period);
            last_mask = mask;
        }
        if let Some(o) = self.overrides.iter().find(|o| o.period >= self.horizon) {
            return Err(Error::config(
                "setting.overrides.period",
                format!("period {} beyond horizon {}", o.period, self.horizon),
            ));
        }
        let terminal = match &self.terminal {
            None => TerminalUtility::linear(1.0),
            Some(t) => {
                let scale = if t.scale.len() == last_mask.len() && t.scale.len() > 1 {
                    keep(&t.scale, &last_mask)
                } else if t.scale.len() == 1 {
                    t.scale.clone()
                } else {
                    return Err(Error::config(
                        "setting.terminal.scale",
                        format!("needs 1 or {} entries, found {}", last_mask.len(), t.scale.len()),
                    ));
                };
                TerminalUtility {
                    scale,
                    intercept: t.intercept,
                }
            }
        };
        let income = match &self.income {
            None => None,
            Some(i) => Some(IncomeBlock {
                p0: i.p0,
                transitory: prune_distribution("setting.income.transitory", &i.transitory)?,
                permanent: prune_distribution("setting.income.permanent", &i.permanent)?,
            }),
        };
        let entrepreneur = match &self.entrepreneur {
            None => None,
            Some(e) => {
                let mut e = e.clone();
                e.productivity = prune_distribution("setting.entrepreneur.productivity", &e.productivity)?;
                e.wage = prune_distribution("setting.entrepreneur.wage", &e.wage)?;
                e.depreciation = prune_distribution("setting.entrepreneur.depreciation", &e.depreciation)?;
                Some(e)
            }
        };
        let s = Setting {
            periods,
            terminal,
            income,
            entrepreneur,
        };
        s.validate().map_err(|e| Error::config("setting", e.to_string()))?;
        Ok(s)
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<WealthGrid> {
        WealthGrid::log_spaced(self.lo, self.hi, self.n)
            .map(|g| g.with_order(self.order))
            .map_err(|e| Error::config("grid", e.to_string()))
    }
}

impl Config {
    pub fn setting(&self) -> Result<Setting> {
        self.setting
            .as_ref()
            .ok_or_else(|| Error::config("setting", "missing table"))?
            .build()
    }

    pub fn grid(&self) -> Result<WealthGrid> {
        self.grid
            .as_ref()
            .ok_or_else(|| Error::config("grid", "missing table"))?
            .build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[setting]
horizon = 2
aggregator = { family = "epstein-zin", beta = 0.9, psi = 0.5 }
ce = { kind = "quasi-arithmetic", risk = { kind = "crra", gamma = 3.0 } }
probs = [0.5, 0.0, 0.5]
portfolios = [
  { name = "bond", returns = [1.02, 1.02, 1.02] },
  { name = "stock", returns = [0.9, 5.0, 1.25] },
]

[grid]
lo = 0.1
hi = 10.0
n = 64
"#;

    #[test]
    fn parses_and_prunes() {
        let cfg = parse(BASE).unwrap();
        let s = cfg.setting().unwrap();
        assert_eq!(s.periods[0].states.probs, vec![0.5, 0.5]);
        assert_eq!(s.periods[0].portfolios[1].returns, vec![0.9, 1.25]);
        assert_eq!(cfg.grid().unwrap().len(), 64);
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        let bad = BASE.replace("n = 64", "n = 64\nwidth = 3");
        match parse(&bad) {
            Err(Error::Parse(msg)) => assert!(msg.contains("width") && msg.contains("line")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let bad = BASE.replace("returns = [0.9, 5.0, 1.25]", "returns = [0.9, 1.25]");
        match parse(&bad).unwrap().setting() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "setting.portfolios[1].returns"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shocks_parse() {
        let text = format!(
            "{BASE}\n[[shocks]]\nkind = \"fosd-returns\"\nmagnitude = 0.1\n\n[[shocks]]\nkind = \"fosd-income\"\ncomponent = \"permanent\"\nmagnitude = 0.05\n"
        );
        let cfg = parse(&text).unwrap();
        assert_eq!(cfg.shocks.len(), 2);
        assert_eq!(cfg.shocks[1].kind.label(), "cs8");
    }
}
