//! Entrepreneur extension: a firm with constant returns, financed by own
//! funds and default-free debt, folded into ordinary portfolio returns per
//! unit of savings.

use crate::error::{Error, Result};
use crate::numerics::golden_max;
use crate::setting::{EntrepreneurBlock, Period, Portfolio, Setting, StateSpace, Technology, TerminalUtility};

/// Realised firm state: productivity, wage, depreciation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FirmState {
    pub z: f64,
    pub wage: f64,
    pub delta: f64,
}

/// Investment decision per unit of savings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FirmChoice {
    /// Fraction of savings spent on capital.
    pub capital_share: f64,
    /// Fraction of the borrowing limit drawn.
    pub leverage: f64,
}

/// Optimal labour per unit of capital and the resulting operating profit per
/// unit of capital.
pub fn labour_per_capital(tech: &Technology, z: f64, wage: f64) -> Result<(f64, f64)> {
    match *tech {
        Technology::CobbDouglas { capital_exponent: a } => {
            let x = ((1.0 - a) * z / wage).powf(1.0 / a);
            Ok((x, z * x.powf(1.0 - a) - wage * x))
        }
        Technology::Ces {
            capital_weight: w,
            exponent: s,
        } => {
            let marginal = |x: f64| z * (1.0 - w) * x.powf(s - 1.0) * (w + (1.0 - w) * x.powf(s)).powf(1.0 / s - 1.0);
            let mut hi = 1.0;
            while marginal(hi) >= wage {
                hi *= 2.0;
                if hi > 1e12 {
                    return Err(Error::InvalidSetting(
                        "operating profit is unbounded in labour at this wage".into(),
                    ));
                }
            }
            let profit = |x: f64| Ok(z * tech.output(1.0, x) - wage * x);
            let (x, p) = golden_max(profit, 0.0, hi, 1e-13)?;
            Ok((x, p.max(0.0)))
        }
    }
}

/// Joint firm states in the order (z, wage, delta) with their probabilities.
pub fn firm_states(block: &EntrepreneurBlock) -> Vec<(FirmState, f64)> {
    let mut out = Vec::new();
    for (&z, &pz) in block.productivity.values.iter().zip(&block.productivity.probs) {
        for (&wage, &pw) in block.wage.values.iter().zip(&block.wage.probs) {
            for (&delta, &pd) in block.depreciation.values.iter().zip(&block.depreciation.probs) {
                out.push((FirmState { z, wage, delta }, pz * pw * pd));
            }
        }
    }
    out
}

/// Amounts per unit of savings: financial assets, capital units, debt.
fn positions(block: &EntrepreneurBlock, choice: FirmChoice) -> (f64, f64, f64) {
    let k = choice.capital_share / block.capital_price;
    let debt = choice.leverage * block.leverage_cap * block.capital_price * k;
    (1.0 - choice.capital_share + debt, k, debt)
}

/// Taxable income per unit of savings: financial income, operating profit,
/// less depreciation and interest.
pub fn taxable_base(block: &EntrepreneurBlock, financial_gross: f64, choice: FirmChoice, st: FirmState) -> Result<f64> {
    let (a, k, debt) = positions(block, choice);
    let (_, profit) = labour_per_capital(&block.technology, st.z, st.wage)?;
    Ok(a * (financial_gross - 1.0) + profit * k - block.capital_price * st.delta * k - block.debt_rate * debt)
}

/// Next-period wealth per unit of savings for one financial portfolio gross
/// return, one firm choice and one firm state.
pub fn gross_return(block: &EntrepreneurBlock, financial_gross: f64, choice: FirmChoice, st: FirmState) -> Result<f64> {
    let tau = block.tax;
    let (a, k, debt) = positions(block, choice);
    let (_, profit) = labour_per_capital(&block.technology, st.z, st.wage)?;
    let r = financial_gross - 1.0;
    let pk = block.capital_price;
    Ok(a * (1.0 + (1.0 - tau) * r) + ((1.0 - tau) * pk * (1.0 - st.delta) + tau * pk) * k
        + (1.0 - tau) * profit * k
        - debt * (1.0 + (1.0 - tau) * block.debt_rate))
}

/// Return vector over the joint state space (financial state major, then
/// firm states) for a financial portfolio and a firm choice.
pub fn entrepreneur_reduce(block: &EntrepreneurBlock, portfolio: &Portfolio, choice: FirmChoice) -> Result<Vec<f64>> {
    let firms = firm_states(block);
    let mut out = Vec::with_capacity(portfolio.returns.len() * firms.len());
    for &r in &portfolio.returns {
        for (st, _) in &firms {
            let g = gross_return(block, r, choice, *st)?;
            if !(g > 0.0) {
                return Err(Error::InvalidSetting(format!(
                    "default-free condition fails: gross return {g} for {} with {choice:?} at {st:?}",
                    portfolio.name
                )));
            }
            out.push(g);
        }
    }
    Ok(out)
}

/// Candidate firm choices; a zero capital share admits no leverage variants.
pub fn firm_choices(block: &EntrepreneurBlock) -> Vec<FirmChoice> {
    let mut out = Vec::new();
    for &capital_share in &block.capital_shares {
        if capital_share == 0.0 {
            out.push(FirmChoice {
                capital_share,
                leverage: 0.0,
            });
            continue;
        }
        for &leverage in &block.leverage_fractions {
            out.push(FirmChoice {
                capital_share,
                leverage,
            });
        }
    }
    out
}

fn reduce_period(period: &Period, block: &EntrepreneurBlock) -> Result<Period> {
    let firms = firm_states(block);
    let probs = period
        .states
        .probs
        .iter()
        .flat_map(|p| firms.iter().map(move |(_, q)| p * q))
        .collect();
    let mut portfolios = Vec::new();
    for p in &period.portfolios {
        for choice in firm_choices(block) {
            portfolios.push(Portfolio::new(
                format!("{}|k={}|b={}", p.name, choice.capital_share, choice.leverage),
                entrepreneur_reduce(block, p, choice)?,
            ));
        }
    }
    Ok(Period {
        aggregator: period.aggregator.clone(),
        ce: period.ce.clone(),
        states: StateSpace { probs },
        portfolios,
    })
}

/// The entrepreneur problem as an ordinary portfolio problem over
/// (financial state, productivity, wage, depreciation).
pub fn reduce_setting(s: &Setting, block: &EntrepreneurBlock) -> Result<Setting> {
    block.validate()?;
    let periods = s
        .periods
        .iter()
        .map(|p| reduce_period(p, block))
        .collect::<Result<Vec<_>>>()?;
    let firms = firm_states(block).len();
    let scale = if s.terminal.scale.len() == 1 {
        s.terminal.scale.clone()
    } else {
        s.terminal
            .scale
            .iter()
            .flat_map(|b| std::iter::repeat_n(*b, firms))
            .collect()
    };
    Ok(Setting {
        periods,
        terminal: TerminalUtility {
            scale,
            intercept: s.terminal.intercept,
        },
        income: None,
        entrepreneur: None,
    })
}

/// Smallest taxable base over every financial return, firm choice and firm
/// state of the setting.
pub fn min_taxable_base(s: &Setting, block: &EntrepreneurBlock) -> Result<f64> {
    let mut lo = f64::INFINITY;
    for period in &s.periods {
        for p in &period.portfolios {
            for &r in &p.returns {
                for choice in firm_choices(block) {
                    for (st, _) in firm_states(block) {
                        lo = lo.min(taxable_base(block, r, choice, st)?);
                    }
                }
            }
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setting::Distribution;

    fn block(tax: f64) -> EntrepreneurBlock {
        EntrepreneurBlock {
            technology: Technology::CobbDouglas { capital_exponent: 0.5 },
            productivity: Distribution::degenerate(1.0),
            wage: Distribution::degenerate(1.0),
            depreciation: Distribution::degenerate(0.1),
            capital_price: 1.0,
            leverage_cap: 0.5,
            debt_rate: 0.03,
            tax,
            capital_shares: vec![0.0, 0.5],
            leverage_fractions: vec![0.0, 1.0],
        }
    }

    #[test]
    fn cobb_douglas_labour_and_profit() {
        let (x, profit) = labour_per_capital(&Technology::CobbDouglas { capital_exponent: 0.5 }, 1.0, 1.0).unwrap();
        assert!((x - 0.25).abs() < 1e-15);
        assert!((profit - 0.25).abs() < 1e-15);
        // brute force over a labour grid
        let best = (1..=100_000)
            .map(|i| i as f64 * 1e-5)
            .map(|l| l.sqrt() - l)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((best - profit).abs() < 1e-9);
    }

    #[test]
    fn ces_labour_matches_first_order_condition() {
        let tech = Technology::Ces {
            capital_weight: 0.4,
            exponent: -0.5,
        };
        let (x, profit) = labour_per_capital(&tech, 1.3, 0.6).unwrap();
        let h = 1e-6;
        let d = (tech.output(1.0, x + h) - tech.output(1.0, x - h)) / (2.0 * h);
        assert!((1.3 * d - 0.6).abs() < 1e-6);
        assert!((profit - (1.3 * tech.output(1.0, x) - 0.6 * x)).abs() < 1e-12);
    }

    #[test]
    fn pure_financial_portfolio() {
        let b = block(0.2);
        let st = FirmState { z: 1.0, wage: 1.0, delta: 0.1 };
        let none = FirmChoice { capital_share: 0.0, leverage: 0.0 };
        let g = gross_return(&b, 1.05, none, st).unwrap();
        assert!((g - (1.0 + 0.8 * 0.05)).abs() < 1e-15);
    }

    #[test]
    fn untaxed_capital_return() {
        let b = block(0.0);
        let st = FirmState { z: 1.0, wage: 1.0, delta: 0.1 };
        let all_in = FirmChoice { capital_share: 1.0, leverage: 0.0 };
        let g = gross_return(&b, 1.05, all_in, st).unwrap();
        // (P_k (1 - delta) + profit / k) / P_k with profit / k = 0.25
        assert!((g - (0.9 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn choices_skip_leverage_without_capital() {
        assert_eq!(firm_choices(&block(0.0)).len(), 3);
    }
}
