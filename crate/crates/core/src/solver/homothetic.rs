use crate::aggregator::{Aggregator, UNIT_EIS_TOL};
use crate::error::{Error, Result};
use crate::numerics::{maximize_with_derivative, ScanOptions};
use crate::setting::{Period, Setting};

use super::{HomotheticCoefficients, Layout, Solution};

/// Exact solution when value functions are linear in wealth:
/// `b_t = max_c f(c, (1 - c) rho_t)` with `rho_t = max_theta M(b_{t+1} R(theta))`.
pub fn solve_homothetic(setting: &Setting) -> Result<Solution> {
    setting.validate()?;
    let s = setting.reduced()?;
    if !s.is_homothetic() {
        return Err(Error::NotHomothetic(
            "needs degree-one aggregators and certainty equivalents, linear terminal utility and no labour income"
                .into(),
        ));
    }
    let horizon = s.horizon();
    let mut b = vec![0.0; horizon];
    let mut rho = vec![0.0; horizon];
    let mut share = vec![0.0; horizon];
    let mut portfolio = vec![0; horizon];
    for t in (0..horizon).rev() {
        let period = &s.periods[t];
        let next = |state: usize| {
            if t + 1 == horizon {
                s.terminal.scale_at(state)
            } else {
                b[t + 1]
            }
        };
        let (r, theta) = portfolio_scale(period, next)?;
        let (bt, c) = consumption_share(&period.aggregator, r)?;
        b[t] = bt;
        rho[t] = r;
        share[t] = c;
        portfolio[t] = theta;
    }
    Ok(Solution {
        layout: Layout::Wealth,
        aggregators: s.periods.iter().map(|p| p.aggregator.clone()).collect(),
        tables: Vec::new(),
        homothetic: Some(HomotheticCoefficients {
            b,
            b_terminal: s.terminal.scale.clone(),
            rho,
            share,
            portfolio,
        }),
    })
}

/// `max_theta M(b(omega) R(theta, omega))`; ties go to the lowest index.
fn portfolio_scale(period: &Period, b_next: impl Fn(usize) -> f64) -> Result<(f64, usize)> {
    let mut best = (f64::NEG_INFINITY, 0);
    let mut vals = vec![0.0; period.states.len()];
    for (k, p) in period.portfolios.iter().enumerate() {
        for (j, r) in p.returns.iter().enumerate() {
            vals[j] = b_next(j) * r;
        }
        let m = period.ce.eval(&vals, &period.states.probs)?;
        if m > best.0 {
            best = (m, k);
        }
    }
    Ok(best)
}

/// `(b, share)` for `max_c f(c, (1 - c) rho)`.
fn consumption_share(agg: &Aggregator, rho: f64) -> Result<(f64, f64)> {
    match *agg {
        Aggregator::EpsteinZin { beta, psi } if (psi - 1.0).abs() >= UNIT_EIS_TOL => {
            let a = (1.0 - beta).powf(psi);
            let bp = a + beta.powf(psi) * rho.powf(psi - 1.0);
            Ok((bp.powf(1.0 / (psi - 1.0)), a / bp))
        }
        Aggregator::EpsteinZin { beta, .. } | Aggregator::CobbDouglas { beta } => Ok((
            (1.0 - beta).powf(1.0 - beta) * beta.powf(beta) * rho.powf(beta),
            1.0 - beta,
        )),
        Aggregator::Custom(_) => {
            let m = maximize_with_derivative(
                |c| Ok(agg.value(c, (1.0 - c) * rho)),
                |c| {
                    let p = agg.partials(c, (1.0 - c) * rho);
                    Ok(p.fc - rho * p.fv)
                },
                0.0,
                1.0,
                ScanOptions::default(),
            )?;
            Ok((m.value, m.x))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certainty::CertaintyEquivalent;
    use crate::setting::{Portfolio, StateSpace, TerminalUtility};

    fn riskless(beta: f64, psi: f64, r: f64, horizon: usize) -> Setting {
        Setting::stationary(
            horizon,
            Period {
                aggregator: Aggregator::epstein_zin(beta, psi).unwrap(),
                ce: CertaintyEquivalent::crra(3.0),
                states: StateSpace::certain(),
                portfolios: vec![Portfolio::riskless("bond", r, 1)],
            },
            TerminalUtility::linear(1.0),
        )
    }

    #[test]
    fn two_period_share() {
        let sol = solve_homothetic(&riskless(0.5, 2.0, 1.5, 1)).unwrap();
        let h = sol.homothetic.unwrap();
        assert!((h.b[0] - 0.625).abs() < 1e-15);
        assert!((h.share[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn unit_eis_share_is_constant() {
        let sol = solve_homothetic(&riskless(0.5, 1.0, 1.3, 5)).unwrap();
        assert!(sol.homothetic.unwrap().share.iter().all(|&c| c == 0.5));
    }

    #[test]
    fn deterministic_recursion() {
        let (beta, psi) = (0.7, 0.4);
        let sol = solve_homothetic(&riskless(beta, psi, 1.0, 4)).unwrap();
        let h = sol.homothetic.unwrap();
        let mut b = 1.0f64;
        for t in (0..4).rev() {
            b = ((1.0 - beta).powf(psi) + beta.powf(psi) * b.powf(psi - 1.0)).powf(1.0 / (psi - 1.0));
            assert!((h.b[t] - b).abs() < 1e-14 * b);
        }
    }

    #[test]
    fn rejects_non_homothetic() {
        let mut s = riskless(0.5, 2.0, 1.1, 2);
        s.terminal.intercept = 0.5;
        assert!(matches!(solve_homothetic(&s), Err(Error::NotHomothetic(_))));
    }
}
