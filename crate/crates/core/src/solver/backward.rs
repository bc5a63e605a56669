use crate::aggregator::Aggregator;
use crate::certainty::CertaintyEquivalent;
use crate::error::{Error, Result};
use crate::grid::{Interpolant, WealthGrid};
use crate::parallel::{try_map_range, Execution};
use crate::setting::{IncomeBlock, Period, Setting, TerminalUtility};

use super::{optimize_consumption, solve_homothetic, ContinuationFn, Layout, PeriodTable, Solution};

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub exec: Execution,
    /// Permanent-income layers when the income state cannot be reduced.
    pub tensor_layers: usize,
    /// Use the tensor layout even when the ratio reduction applies.
    pub force_tensor: bool,
    /// Lower end of the income-normalised grids. Defaults to the smallest
    /// transitory shock; comparisons across settings pin it to a common value.
    pub grid_floor: Option<f64>,
    /// Half-width in `log p` of the tensor layers. Defaults to the horizon
    /// times the largest absolute log permanent shock.
    pub tensor_span: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            exec: Execution::default(),
            tensor_layers: 9,
            force_tensor: false,
            grid_floor: None,
            tensor_span: None,
        }
    }
}

pub fn solve_backward(setting: &Setting, grid: &WealthGrid) -> Result<Solution> {
    solve_backward_with(setting, grid, &SolveOptions::default())
}

/// Grid backward induction. The continuation value is tabulated on savings
/// nodes (portfolio chosen by enumeration), then consumption is optimised at
/// every cash node against its interpolant.
pub fn solve_backward_with(setting: &Setting, grid: &WealthGrid, opts: &SolveOptions) -> Result<Solution> {
    setting.validate()?;
    let s = setting.reduced()?;
    let aggregators: Vec<Aggregator> = s.periods.iter().map(|p| p.aggregator.clone()).collect();
    let (layout, tables) = match &s.income {
        Some(income) if income.p0 > 0.0 => {
            let reducible = s.terminal.is_linear()
                && s.periods
                    .iter()
                    .all(|p| p.aggregator.is_homogeneous() && p.ce.is_homogeneous());
            if reducible && !opts.force_tensor {
                (Layout::IncomeRatio, solve_ratio(&s, income, grid, opts)?)
            } else {
                let layers = tensor_layers(&s, income, opts);
                let tables = solve_tensor(&s, income, grid, &layers, opts)?;
                (Layout::IncomeTensor { layers }, tables)
            }
        }
        _ => (Layout::Wealth, solve_wealth(&s, grid, opts.exec)?),
    };
    Ok(Solution {
        layout,
        aggregators,
        tables,
        homothetic: None,
    })
}

/// Next-period outcomes: return state, transitory and permanent shock.
struct Joint {
    probs: Vec<f64>,
    omega: Vec<usize>,
    tau: Vec<f64>,
    eta: Vec<f64>,
}

fn joint_states(period: &Period, income: Option<&IncomeBlock>) -> Joint {
    let (tau, eta) = match income {
        Some(i) => (i.transitory.clone(), i.permanent.clone()),
        None => (
            crate::setting::Distribution::degenerate(0.0),
            crate::setting::Distribution::degenerate(1.0),
        ),
    };
    let mut j = Joint {
        probs: Vec::new(),
        omega: Vec::new(),
        tau: Vec::new(),
        eta: Vec::new(),
    };
    for (w, pw) in period.states.probs.iter().enumerate() {
        for (t, pt) in tau.values.iter().zip(&tau.probs) {
            for (e, pe) in eta.values.iter().zip(&eta.probs) {
                j.probs.push(pw * pt * pe);
                j.omega.push(w);
                j.tau.push(*t);
                j.eta.push(*e);
            }
        }
    }
    j
}

/// Extends priors over return states to the joint state space, with income
/// shocks independent and distributed objectively.
fn expand_ce(ce: &CertaintyEquivalent, joint: &Joint, period: &Period) -> CertaintyEquivalent {
    let expand = |prior: &Vec<f64>| -> Vec<f64> {
        (0..joint.probs.len())
            .map(|k| {
                let w = joint.omega[k];
                prior[w] * joint.probs[k] / period.states.probs[w]
            })
            .collect()
    };
    match ce {
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
            priors: priors.iter().map(expand).collect(),
        },
        CertaintyEquivalent::MultiPrior { risk, priors } => CertaintyEquivalent::MultiPrior {
            risk: risk.clone(),
            priors: priors.iter().map(expand).collect(),
        },
    }
}

/// Best portfolio at savings `s`; ties go to the lowest index.
fn best_portfolio<F>(ce: &CertaintyEquivalent, probs: &[f64], n_theta: usize, outcome: &F, s: f64) -> Result<(f64, usize)>
where
    F: Fn(usize, usize, f64) -> Result<f64>,
{
    let mut vals = vec![0.0; probs.len()];
    let mut best = (f64::NEG_INFINITY, 0);
    for theta in 0..n_theta {
        for (j, v) in vals.iter_mut().enumerate() {
            *v = outcome(theta, j, s)?;
        }
        let m = ce.eval(&vals, probs)?;
        if m > best.0 {
            best = (m, theta);
        }
    }
    Ok(best)
}

#[allow(clippy::too_many_arguments)]
fn period_table<F>(
    exec: Execution,
    agg: &Aggregator,
    ce: &CertaintyEquivalent,
    probs: &[f64],
    n_theta: usize,
    p: f64,
    cash: WealthGrid,
    savings: WealthGrid,
    zero_savings_ok: bool,
    tails: Tails,
    outcome: F,
) -> Result<PeriodTable>
where
    F: Fn(usize, usize, f64) -> Result<f64> + Sync + Send,
{
    let s_nodes = savings.nodes();
    let cont = try_map_range(exec, s_nodes.len(), |i| {
        best_portfolio(ce, probs, n_theta, &outcome, s_nodes[i])
    })?;
    let continuation: Vec<f64> = cont.iter().map(|c| c.0).collect();
    let continuation_portfolio: Vec<usize> = cont.iter().map(|c| c.1).collect();
    let cfn = ContinuationFn::table(
        Interpolant::new(&savings, &continuation)?.with_tail(tails.continuation),
        1.0,
        zero_savings_ok,
        Vec::new(),
    );
    let w_nodes = cash.nodes();
    let opt = try_map_range(exec, w_nodes.len(), |i| {
        let w = w_nodes[i];
        let (c, v) = optimize_consumption(agg, &cfn, w)?;
        let (_, theta) = best_portfolio(ce, probs, n_theta, &outcome, (w - c).max(0.0))?;
        Ok::<_, Error>((c, v, theta))
    })?;
    Ok(PeriodTable {
        p,
        value: opt.iter().map(|o| o.1).collect(),
        consumption: opt.iter().map(|o| o.0).collect(),
        portfolio: opt.iter().map(|o| o.2).collect(),
        cash,
        savings,
        continuation,
        continuation_portfolio,
        value_tail: tails.value,
        continuation_tail: tails.continuation,
    })
}

/// Asymptotic slopes of one period's value and continuation value.
#[derive(Clone, Copy, Debug, Default)]
struct Tails {
    value: Option<f64>,
    continuation: Option<f64>,
}

/// With degree-one preferences labour income is negligible at high cash on
/// hand, so slopes approach those of the same setting without income.
fn income_tails(s: &Setting) -> Vec<Tails> {
    let mut bare = s.clone();
    bare.income = None;
    match solve_homothetic(&bare).ok().and_then(|h| h.homothetic) {
        Some(h) => (0..s.horizon())
            .map(|t| Tails {
                value: Some(h.b[t]),
                continuation: Some(h.rho[t]),
            })
            .collect(),
        None => vec![Tails::default(); s.horizon()],
    }
}

fn returns(period: &Period) -> Vec<Vec<f64>> {
    period.portfolios.iter().map(|p| p.returns.clone()).collect()
}

fn solve_wealth(s: &Setting, grid: &WealthGrid, exec: Execution) -> Result<Vec<Vec<PeriodTable>>> {
    if grid.shift() != 0.0 || grid.lo() <= 0.0 {
        return Err(Error::InvalidProblem(
            "the wealth layout needs a positive, unshifted grid".into(),
        ));
    }
    let horizon = s.horizon();
    let mut tables: Vec<Vec<PeriodTable>> = vec![Vec::new(); horizon];
    for t in (0..horizon).rev() {
        let period = &s.periods[t];
        let r = returns(period);
        let next = next_values(&tables, t, horizon)?;
        let terminal = &s.terminal;
        let outcome = |theta: usize, j: usize, sv: f64| -> Result<f64> {
            let w = r[theta][j] * sv;
            match &next {
                None => Ok(terminal.value(j, w)),
                Some(it) => it.value(w),
            }
        };
        let table = period_table(
            exec,
            &period.aggregator,
            &period.ce,
            &period.states.probs,
            r.len(),
            1.0,
            grid.clone(),
            grid.clone(),
            false,
            Tails::default(),
            outcome,
        )?;
        tables[t] = vec![table];
    }
    Ok(tables)
}

fn next_values(tables: &[Vec<PeriodTable>], t: usize, horizon: usize) -> Result<Option<Interpolant>> {
    if t + 1 == horizon {
        Ok(None)
    } else {
        Ok(Some(tables[t + 1][0].value_interp()?))
    }
}

/// Cash-on-hand and savings grids for the income layouts, per unit of
/// permanent income.
fn income_grids(grid: &WealthGrid, income: &IncomeBlock, opts: &SolveOptions) -> Result<(WealthGrid, WealthGrid)> {
    let tau_min = opts.grid_floor.unwrap_or_else(|| income.transitory.min());
    let cash = WealthGrid::log_spaced(grid.lo().min(tau_min), grid.hi(), grid.len())?.with_order(grid.order());
    let savings = WealthGrid::shifted(grid.hi(), grid.len(), tau_min)?.with_order(grid.order());
    Ok((cash, savings))
}

fn solve_ratio(s: &Setting, income: &IncomeBlock, grid: &WealthGrid, opts: &SolveOptions) -> Result<Vec<Vec<PeriodTable>>> {
    let exec = opts.exec;
    let (cash, savings) = income_grids(grid, income, opts)?;
    let tails = income_tails(s);
    let horizon = s.horizon();
    let mut tables: Vec<Vec<PeriodTable>> = vec![Vec::new(); horizon];
    for t in (0..horizon).rev() {
        let period = &s.periods[t];
        let joint = joint_states(period, Some(income));
        let ce = expand_ce(&period.ce, &joint, period);
        let r = returns(period);
        let next = next_values(&tables, t, horizon)?;
        let terminal = &s.terminal;
        let outcome = |theta: usize, j: usize, sv: f64| -> Result<f64> {
            let (w, eta) = (joint.omega[j], joint.eta[j]);
            let x = r[theta][w] * sv / eta + joint.tau[j];
            let v = match &next {
                None => terminal.value(w, x),
                Some(it) => it.value(x)?,
            };
            Ok(eta * v)
        };
        let table = period_table(
            exec,
            &period.aggregator,
            &ce,
            &joint.probs,
            r.len(),
            1.0,
            cash.clone(),
            savings.clone(),
            true,
            tails[t],
            outcome,
        )?;
        tables[t] = vec![table];
    }
    Ok(tables)
}

/// Default half-width in `log p` of the tensor layers.
pub fn default_tensor_span(s: &Setting, income: &IncomeBlock) -> f64 {
    let drift = income
        .permanent
        .values
        .iter()
        .map(|e| e.ln().abs())
        .fold(0.0, f64::max);
    (drift * s.horizon() as f64).max(0.05)
}

fn tensor_layers(s: &Setting, income: &IncomeBlock, opts: &SolveOptions) -> Vec<f64> {
    let n = opts.tensor_layers.max(2);
    let span = opts.tensor_span.unwrap_or_else(|| default_tensor_span(s, income));
    (0..n)
        .map(|k| income.p0 * (-span + 2.0 * span * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// `V(w, p)` across layers: linear in `log p` between the two nearest layers
/// of `log V`, extrapolated from the end pair.
struct LayerValues {
    log_p: Vec<f64>,
    interps: Vec<Interpolant>,
}

impl LayerValues {
    fn value(&self, w: f64, p: f64) -> Result<f64> {
        let lp = p.ln();
        let n = self.log_p.len();
        let k = self.log_p.partition_point(|&q| q <= lp).clamp(1, n - 1) - 1;
        let lam = (lp - self.log_p[k]) / (self.log_p[k + 1] - self.log_p[k]);
        let a = self.interps[k].value(w)?.ln();
        let b = self.interps[k + 1].value(w)?.ln();
        Ok(((1.0 - lam) * a + lam * b).exp())
    }
}

fn solve_tensor(
    s: &Setting,
    income: &IncomeBlock,
    grid: &WealthGrid,
    layers: &[f64],
    opts: &SolveOptions,
) -> Result<Vec<Vec<PeriodTable>>> {
    let exec = opts.exec;
    let (cash, savings) = income_grids(grid, income, opts)?;
    let tails = income_tails(s);
    let horizon = s.horizon();
    let mut tables: Vec<Vec<PeriodTable>> = vec![Vec::new(); horizon];
    for t in (0..horizon).rev() {
        let period = &s.periods[t];
        let joint = joint_states(period, Some(income));
        let ce = expand_ce(&period.ce, &joint, period);
        let r = returns(period);
        let next = if t + 1 == horizon {
            None
        } else {
            Some(LayerValues {
                log_p: layers.iter().map(|p| p.ln()).collect(),
                interps: tables[t + 1]
                    .iter()
                    .map(|tb| tb.value_interp())
                    .collect::<Result<_>>()?,
            })
        };
        let terminal: &TerminalUtility = &s.terminal;
        let mut period_tables = Vec::with_capacity(layers.len());
        for &p in layers {
            let outcome = |theta: usize, j: usize, sv: f64| -> Result<f64> {
                let w_state = joint.omega[j];
                let p_next = p * joint.eta[j];
                let w = r[theta][w_state] * sv + p_next * joint.tau[j];
                match &next {
                    None => Ok(terminal.value(w_state, w)),
                    Some(lv) => lv.value(w, p_next),
                }
            };
            period_tables.push(period_table(
                exec,
                &period.aggregator,
                &ce,
                &joint.probs,
                r.len(),
                p,
                cash.scaled(p),
                savings.scaled(p),
                true,
                tails[t],
                outcome,
            )?);
        }
        tables[t] = period_tables;
    }
    Ok(tables)
}
