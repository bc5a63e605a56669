//! Synthetic panels of homothetic agents facing an observable return shifter,
//! and the within-group estimator that recovers the EIS from the response of
//! the consumption-savings ratio.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aggregator::Aggregator;
use crate::error::{Error, Result};
use crate::parallel::{try_map_range, Execution};
use crate::report::{num, write_csv};
use crate::setting::Setting;
use crate::solver::solve_homothetic;

/// Agents sharing preferences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Group {
    pub name: String,
    pub psi: f64,
    pub beta: f64,
    pub agents: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ShifterDesign {
    /// Each observation draws `lo` or `hi` with equal probability.
    TwoPoint { lo: f64, hi: f64 },
    /// Uniform over `n` evenly spaced values.
    Grid { lo: f64, hi: f64, n: usize },
}

impl ShifterDesign {
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            ShifterDesign::TwoPoint { lo, hi } => {
                if rng.random_bool(0.5) {
                    hi
                } else {
                    lo
                }
            }
            ShifterDesign::Grid { lo, hi, n } => {
                let k = rng.random_range(0..n.max(1));
                if n <= 1 {
                    lo
                } else {
                    lo + (hi - lo) * k as f64 / (n - 1) as f64
                }
            }
        }
    }

    fn range(&self) -> (f64, f64) {
        match *self {
            ShifterDesign::TwoPoint { lo, hi } | ShifterDesign::Grid { lo, hi, .. } => (lo.min(hi), lo.max(hi)),
        }
    }
}

/// Panel design. The shifter `x` multiplies every first-period return by
/// `exp(loading x)`, so `d log g / dx = loading` for homogeneous
/// certainty equivalents.
#[derive(Clone, Debug)]
pub struct PanelSpec {
    /// Homothetic template; its aggregators are replaced per group.
    pub template: Setting,
    pub groups: Vec<Group>,
    pub periods: usize,
    pub design: ShifterDesign,
    pub loading: f64,
    /// Standard deviation of multiplicative log-normal consumption noise.
    pub noise_sd: f64,
    pub wealth: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PanelRow {
    pub agent: usize,
    pub t: usize,
    pub group: usize,
    pub c: f64,
    pub w: f64,
    pub x: f64,
    /// True continuation scale `g` (oracle only).
    pub g: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub groups: Vec<String>,
    pub rows: Vec<PanelRow>,
    pub seed: u64,
}

/// Homothetic solution for one agent at one shifter value:
/// `(consumption share, g)`.
pub fn agent_share(template: &Setting, beta: f64, psi: f64, loading: f64, x: f64) -> Result<(f64, f64)> {
    let mut s = template.clone();
    let agg = Aggregator::epstein_zin(beta, psi)?;
    for p in &mut s.periods {
        p.aggregator = agg.clone();
    }
    let tilt = (loading * x).exp();
    for p in &mut s.periods[0].portfolios {
        p.returns.iter_mut().for_each(|r| *r *= tilt);
    }
    let h = solve_homothetic(&s)?.homothetic.expect("homothetic solution");
    Ok((h.share[0], h.rho[0]))
}

/// Draws the panel. Agent `i` uses a generator seeded with `seed + i`.
pub fn synth_panel(spec: &PanelSpec, seed: u64, exec: Execution) -> Result<Panel> {
    if !spec.template.is_homothetic() {
        return Err(Error::NotHomothetic("panel templates must be homothetic".into()));
    }
    if !(spec.wealth.0 > 0.0 && spec.wealth.1 >= spec.wealth.0) {
        return Err(Error::InvalidProblem("wealth range must be positive".into()));
    }
    let owner: Vec<usize> = spec
        .groups
        .iter()
        .enumerate()
        .flat_map(|(g, grp)| std::iter::repeat_n(g, grp.agents))
        .collect();
    let per_agent = try_map_range(exec, owner.len(), |i| {
        let grp = &spec.groups[owner[i]];
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let mut rows = Vec::with_capacity(spec.periods);
        for t in 0..spec.periods {
            let x = spec.design.draw(&mut rng);
            let w = rng.random_range(spec.wealth.0..=spec.wealth.1);
            let z: f64 = StandardNormal.sample(&mut rng);
            let (share, g) = agent_share(&spec.template, grp.beta, grp.psi, spec.loading, x)?;
            let c = if spec.noise_sd == 0.0 {
                share * w
            } else {
                (share * w * (spec.noise_sd * z).exp()).min(w * (1.0 - 1e-9))
            };
            rows.push(PanelRow {
                agent: i,
                t,
                group: owner[i],
                c,
                w,
                x,
                g,
            });
        }
        Ok::<_, Error>(rows)
    })?;
    Ok(Panel {
        groups: spec.groups.iter().map(|g| g.name.clone()).collect(),
        rows: per_agent.into_iter().flatten().collect(),
        seed,
    })
}

impl Panel {
    /// Checks `0 < c < w` and that shifters lie in `range`.
    pub fn check(&self, range: (f64, f64)) -> Result<()> {
        for r in &self.rows {
            if !(r.c > 0.0 && r.c < r.w) {
                return Err(Error::InvalidProblem(format!(
                    "agent {} period {}: consumption {} outside (0, {})",
                    r.agent, r.t, r.c, r.w
                )));
            }
            if r.x < range.0 || r.x > range.1 {
                return Err(Error::InvalidProblem(format!("shifter {} outside {range:?}", r.x)));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(
            path,
            &["agent", "t", "group", "c", "w", "x", "g"],
            self.rows.iter().map(|r| {
                vec![
                    r.agent.to_string(),
                    r.t.to_string(),
                    self.groups[r.group].clone(),
                    num(r.c),
                    num(r.w),
                    num(r.x),
                    num(r.g),
                ]
            }),
        )
    }
}

pub fn design_range(d: &ShifterDesign) -> (f64, f64) {
    d.range()
}

/// What is known about `d log g / dx`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FirstStage {
    Known(f64),
    /// Estimated from the recorded `g` (oracle).
    FromPanel,
    /// Only the sign is assumed.
    Sign(i8),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupEstimate {
    pub group: String,
    pub observations: usize,
    /// Within-agent slope of `log(c / (w - c))` on `x`.
    pub reduced_form: f64,
    pub first_stage: Option<f64>,
    pub psi_hat: Option<f64>,
    /// `sign(1 - psi)`.
    pub sign_one_minus_psi: i8,
}

/// `psi = 1 - reduced form / first stage`.
pub fn psi_from_elasticities(reduced_form: f64, first_stage: f64) -> Result<f64> {
    if first_stage == 0.0 {
        return Err(Error::FirstStageZero);
    }
    Ok(1.0 - reduced_form / first_stage)
}

/// Least-squares slope of `y` on `x` after removing agent means.
fn within_slope(rows: &[(usize, f64, f64)], what: &str) -> Result<f64> {
    let mut sums: BTreeMap<usize, (f64, f64, f64)> = BTreeMap::new();
    for &(a, x, y) in rows {
        let e = sums.entry(a).or_default();
        e.0 += x;
        e.1 += y;
        e.2 += 1.0;
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(a, x, y) in rows {
        let (mx, my, n) = sums[&a];
        let (dx, dy) = (x - mx / n, y - my / n);
        sxy += dx * dy;
        sxx += dx * dx;
    }
    if !(sxx > 0.0) {
        return Err(Error::DegenerateShifter(what.to_string()));
    }
    Ok(sxy / sxx)
}

pub fn estimate_eis(panel: &Panel, first_stage: FirstStage) -> Result<Vec<GroupEstimate>> {
    let mut out = Vec::new();
    for (g, name) in panel.groups.iter().enumerate() {
        let rows: Vec<&PanelRow> = panel.rows.iter().filter(|r| r.group == g).collect();
        let y: Vec<(usize, f64, f64)> = rows.iter().map(|r| (r.agent, r.x, (r.c / (r.w - r.c)).ln())).collect();
        let rf = within_slope(&y, name)?;
        let fs = match first_stage {
            FirstStage::Known(v) => Some(v),
            FirstStage::FromPanel => {
                let gs: Vec<(usize, f64, f64)> = rows.iter().map(|r| (r.agent, r.x, r.g.ln())).collect();
                Some(within_slope(&gs, name)?)
            }
            FirstStage::Sign(_) => None,
        };
        let (psi_hat, sign_one_minus_psi) = match (fs, first_stage) {
            (Some(v), _) => {
                let psi = psi_from_elasticities(rf, v)?;
                (Some(psi), crate::numerics::sign(1.0 - psi))
            }
            (None, FirstStage::Sign(s)) => {
                if s == 0 {
                    return Err(Error::FirstStageZero);
                }
                (None, crate::numerics::sign(rf) * s.signum())
            }
            _ => unreachable!(),
        };
        out.push(GroupEstimate {
            group: name.clone(),
            observations: rows.len(),
            reduced_form: rf,
            first_stage: fs,
            psi_hat,
            sign_one_minus_psi,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certainty::CertaintyEquivalent;
    use crate::setting::{Period, Portfolio, StateSpace, TerminalUtility};

    fn template() -> Setting {
        Setting::stationary(
            3,
            Period {
                aggregator: Aggregator::epstein_zin(0.9, 1.0).unwrap(),
                ce: CertaintyEquivalent::crra(2.0),
                states: StateSpace::uniform(2),
                portfolios: vec![
                    Portfolio::riskless("bond", 1.02, 2),
                    Portfolio::new("stock", vec![0.9, 1.25]),
                ],
            },
            TerminalUtility::linear(1.0),
        )
    }

    fn spec(psi: f64, noise: f64) -> PanelSpec {
        PanelSpec {
            template: template(),
            groups: vec![Group {
                name: "g".into(),
                psi,
                beta: 0.9,
                agents: 20,
            }],
            periods: 5,
            design: ShifterDesign::TwoPoint { lo: -1.0, hi: 1.0 },
            loading: 0.2,
            noise_sd: noise,
            wealth: (1.0, 10.0),
        }
    }

    #[test]
    fn arithmetic() {
        assert!((psi_from_elasticities(-0.1, 0.1).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(psi_from_elasticities(0.0, 0.3).unwrap(), 1.0);
        assert!(matches!(psi_from_elasticities(0.1, 0.0), Err(Error::FirstStageZero)));
    }

    #[test]
    fn noiseless_shares_reproduce_solver() {
        let s = spec(0.5, 0.0);
        let panel = synth_panel(&s, 3, Execution::Sequential).unwrap();
        for r in &panel.rows {
            let (share, _) = agent_share(&s.template, 0.9, 0.5, 0.2, r.x).unwrap();
            assert_eq!(r.c, share * r.w);
        }
    }

    #[test]
    fn unit_eis_shares_are_constant() {
        let panel = synth_panel(&spec(1.0, 0.0), 3, Execution::Sequential).unwrap();
        let shares: Vec<f64> = panel.rows.iter().map(|r| r.c / r.w).collect();
        assert!(shares.iter().all(|s| (s - shares[0]).abs() < 1e-14));
    }

    #[test]
    fn deterministic_and_recovers_psi() {
        let s = spec(0.5, 0.0);
        let a = synth_panel(&s, 11, Execution::Sequential).unwrap();
        let b = synth_panel(&s, 11, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let est = estimate_eis(&a, FirstStage::Known(0.2)).unwrap();
        assert!((est[0].psi_hat.unwrap() - 0.5).abs() < 0.005);
        let est = estimate_eis(&a, FirstStage::Sign(1)).unwrap();
        assert_eq!(est[0].sign_one_minus_psi, 1);
    }

    #[test]
    fn constant_shifter_is_degenerate() {
        let mut s = spec(0.5, 0.0);
        s.design = ShifterDesign::TwoPoint { lo: 0.3, hi: 0.3 };
        let panel = synth_panel(&s, 1, Execution::Sequential).unwrap();
        assert!(matches!(
            estimate_eis(&panel, FirstStage::Known(0.2)),
            Err(Error::DegenerateShifter(_))
        ));
    }
}
