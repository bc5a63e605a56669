//! Comparative statics of optimal consumption in a one-period reduction:
//! elasticities, the local response `c_alpha` with a finite-difference
//! oracle, discrete responses along a path, and the supermodularity
//! certificate for monotone consumption.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregator::Aggregator;
use crate::environment::{
    optimal_consumption, ContinuationPoint, Environment, LinearEnvironment, LinearScale, PowerEnvironment,
};
use crate::error::{Error, Result};
use crate::numerics::{adaptive_simpson, sign};
use crate::parallel::{map_range, Execution};
use crate::report::{num, write_csv};

/// Responses with `|1 - eps psi|` at or below this are not sign-tested.
pub const KNIFE_EDGE: f64 = 1e-4;
/// Relative step for alpha finite differences.
pub const ALPHA_STEP: f64 = 1e-5;

/// EIS at the optimum for wealth `w`.
pub fn compute_eis<E: Environment + ?Sized>(env: &E, w: f64, alpha: f64) -> Result<f64> {
    let agg = env.aggregator();
    if let Some(psi) = agg.psi_parameter() {
        return Ok(psi);
    }
    let opt = optimal_consumption(env, w, alpha)?;
    let k = env.continuation(opt.savings, alpha)?;
    agg.eis_at(opt.c, k.v)
}

/// REMV `(v_wa / v_w) / (v_a / v)` at savings `s`. Exactly 1 when the
/// environment is linear in savings.
pub fn remv_at<E: Environment + ?Sized>(env: &E, s: f64, alpha: f64) -> Result<f64> {
    if let Some((_, ga)) = env.homothetic_scale(alpha) {
        return if ga == 0.0 { Err(Error::UndefinedRemv) } else { Ok(1.0) };
    }
    let k = env.continuation(s, alpha)?;
    remv_from(&k)
}

fn remv_from(k: &ContinuationPoint) -> Result<f64> {
    if k.v_a == 0.0 {
        return Err(Error::UndefinedRemv);
    }
    if !(k.v_w > 0.0) {
        return Err(Error::Domain(format!("marginal value of wealth {} is not positive", k.v_w)));
    }
    Ok((k.v_wa / k.v_w) / (k.v_a / k.v))
}

/// REMV at the optimal savings for wealth `w`.
pub fn compute_remv<E: Environment + ?Sized>(env: &E, w: f64, alpha: f64) -> Result<f64> {
    let opt = optimal_consumption(env, w, alpha)?;
    remv_at(env, opt.savings, alpha)
}

/// Local consumption response with its finite-difference oracle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResponseReport {
    pub w: f64,
    pub alpha: f64,
    pub c: f64,
    pub psi: f64,
    pub eps: f64,
    /// From the elasticity formula.
    pub c_alpha: f64,
    /// Central difference of re-solved consumption.
    pub c_alpha_fd: f64,
    /// `|LHS - RHS|` of the response equation with `c_alpha_fd` on the left.
    pub residual: f64,
    pub sign_pred: i8,
    pub sign_obs: i8,
    /// `v_ww <= 0` at the optimal savings.
    pub concave: bool,
    pub knife_edge: bool,
    pub agree: bool,
}

struct Local {
    c: f64,
    k: ContinuationPoint,
    psi: f64,
    eps: f64,
    c_alpha: f64,
    /// Coefficient of `c_alpha` and right-hand side of the response equation.
    lhs_coef: f64,
    rhs: f64,
}

fn local<E: Environment + ?Sized>(env: &E, w: f64, alpha: f64) -> Result<Local> {
    let agg = env.aggregator();
    let opt = optimal_consumption(env, w, alpha)?;
    if opt.corner {
        return Err(Error::NotInterior { wealth: w });
    }
    let (c, s) = (opt.c, opt.savings);
    if !env.smooth_at(s, alpha) {
        return Err(Error::Kink { alpha, savings: s });
    }
    let k = env.continuation(s, alpha)?;
    let psi = match agg.psi_parameter() {
        Some(p) => p,
        None => agg.eis_at(c, k.v)?,
    };
    let eps = match env.homothetic_scale(alpha) {
        Some((_, ga)) if ga != 0.0 => 1.0,
        _ => remv_from(&k)?,
    };
    let lhs_coef = 1.0 / c + k.v_w / k.v - psi * k.v_ww / k.v_w;
    let rhs = (k.v_a / k.v) * (1.0 - eps * psi);
    let c_alpha = if agg.is_homogeneous() {
        rhs / lhs_coef
    } else {
        // implicit function theorem on f_c - f_v v_w = 0
        let p = agg.partials(c, k.v);
        let f_ca = p.fcv * k.v_a - p.fvv * k.v_w * k.v_a - p.fv * k.v_wa;
        let f_cc = p.fcc - 2.0 * p.fcv * k.v_w + p.fvv * k.v_w * k.v_w + p.fv * k.v_ww;
        -f_ca / f_cc
    };
    Ok(Local {
        c,
        k,
        psi,
        eps,
        c_alpha,
        lhs_coef,
        rhs,
    })
}

/// `d c / d alpha` by re-solving at neighbouring alphas; one-sided
/// second-order stencils at the ends of the admissible range. When savings
/// are the smaller side of the budget they are differenced instead
/// (`c_alpha = -s_alpha`), since `c` cannot resolve their changes.
pub fn consumption_alpha_fd<E: Environment + ?Sized>(env: &E, w: f64, alpha: f64) -> Result<f64> {
    let h = ALPHA_STEP * alpha.abs().max(1.0);
    let (lo, hi) = env.alpha_range();
    let at = optimal_consumption(env, w, alpha)?;
    let by_savings = at.savings - env.min_savings(alpha) < at.c;
    let c = |a: f64| {
        optimal_consumption(env, w, a).map(|o| if by_savings { -o.savings } else { o.c })
    };
    if alpha - h >= lo && alpha + h <= hi {
        Ok((c(alpha + h)? - c(alpha - h)?) / (2.0 * h))
    } else if alpha + 2.0 * h <= hi {
        Ok((-3.0 * c(alpha)? + 4.0 * c(alpha + h)? - c(alpha + 2.0 * h)?) / (2.0 * h))
    } else {
        Ok((3.0 * c(alpha)? - 4.0 * c(alpha - h)? + c(alpha - 2.0 * h)?) / (2.0 * h))
    }
}

pub fn consumption_response<E: Environment + ?Sized>(env: &E, w: f64, alpha: f64) -> Result<ResponseReport> {
    let l = local(env, w, alpha)?;
    let c_alpha_fd = consumption_alpha_fd(env, w, alpha)?;
    let gap = 1.0 - l.eps * l.psi;
    let sign_pred = sign(gap) * sign(l.k.v_a);
    let sign_obs = sign(c_alpha_fd);
    Ok(ResponseReport {
        w,
        alpha,
        c: l.c,
        psi: l.psi,
        eps: l.eps,
        c_alpha: l.c_alpha,
        c_alpha_fd,
        residual: (l.lhs_coef * c_alpha_fd - l.rhs).abs(),
        sign_pred,
        sign_obs,
        concave: l.k.v_ww <= 0.0,
        knife_edge: gap.abs() <= KNIFE_EDGE,
        agree: sign_pred == sign_obs,
    })
}

/// Integrated and directly re-solved consumption change between two alphas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscreteResponse {
    pub integral: f64,
    pub direct: f64,
    pub agree: bool,
}

pub fn discrete_response<E: Environment + ?Sized>(
    env: &E,
    w: f64,
    alpha0: f64,
    alpha1: f64,
    n_steps: usize,
) -> Result<DiscreteResponse> {
    if alpha0 == alpha1 {
        return Ok(DiscreteResponse {
            integral: 0.0,
            direct: 0.0,
            agree: true,
        });
    }
    let integral = adaptive_simpson(|a| Ok(local(env, w, a)?.c_alpha), alpha0, alpha1, n_steps, 1e-10)?;
    let direct = optimal_consumption(env, w, alpha1)?.c - optimal_consumption(env, w, alpha0)?.c;
    Ok(DiscreteResponse {
        integral,
        direct,
        agree: (integral - direct).abs() <= 1e-4,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// Left-hand side below 1 everywhere: consumption increasing in alpha.
    Below,
    /// Above 1 everywhere: consumption decreasing in alpha.
    Above,
    Mixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub verdict: Verdict,
    /// Distance of the sampled left-hand side from 1 on the certified side
    /// (negative when mixed).
    pub margin: f64,
    pub lhs_min: f64,
    pub lhs_max: f64,
    /// Range of `(1/w) f_v / f_cv` when the environment is linear in savings.
    pub homothetic: Option<(f64, f64)>,
    /// Argmax reversals on the alpha ladder against the certified direction.
    pub violations: usize,
    /// Pairs of ladder neighbours compared.
    pub comparisons: usize,
}

/// Options for [`monotone_condition`].
#[derive(Clone, Copy, Debug)]
pub struct CertificateOptions {
    pub wealth_samples: usize,
    pub alpha_ladder: usize,
    pub consumption_samples: usize,
    /// Brute-force consumption grid size.
    pub brute_grid: usize,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        CertificateOptions {
            wealth_samples: 5,
            alpha_ladder: 20,
            consumption_samples: 40,
            brute_grid: 4001,
        }
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Left-hand side of the supermodularity condition,
/// `(f_v v_wa / v_a + v_w f_vv) / f_cv`, at consumption `c` out of wealth `w`.
pub fn monotone_lhs<E: Environment + ?Sized>(env: &E, c: f64, w: f64, alpha: f64) -> Result<f64> {
    let k = env.continuation(w - c, alpha)?;
    let p = env.aggregator().partials(c, k.v);
    if !(p.fcv > 0.0) {
        return Err(Error::CrossPartial(p.fcv));
    }
    if !(k.v_a > 0.0) {
        return Err(Error::Domain(format!("v_alpha = {} must be positive", k.v_a)));
    }
    Ok((p.fv * k.v_wa / k.v_a + k.v_w * p.fvv) / p.fcv)
}

/// Evaluates the condition on the box and cross-checks it by brute-force
/// argmax monotonicity on an alpha ladder. For each wealth the condition is
/// sampled on the consumption range spanned by the optima plus padding,
/// which is all supermodularity needs to deliver monotone maximisers.
pub fn monotone_condition<E: Environment + ?Sized>(
    env: &E,
    w_box: (f64, f64),
    alpha_box: (f64, f64),
    opts: CertificateOptions,
) -> Result<Certificate> {
    let ladder = linspace(alpha_box.0, alpha_box.1, opts.alpha_ladder);
    let linear = env.homothetic_scale(ladder[0]).is_some();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut hlo, mut hhi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut argmaxes = Vec::new();
    for &w in &linspace(w_box.0, w_box.1, opts.wealth_samples) {
        let cap = ladder
            .iter()
            .map(|&a| w - env.min_savings(a))
            .fold(f64::INFINITY, f64::min);
        let optima = ladder
            .iter()
            .map(|&a| optimal_consumption(env, w, a).map(|o| o.c))
            .collect::<Result<Vec<_>>>()?;
        let (cmin, cmax) = optima
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &c| (a.min(c), b.max(c)));
        let pad = 0.1 * (cmax - cmin) + 0.02 * cap;
        let (ca, cb) = ((cmin - pad).max(1e-3 * cap), (cmax + pad).min((1.0 - 1e-3) * cap));
        for &c in &linspace(ca, cb, opts.consumption_samples) {
            for &a in &ladder {
                let v = monotone_lhs(env, c, w, a)?;
                lo = lo.min(v);
                hi = hi.max(v);
                if linear {
                    let k = env.continuation(w - c, a)?;
                    let p = env.aggregator().partials(c, k.v);
                    let x = p.fv / p.fcv / w;
                    hlo = hlo.min(x);
                    hhi = hhi.max(x);
                }
            }
        }
        // brute force on the same consumption range
        let grid = linspace(ca, cb, opts.brute_grid);
        let agg = env.aggregator();
        let mut row = Vec::with_capacity(ladder.len());
        for &a in &ladder {
            let mut best = (f64::NEG_INFINITY, 0);
            for (i, &c) in grid.iter().enumerate() {
                let val = agg.value(c, env.continuation(w - c, a)?.v);
                if val > best.0 {
                    best = (val, i);
                }
            }
            row.push(best.1);
        }
        argmaxes.push(row);
    }
    let verdict = if hi < 1.0 {
        Verdict::Below
    } else if lo > 1.0 {
        Verdict::Above
    } else {
        Verdict::Mixed
    };
    let margin = match verdict {
        Verdict::Below => 1.0 - hi,
        Verdict::Above => lo - 1.0,
        Verdict::Mixed => -(1.0 - lo).min(hi - 1.0),
    };
    let mut violations = 0;
    let mut comparisons = 0;
    for row in &argmaxes {
        for pair in row.windows(2) {
            comparisons += 1;
            let bad = match verdict {
                Verdict::Below => pair[1] < pair[0],
                Verdict::Above => pair[1] > pair[0],
                Verdict::Mixed => false,
            };
            violations += bad as usize;
        }
    }
    Ok(Certificate {
        verdict,
        margin,
        lhs_min: lo,
        lhs_max: hi,
        homothetic: linear.then_some((hlo, hhi)),
        violations,
        comparisons,
    })
}

/// Randomly drawn one-period environment with concave continuation value.
#[derive(Clone, Debug)]
pub enum RandomEnvironment {
    Linear(LinearEnvironment),
    Power(PowerEnvironment),
}

impl Environment for RandomEnvironment {
    fn aggregator(&self) -> &Aggregator {
        match self {
            RandomEnvironment::Linear(e) => e.aggregator(),
            RandomEnvironment::Power(e) => e.aggregator(),
        }
    }

    fn continuation(&self, s: f64, alpha: f64) -> Result<ContinuationPoint> {
        match self {
            RandomEnvironment::Linear(e) => e.continuation(s, alpha),
            RandomEnvironment::Power(e) => e.continuation(s, alpha),
        }
    }

    fn alpha_range(&self) -> (f64, f64) {
        match self {
            RandomEnvironment::Linear(e) => e.alpha_range(),
            RandomEnvironment::Power(e) => e.alpha_range(),
        }
    }

    fn homothetic_scale(&self, alpha: f64) -> Option<(f64, f64)> {
        match self {
            RandomEnvironment::Linear(e) => e.homothetic_scale(alpha),
            RandomEnvironment::Power(e) => e.homothetic_scale(alpha),
        }
    }
}

/// A random environment with an evaluation point `(w, alpha)`.
#[derive(Clone, Debug)]
pub struct RandomCase {
    pub env: RandomEnvironment,
    pub w: f64,
    pub alpha: f64,
}

/// Epstein-Zin with `beta` in (0.2, 0.95) and `psi` log-uniform in [0.2, 5].
/// Half the draws are linear in savings; the rest are
/// `g0 exp(k alpha) s^kappa + m0 + m1 alpha` with `kappa` in (0.2, 1).
pub fn random_case<R: Rng>(rng: &mut R) -> RandomCase {
    let beta = rng.random_range(0.2..0.95);
    let psi = (rng.random_range(0.2f64.ln()..5.0f64.ln())).exp();
    let aggregator = Aggregator::epstein_zin(beta, psi).expect("valid draw");
    let g0 = rng.random_range(0.5..2.0);
    let k = rng.random_range(0.05..1.0);
    let env = if rng.random_bool(0.5) {
        RandomEnvironment::Linear(LinearEnvironment {
            aggregator,
            scale: LinearScale::Exponential { g0, k },
        })
    } else {
        RandomEnvironment::Power(PowerEnvironment {
            aggregator,
            g0,
            k,
            kappa: rng.random_range(0.2..1.0),
            m0: rng.random_range(0.0..0.5),
            m1: rng.random_range(0.0..0.3),
        })
    };
    RandomCase {
        env,
        w: rng.random_range(0.5..5.0),
        alpha: rng.random_range(-0.5..0.5),
    }
}

/// Outcome of the randomized sign-law suite.
#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub reports: Vec<ResponseReport>,
    /// Cases with a non-knife-edge, concave, interior response.
    pub tested: usize,
    pub agreeing: usize,
    pub knife_edge: usize,
    /// Corners, kinks or failed re-solves.
    pub skipped: usize,
    pub max_residual: f64,
}

impl SuiteReport {
    pub fn all_agree(&self) -> bool {
        self.tested > 0 && self.agreeing == self.tested
    }
}

/// Runs `n` random cases; case `i` draws from a generator seeded with
/// `seed + i`, so results do not depend on the execution mode.
pub fn sign_suite(n: usize, seed: u64, exec: Execution) -> SuiteReport {
    let results = map_range(exec, n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let case = random_case(&mut rng);
        consumption_response(&case.env, case.w, case.alpha)
    });
    let mut out = SuiteReport::default();
    for r in results {
        match r {
            Ok(rep) => {
                if rep.knife_edge {
                    out.knife_edge += 1;
                } else if rep.concave {
                    out.tested += 1;
                    out.agreeing += rep.agree as usize;
                    out.max_residual = out.max_residual.max(rep.residual);
                }
                out.reports.push(rep);
            }
            Err(_) => out.skipped += 1,
        }
    }
    out
}

pub fn write_reports_csv(path: &Path, reports: &[ResponseReport]) -> Result<()> {
    write_csv(
        path,
        &[
            "w",
            "alpha",
            "psi",
            "eps",
            "c_alpha",
            "c_alpha_fd",
            "sign_pred",
            "sign_obs",
            "concave_flag",
        ],
        reports.iter().map(|r| {
            vec![
                num(r.w),
                num(r.alpha),
                num(r.psi),
                num(r.eps),
                num(r.c_alpha),
                num(r.c_alpha_fd),
                r.sign_pred.to_string(),
                r.sign_obs.to_string(),
                (r.concave as u8).to_string(),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{TwoPeriodEnvironment, TwoPeriodShift};

    fn linear(psi: f64, k: f64) -> LinearEnvironment {
        LinearEnvironment {
            aggregator: Aggregator::epstein_zin(0.6, psi).unwrap(),
            scale: LinearScale::Exponential { g0: 1.2, k },
        }
    }

    #[test]
    fn eis_is_the_parameter() {
        assert_eq!(compute_eis(&linear(2.0, 0.3), 1.0, 0.0).unwrap(), 2.0);
        let cd = LinearEnvironment {
            aggregator: Aggregator::cobb_douglas(0.4).unwrap(),
            scale: LinearScale::Exponential { g0: 1.0, k: 0.2 },
        };
        assert_eq!(compute_eis(&cd, 1.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn homothetic_remv_is_one() {
        assert_eq!(compute_remv(&linear(0.5, 0.4), 2.0, 0.1).unwrap(), 1.0);
        let flat = linear(0.5, 0.0);
        assert!(matches!(compute_remv(&flat, 2.0, 0.1), Err(Error::UndefinedRemv)));
    }

    #[test]
    fn two_period_rate_remv() {
        let env = TwoPeriodEnvironment {
            aggregator: Aggregator::cobb_douglas(0.5).unwrap(),
            e2: 0.5,
            rf: 1.0,
            rho: 1.0,
            shift: TwoPeriodShift::Rate,
        };
        assert!((remv_at(&env, 0.25, 1.0).unwrap() - 3.0).abs() < 1e-15);
        let r = consumption_response(&env, 1.0, 1.0).unwrap();
        assert!((r.c - 0.75).abs() < 1e-12);
        assert!(r.c_alpha < 0.0 && r.c_alpha_fd < 0.0 && r.agree);
    }

    #[test]
    fn unit_eis_homothetic_response_vanishes() {
        let env = LinearEnvironment {
            aggregator: Aggregator::cobb_douglas(0.5).unwrap(),
            scale: LinearScale::Exponential { g0: 1.0, k: 0.5 },
        };
        let r = consumption_response(&env, 1.0, 0.0).unwrap();
        assert_eq!(r.c_alpha, 0.0);
        assert!(r.c_alpha_fd.abs() < 1e-9);
        let d = discrete_response(&env, 1.0, 0.0, 1.0, 4).unwrap();
        assert!(d.integral.abs() < 1e-12 && d.direct.abs() < 1e-9);
    }

    #[test]
    fn high_eis_homothetic_response_is_negative() {
        let r = consumption_response(&linear(2.0, 0.5), 1.5, 0.2).unwrap();
        assert!(r.c_alpha < 0.0 && r.sign_obs == -1);
        assert!((r.c_alpha - r.c_alpha_fd).abs() <= 1e-5 * (1.0 + r.c_alpha.abs()));
    }

    #[test]
    fn homothetic_reduces_to_share_formula() {
        let env = linear(2.0, 0.5);
        let (w, a) = (1.5, 0.2);
        let r = consumption_response(&env, w, a).unwrap();
        // (1/c + 1/(w - c)) c_alpha = (g_alpha / g)(1 - psi)
        let lhs = (1.0 / r.c + 1.0 / (w - r.c)) * r.c_alpha;
        assert!((lhs - 0.5 * (1.0 - 2.0)).abs() < 1e-8);
    }

    #[test]
    fn discrete_matches_direct() {
        let env = PowerEnvironment {
            aggregator: Aggregator::epstein_zin(0.7, 0.6).unwrap(),
            g0: 1.0,
            k: 0.8,
            kappa: 0.6,
            m0: 0.2,
            m1: 0.1,
        };
        let d = discrete_response(&env, 2.0, 0.0, 1.0, 8).unwrap();
        assert!(d.agree, "{d:?}");
        assert!(d.direct > 0.0);
        assert_eq!(discrete_response(&env, 2.0, 0.3, 0.3, 8).unwrap().integral, 0.0);
    }

    #[test]
    fn certificate_for_homothetic_ez() {
        for (psi, verdict) in [(0.5, Verdict::Below), (2.0, Verdict::Above)] {
            let cert = monotone_condition(&linear(psi, 0.5), (1.0, 2.0), (0.0, 1.0), CertificateOptions::default()).unwrap();
            assert_eq!(cert.verdict, verdict);
            assert_eq!(cert.violations, 0);
        }
    }

    #[test]
    fn small_suite_agrees() {
        let r = sign_suite(64, 7, Execution::Sequential);
        assert!(r.tested > 30);
        assert!(r.all_agree());
        assert!(r.max_residual < 1e-6);
    }
}
