//! One-dimensional optimisation, root finding and quadrature used across the
//! solvers. Everything here works on plain closures so the callers decide how
//! values and derivatives are produced.

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Location and value of a scalar maximum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Maximum {
    pub x: f64,
    pub value: f64,
    /// The maximum sits on the closed upper end of the interval.
    pub upper_corner: bool,
}

/// Options for [`maximize_with_derivative`].
#[derive(Clone, Copy, Debug)]
pub struct ScanOptions {
    /// Interior scan points used to bracket the maximum.
    pub scan_points: usize,
    /// Whether `hi` itself is feasible.
    pub include_upper: bool,
    /// Fail when the scan shows more than one interior local maximum.
    pub reject_multimodal: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            scan_points: 48,
            include_upper: false,
            reject_multimodal: false,
        }
    }
}

/// Golden-section search for the maximum of `f` on `[a, b]`.
pub fn golden_max<F>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..200 {
        if (b - a).abs() <= tol * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1)?;
        }
    }
    Ok(if f1 >= f2 { (x1, f1) } else { (x2, f2) })
}

/// Bisection on a sign change of `g` over `[a, b]`. `g(a)` and `g(b)` must have
/// opposite signs (non-finite endpoint values are read as ±infinity).
pub fn bisect<G>(mut g: G, mut a: f64, mut b: f64) -> Result<f64>
where
    G: FnMut(f64) -> Result<f64>,
{
    let ga = g(a)?;
    let gb = g(b)?;
    if ga == 0.0 {
        return Ok(a);
    }
    if gb == 0.0 {
        return Ok(b);
    }
    if ga.signum() == gb.signum() {
        return Err(Error::NotBracketed(format!(
            "no sign change on [{a}, {b}] ({ga:e}, {gb:e})"
        )));
    }
    let a_positive = ga > 0.0;
    for _ in 0..256 {
        let m = 0.5 * (a + b);
        if m <= a.min(b) || m >= a.max(b) {
            break;
        }
        let gm = g(m)?;
        if gm == 0.0 {
            return Ok(m);
        }
        if (gm > 0.0) == a_positive {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

fn sign_of(d: f64, fallback: f64) -> f64 {
    if d.is_nan() {
        fallback
    } else {
        d
    }
}

/// Maximises `f` on `(lo, hi)` (or `(lo, hi]`) using a coarse scan to bracket
/// the maximum, then bisection on the sign of the derivative `df`. Falls back
/// to golden-section search when the derivative does not change sign inside
/// the bracket.
pub fn maximize_with_derivative<F, D>(
    mut f: F,
    mut df: D,
    lo: f64,
    hi: f64,
    opts: ScanOptions,
) -> Result<Maximum>
where
    F: FnMut(f64) -> Result<f64>,
    D: FnMut(f64) -> Result<f64>,
{
    if !(hi > lo) {
        return Err(Error::NotBracketed(format!("empty interval ({lo}, {hi})")));
    }
    let n = opts.scan_points.max(3);
    let mut xs: Vec<f64> = (1..=n)
        .map(|k| lo + (hi - lo) * k as f64 / (n + 1) as f64)
        .collect();
    if opts.include_upper {
        xs.push(hi);
    }
    let mut vals = Vec::with_capacity(xs.len());
    for &x in &xs {
        vals.push(f(x)?);
    }
    let mut best = 0;
    for (k, &v) in vals.iter().enumerate() {
        if v > vals[best] {
            best = k;
        }
    }
    if opts.reject_multimodal {
        let peaks = (1..vals.len() - 1)
            .filter(|&k| vals[k] > vals[k - 1] && vals[k] > vals[k + 1])
            .count();
        if peaks > 1 {
            return Err(Error::MultipleMaxima { count: peaks });
        }
    }
    let last = xs.len() - 1;
    if opts.include_upper && best == last {
        let d = df(hi)?;
        if d >= 0.0 || d.is_nan() {
            return Ok(Maximum {
                x: hi,
                value: vals[last],
                upper_corner: true,
            });
        }
    }
    let a = if best == 0 { lo } else { xs[best - 1] };
    let b = if best == last { hi } else { xs[best + 1] };
    // endpoints of the domain may be singular, nudge inside
    let mut a_eval = if best == 0 { lo + 1e-3 * (xs[0] - lo) } else { a };
    let mut b_eval = if best == last { hi - 1e-3 * (hi - xs[last]) } else { b };
    let mut da = sign_of(df(a_eval)?, 1.0);
    let mut db = sign_of(df(b_eval)?, -1.0);
    // an optimum closer to the boundary than the nudge: walk towards it
    // geometrically until the derivative brackets it
    for _ in 0..12 {
        if best != 0 || da > 0.0 {
            break;
        }
        let next = lo + 1e-3 * (a_eval - lo);
        match df(next) {
            Ok(d) if next > lo => {
                a_eval = next;
                da = sign_of(d, 1.0);
            }
            _ => break,
        }
    }
    for _ in 0..12 {
        if best != last || db < 0.0 {
            break;
        }
        let next = hi - 1e-3 * (hi - b_eval);
        match df(next) {
            Ok(d) if next < hi => {
                b_eval = next;
                db = sign_of(d, -1.0);
            }
            _ => break,
        }
    }
    let x = if da > 0.0 && db < 0.0 {
        bisect(|x| df(x).map(|d| sign_of(d, 0.0)), a_eval, b_eval)?
    } else {
        golden_max(&mut f, a_eval, b_eval, 1e-12)?.0
    };
    let value = f(x)?;
    if value < vals[best] {
        // bisection landed on a stationary point below the scanned best
        return Ok(Maximum {
            x: xs[best],
            value: vals[best],
            upper_corner: false,
        });
    }
    Ok(Maximum {
        x,
        value,
        upper_corner: false,
    })
}

/// Central difference `(f(x+h) - f(x-h)) / 2h`.
pub fn central_diff<F>(mut f: F, x: f64, h: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

fn simpson_rule(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<F>(
    f: &mut F,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = simpson_rule(a, fa, m, fm, flm);
    let right = simpson_rule(m, fm, b, fb, frm);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    Ok(
        simpson_recurse(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)?
            + simpson_recurse(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)?,
    )
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`, starting from `panels`
/// equal panels.
pub fn adaptive_simpson<F>(mut f: F, a: f64, b: f64, panels: usize, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if a == b {
        return Ok(0.0);
    }
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    let mut x0 = a;
    let mut f0 = f(a)?;
    for k in 0..panels {
        let x1 = if k + 1 == panels { b } else { a + width * (k + 1) as f64 };
        let f1 = f(x1)?;
        let m = 0.5 * (x0 + x1);
        let fm = f(m)?;
        let whole = simpson_rule(x0, f0, x1, f1, fm);
        total += simpson_recurse(&mut f, x0, f0, x1, f1, m, fm, whole, tol / panels as f64, 24)?;
        x0 = x1;
        f0 = f1;
    }
    Ok(total)
}

/// Sign with an explicit zero: `-1`, `0` or `1`.
pub fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, v) = golden_max(|x| Ok(-(x - 0.3) * (x - 0.3) + 2.0), 0.0, 1.0, 1e-12).unwrap();
        assert!((x - 0.3).abs() < 1e-7);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bisect_requires_sign_change() {
        assert!(bisect(|x| Ok(x * x + 1.0), -1.0, 1.0).is_err());
        let r = bisect(|x| Ok(x * x - 2.0), 0.0, 2.0).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn derivative_maximiser_is_machine_precise() {
        let m = maximize_with_derivative(
            |x| Ok(x.ln() + 2.0 * (1.0 - x).ln()),
            |x| Ok(1.0 / x - 2.0 / (1.0 - x)),
            0.0,
            1.0,
            ScanOptions::default(),
        )
        .unwrap();
        assert!((m.x - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn upper_corner_detected() {
        let m = maximize_with_derivative(
            Ok,
            |_| Ok(1.0),
            0.0,
            2.0,
            ScanOptions {
                include_upper: true,
                ..ScanOptions::default()
            },
        )
        .unwrap();
        assert!(m.upper_corner);
        assert_eq!(m.x, 2.0);
    }

    #[test]
    fn multimodal_rejected() {
        let r = maximize_with_derivative(
            |x| Ok((6.0 * x).sin()),
            |x| Ok(6.0 * (6.0 * x).cos()),
            0.0,
            3.0,
            ScanOptions {
                reject_multimodal: true,
                ..ScanOptions::default()
            },
        );
        assert!(matches!(r, Err(Error::MultipleMaxima { .. })));
    }

    #[test]
    fn simpson_integrates_smooth_functions() {
        let v = adaptive_simpson(|x| Ok(x.exp()), 0.0, 1.0, 4, 1e-12).unwrap();
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-11);
        assert_eq!(adaptive_simpson(Ok, 0.5, 0.5, 4, 1e-9).unwrap(), 0.0);
    }
}
