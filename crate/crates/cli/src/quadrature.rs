//! Gauss-Hermite discretisation for continuous shocks. Settings only accept
//! finite supports, so log-normal income or return shocks go through here.

use anyhow::{bail, Result};
use eislab::Distribution;

/// Nodes and weights for `int exp(-x^2) f(x) dx`, nodes descending.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        bail!("at least one quadrature node is required");
    }
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..100 {
            let (mut p1, mut p2) = (PIM4, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let j = j as f64;
                p1 = z * (2.0 / (j + 1.0)).sqrt() * p2 - (j / (j + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-14 * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            bail!("Gauss-Hermite node {i} of {n} did not converge");
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    Ok((x, w))
}

/// Mean-one log-normal `exp(sigma Z - sigma^2 / 2)` on `n` nodes, ascending.
pub fn lognormal(sigma: f64, n: usize) -> Result<Distribution> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        bail!("sigma must be finite and non-negative, got {sigma}");
    }
    let (x, w) = gauss_hermite(n)?;
    let total: f64 = w.iter().sum();
    let mut pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(&w)
        .map(|(x, w)| ((sigma * std::f64::consts::SQRT_2 * x - 0.5 * sigma * sigma).exp(), w / total))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (values, probs) = pairs.into_iter().unzip();
    Ok(Distribution { values, probs })
}

pub fn to_toml(d: &Distribution) -> String {
    let join = |xs: &[f64]| xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
    format!("{{ values = [{}], probs = [{}] }}", join(&d.values), join(&d.probs))
}
