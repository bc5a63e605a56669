//! Wealth grids and the interpolants used for tabulated value functions.
//!
//! Interpolation happens in `(log(s + shift), log v)`. With `shift = 0` a
//! function `g * s` is a straight line in these coordinates, so homothetic
//! value functions are reproduced exactly, derivatives included.
//!
//! The default is a monotone cubic. The linear order interpolates `v`
//! itself, linearly in wealth, and extrapolates proportionally to wealth.
//! Every value is then a combination of node values with positive weights, so
//! node-wise inequalities between two tables hold everywhere and backward
//! induction stays a monotone operator; concave node values also give a
//! concave interpolant inside the grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default factor by which evaluation may leave the node range.
pub const DEFAULT_EXTRAPOLATION: f64 = 1e3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Order {
    /// Monotone piecewise cubic (Fritsch-Carlson slopes).
    #[default]
    Cubic,
    /// Piecewise linear, order-preserving.
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WealthGrid {
    nodes: Vec<f64>,
    shift: f64,
    #[serde(default)]
    order: Order,
}

impl WealthGrid {
    /// `n` log-spaced nodes on `[lo, hi]`.
    pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo) || n < 2 {
            return Err(Error::InvalidProblem(format!(
                "log-spaced grid needs 0 < lo < hi and n >= 2 (got {lo}, {hi}, {n})"
            )));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let mut nodes: Vec<f64> = (0..n)
            .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
            .collect();
        nodes[0] = lo;
        nodes[n - 1] = hi;
        Ok(WealthGrid {
            nodes,
            shift: 0.0,
            order: Order::Cubic,
        })
    }

    /// `n` nodes on `[0, hi]` that are log-spaced after adding `shift`.
    pub fn shifted(hi: f64, n: usize, shift: f64) -> Result<Self> {
        if !(shift > 0.0 && hi > 0.0) || n < 2 {
            return Err(Error::InvalidProblem(format!(
                "shifted grid needs shift > 0, hi > 0 and n >= 2 (got {shift}, {hi}, {n})"
            )));
        }
        let base = WealthGrid::log_spaced(shift, hi + shift, n)?;
        let mut nodes: Vec<f64> = base.nodes.iter().map(|x| x - shift).collect();
        nodes[0] = 0.0;
        nodes[n - 1] = hi;
        Ok(WealthGrid {
            nodes,
            shift,
            order: Order::Cubic,
        })
    }

    pub fn from_nodes(nodes: Vec<f64>, shift: f64) -> Result<Self> {
        if nodes.len() < 2 || nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidProblem("grid nodes must be strictly increasing".into()));
        }
        if !(nodes[0] + shift > 0.0) {
            return Err(Error::InvalidProblem("grid must stay positive after the shift".into()));
        }
        Ok(WealthGrid {
            nodes,
            shift,
            order: Order::Cubic,
        })
    }

    pub fn with_order(mut self, order: Order) -> Self {
        self.order = order;
        self
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn scaled(&self, factor: f64) -> Self {
        WealthGrid {
            nodes: self.nodes.iter().map(|x| x * factor).collect(),
            shift: self.shift * factor,
            order: self.order,
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.nodes[0]
    }

    pub fn hi(&self) -> f64 {
        *self.nodes.last().unwrap()
    }
}

/// Value and first two derivatives at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eval {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Interpolant of a positive function in log-log coordinates.
#[derive(Clone, Debug)]
pub struct Interpolant {
    s: Vec<f64>,
    u: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
    shift: f64,
    factor: f64,
    order: Order,
    /// Known asymptotic slope above the grid (linear order only).
    tail: Option<f64>,
}

impl Interpolant {
    pub fn new(grid: &WealthGrid, values: &[f64]) -> Result<Self> {
        Self::with_extrapolation(grid, values, DEFAULT_EXTRAPOLATION)
    }

    pub fn with_extrapolation(grid: &WealthGrid, values: &[f64], factor: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!("tabulated values must be positive, got {v}")));
        }
        let u: Vec<f64> = grid.nodes.iter().map(|s| (s + grid.shift).ln()).collect();
        let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        let d = match grid.order {
            Order::Cubic => pchip_slopes(&u, &y),
            Order::Linear => secant_slopes(&u, &y),
        };
        Ok(Interpolant {
            s: grid.nodes.clone(),
            u,
            y,
            d,
            shift: grid.shift,
            factor,
            order: grid.order,
            tail: None,
        })
    }

    /// Under the linear order, continues above the grid with slope `slope`
    /// from the last node instead of proportionally to wealth.
    pub fn with_tail(mut self, slope: Option<f64>) -> Self {
        self.tail = slope;
        self
    }

    pub fn nodes(&self) -> &[f64] {
        &self.s
    }

    pub fn node_values(&self) -> Vec<f64> {
        self.y.iter().map(|y| y.exp()).collect()
    }

    /// Log-log slopes at the nodes.
    pub fn node_slopes(&self) -> &[f64] {
        &self.d
    }

    pub fn eval(&self, s: f64) -> Result<Eval> {
        let x = s + self.shift;
        let n = self.s.len();
        let lo = (self.s[0] + self.shift) / self.factor;
        let hi = (self.s[n - 1] + self.shift) * self.factor;
        if !(x > 0.0 && x >= lo && x <= hi) {
            return Err(Error::OutOfGrid {
                wealth: s,
                lo: lo - self.shift,
                hi: hi - self.shift,
            });
        }
        let u = x.ln();
        if self.order == Order::Linear {
            return Ok(self.eval_linear(x));
        }
        let (y, yu, yuu) = if u <= self.u[0] {
            (self.y[0] + self.d[0] * (u - self.u[0]), self.d[0], 0.0)
        } else if u >= self.u[n - 1] {
            (
                self.y[n - 1] + self.d[n - 1] * (u - self.u[n - 1]),
                self.d[n - 1],
                0.0,
            )
        } else {
            let k = self.u.partition_point(|&ui| ui <= u).saturating_sub(1).min(n - 2);
            hermite(
                self.u[k],
                self.u[k + 1],
                self.y[k],
                self.y[k + 1],
                self.d[k],
                self.d[k + 1],
                u,
            )
        };
        let v = y.exp();
        Ok(Eval {
            v,
            d1: v * yu / x,
            d2: v * (yu * yu - yu + yuu) / (x * x),
        })
    }

    /// Piecewise linear in shifted wealth `x`, proportional to `x` outside
/// unless a tail slope is known.
    fn eval_linear(&self, x: f64) -> Eval {
        let n = self.s.len();
        let node = |k: usize| (self.s[k] + self.shift, self.y[k].exp());
        let (x0, v0) = node(0);
        let (xn, vn) = node(n - 1);
        if let (Some(b), true) = (self.tail, x >= xn) {
            return Eval {
                v: vn + b * (x - xn),
                d1: b,
                d2: 0.0,
            };
        }
        if x <= x0 || x >= xn {
            let (xa, va) = if x <= x0 { (x0, v0) } else { (xn, vn) };
            let slope = va / xa;
            return Eval {
                v: slope * x,
                d1: slope,
                d2: 0.0,
            };
        }
        let k = self.s.partition_point(|&si| si + self.shift <= x).saturating_sub(1).min(n - 2);
        let ((xa, va), (xb, vb)) = (node(k), node(k + 1));
        let t = (x - xa) / (xb - xa);
        Eval {
            v: (1.0 - t) * va + t * vb,
            d1: (vb - va) / (xb - xa),
            d2: 0.0,
        }
    }

    pub fn value(&self, s: f64) -> Result<f64> {
        Ok(self.eval(s)?.v)
    }
}

fn hermite(u0: f64, u1: f64, y0: f64, y1: f64, d0: f64, d1: f64, u: f64) -> (f64, f64, f64) {
    let h = u1 - u0;
    let t = (u - u0) / h;
    let (t2, t3) = (t * t, t * t * t);
    let y = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + t) * h * d0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * h * d1;
    let dy = ((6.0 * t2 - 6.0 * t) * y0 + (-6.0 * t2 + 6.0 * t) * y1) / h
        + (3.0 * t2 - 4.0 * t + 1.0) * d0
        + (3.0 * t2 - 2.0 * t) * d1;
    let ddy = ((12.0 * t - 6.0) * y0 + (-12.0 * t + 6.0) * y1) / (h * h)
        + ((6.0 * t - 4.0) * d0 + (6.0 * t - 2.0) * d1) / h;
    (y, dy, ddy)
}

/// Log-log cell secants at the nodes (left cell, right cell at the first
/// node), reported as node slopes under the linear order.
fn secant_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let j = k.max(1);
            (y[j] - y[j - 1]) / (x[j] - x[j - 1])
        })
        .collect()
}

/// Fritsch-Carlson slopes with the weighted harmonic mean at interior nodes
/// and the non-centred three-point formula at the ends.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        let (a, b) = (delta[k - 1], delta[k]);
        if a * b > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / a + w2 / b);
        }
    }
    d[0] = edge_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = edge_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn edge_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() || m0 == 0.0 {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}
