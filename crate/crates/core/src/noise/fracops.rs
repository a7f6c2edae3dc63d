//! Riemann–Liouville operators on uniform grids and the inverse Volterra
//! operator `K_H^{-1}`.
//!
//! All quadratures are product rules: the integrand is replaced by a piecewise
//! constant function and the weakly singular kernel is integrated exactly on
//! every cell, so constants are reproduced to rounding.

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::path::TimeGrid;

/// Coarsest grid accepted by [`kh_inverse`].
pub const KH_MIN_STEPS: usize = 64;

fn check_order(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("fractional order must lie in (0, 1), got {alpha}")))
    }
}

/// `∫_a^b (s - r)^{α-1} dr / Γ(α)` for `a <= b <= s`.
#[inline]
fn cell_weight(s: f64, a: f64, b: f64, alpha: f64, inv_gamma: f64) -> f64 {
    ((s - a).max(0.0).powf(alpha) - (s - b).max(0.0).powf(alpha)) * inv_gamma
}

/// Weights `w_m = ((m+1)^α - m^α) Δ^α / Γ(α+1)`: cell `j` seen from node `k`
/// with `m = k - j - 1`.
fn node_weights(n: usize, dt: f64, alpha: f64) -> Vec<f64> {
    let scale = dt.powf(alpha) / gamma(alpha + 1.0);
    (0..n).map(|m| ((m + 1) as f64).powf(alpha) - (m as f64).powf(alpha)).map(|w| w * scale).collect()
}

/// `I^α f` at every node of a uniform grid with spacing `dt`, given node
/// values `f`. Cell values are endpoint averages.
pub fn frac_integral(f: &[f64], dt: f64, alpha: f64) -> Result<Vec<f64>> {
    check_order(alpha)?;
    if f.is_empty() {
        return Ok(Vec::new());
    }
    let n = f.len() - 1;
    let cells: Vec<f64> = f.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    Ok(convolve_cells(&cells, &node_weights(n, dt, alpha)))
}

/// `out[k] = Σ_{j<k} cells[j] w[k-j-1]`, `out[0] = 0`.
fn convolve_cells(cells: &[f64], w: &[f64]) -> Vec<f64> {
    let n = cells.len();
    let mut out = vec![0.0; n + 1];
    for k in 1..=n {
        out[k] = cells[..k].iter().rev().zip(w).map(|(c, w)| c * w).sum();
    }
    out
}

/// `D^α f = d/dx I^{1-α} f` at every node: centered differences inside,
/// one-sided at both ends. Requires `f(0) = 0`.
pub fn frac_derivative(f: &[f64], dt: f64, alpha: f64) -> Result<Vec<f64>> {
    check_order(alpha)?;
    if f.len() < 3 {
        return Err(Error::Resolution { n_steps: f.len().saturating_sub(1), required: 2 });
    }
    let scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if f[0].abs() > 1e-9 * (1.0 + scale) {
        return Err(Error::domain(format!("fractional derivative needs f(0) = 0, got {}", f[0])));
    }
    let j = frac_integral(f, dt, 1.0 - alpha)?;
    let n = j.len() - 1;
    let mut out = vec![0.0; n + 1];
    out[0] = (j[1] - j[0]) / dt;
    out[n] = (j[n] - j[n - 1]) / dt;
    for k in 1..n {
        out[k] = (j[k + 1] - j[k - 1]) / (2.0 * dt);
    }
    Ok(out)
}

/// `K_H^{-1} h` for one coordinate, `h` given on the nodes of `grid` with
/// `h(0) = 0`. The result lives on the `n` cells: entry `j` is the value at
/// the midpoint of `[t_j, t_{j+1}]`.
///
/// `H = 1/2` returns the forward difference of `h`. For `H < 1/2` the
/// operator is `s^{H-1/2} I^{1/2-H}[s^{1/2-H} h']`, for `H > 1/2` it is
/// `s^{H-1/2} D^{H-1/2}[s^{1/2-H} h']`.
pub fn kh_inverse(h: &[f64], grid: &TimeGrid, hurst: f64) -> Result<Vec<f64>> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::domain(format!("Hurst index must lie in (0, 1), got {hurst}")));
    }
    let n = grid.n_steps();
    if h.len() != n + 1 {
        return Err(Error::domain("h must have one value per grid node"));
    }
    if n < KH_MIN_STEPS {
        return Err(Error::Resolution { n_steps: n, required: KH_MIN_STEPS });
    }
    let dt = grid.dt();
    let slope: Vec<f64> = h.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    Ok(KhInverse::new(grid, hurst).apply(&slope))
}

/// Precomputed weights of `K_H^{-1}` on a grid, acting on piecewise constant
/// derivatives `h'`.
#[derive(Clone, Debug)]
pub(crate) struct KhInverse {
    hurst: f64,
    dt: f64,
    mid: Vec<f64>,
    weights: Vec<f64>,
    head: f64,
}

impl KhInverse {
    pub(crate) fn new(grid: &TimeGrid, hurst: f64) -> Self {
        let n = grid.n_steps();
        let dt = grid.dt();
        let mid: Vec<f64> = (0..n).map(|j| (j as f64 + 0.5) * dt).collect();
        let (weights, head) = if hurst < 0.5 {
            // value at midpoint m_k: full cells j < k plus the half cell [t_k, m_k]
            let alpha = 0.5 - hurst;
            let inv = 1.0 / gamma(alpha + 1.0);
            let w = (0..n).map(|m| cell_weight((m as f64 + 1.5) * dt, 0.0, dt, alpha, inv)).collect();
            (w, (0.5 * dt).powf(alpha) * inv)
        } else if hurst > 0.5 {
            (node_weights(n, dt, 1.5 - hurst), 0.0)
        } else {
            (Vec::new(), 0.0)
        };
        KhInverse { hurst, dt, mid, weights, head }
    }

    /// `slope[j]` is `h'` on cell `j`.
    pub(crate) fn apply(&self, slope: &[f64]) -> Vec<f64> {
        let n = slope.len();
        if self.hurst == 0.5 {
            return slope.to_vec();
        }
        let alpha = (0.5 - self.hurst).abs();
        if self.hurst < 0.5 {
            let phi: Vec<f64> = slope.iter().zip(&self.mid).map(|(v, m)| v * m.powf(alpha)).collect();
            (0..n)
                .map(|k| {
                    let tail: f64 = phi[..k].iter().rev().zip(&self.weights).map(|(p, w)| p * w).sum();
                    (tail + phi[k] * self.head) * self.mid[k].powf(-alpha)
                })
                .collect()
        } else {
            let phi: Vec<f64> = slope.iter().zip(&self.mid).map(|(v, m)| v * m.powf(-alpha)).collect();
            let j = convolve_cells(&phi, &self.weights);
            (0..n).map(|k| (j[k + 1] - j[k]) / self.dt * self.mid[k].powf(alpha)).collect()
        }
    }
}

/// One sample of the two sides of the `K_H^{-1}` growth bound at `s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundSample {
    pub s: f64,
    /// `|K_H^{-1}(∫_0^· u)(s)|`
    pub lhs: f64,
    /// `s^{1/2-H} ‖u‖_{∞;[0,s]} + s^ε ‖u‖_{γ;[0,s]}` with `γ = H - 1/2 + ε`
    pub rhs: f64,
}

/// Both sides of `|K_H^{-1}(∫u)(s)| <= C_H (s^{1/2-H}‖u‖_∞ + s^ε ‖u‖_γ)`
/// on every cell midpoint, for `H > 1/2`. `u` is given on the nodes and
/// integrated with the left Riemann rule.
pub fn kh_bound_samples(u: &[f64], grid: &TimeGrid, hurst: f64, eps: f64) -> Result<Vec<BoundSample>> {
    if !(hurst > 0.5 && hurst < 1.0) {
        return Err(Error::domain("growth bound is stated for H in (1/2, 1)"));
    }
    let gamma_exp = hurst - 0.5 + eps;
    if !(eps > 0.0 && gamma_exp < 1.0) {
        return Err(Error::domain(format!("need eps > 0 and H - 1/2 + eps < 1, got eps = {eps}")));
    }
    let n = grid.n_steps();
    if u.len() != n + 1 {
        return Err(Error::domain("u must have one value per grid node"));
    }
    if n < KH_MIN_STEPS {
        return Err(Error::Resolution { n_steps: n, required: KH_MIN_STEPS });
    }
    let dt = grid.dt();
    let g = KhInverse::new(grid, hurst).apply(&u[..n]);
    let mut sup = 0.0f64;
    let mut holder = 0.0f64;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        sup = sup.max(u[k].abs());
        for i in 0..k {
            holder = holder.max((u[k] - u[i]).abs() / ((k - i) as f64 * dt).powf(gamma_exp));
        }
        let s = (k as f64 + 0.5) * dt;
        out.push(BoundSample { s, lhs: g[k].abs(), rhs: s.powf(0.5 - hurst) * sup + s.powf(eps) * holder });
    }
    Ok(out)
}
