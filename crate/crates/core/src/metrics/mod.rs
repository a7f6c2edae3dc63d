//! Distances and entropy functionals between empirical laws.

mod assignment;

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use crate::drift::{Kernel, PathDrift};
use crate::error::{Error, Result};
use crate::path::{Ensemble, PathView, TimeGrid, WeightedCloud};

/// Axis-aligned histogram used by [`tv_distance`].
#[derive(Clone, Debug, PartialEq)]
pub enum Partition {
    /// `bins` cells per axis over the joint 1st–99th percentile range.
    Auto { bins: usize },
    /// `bins` cells per axis on the box `[lo, hi]`.
    Fixed { lo: Vec<f64>, hi: Vec<f64>, bins: usize },
}

impl Default for Partition {
    fn default() -> Self {
        Partition::Auto { bins: 32 }
    }
}

fn weighted_quantile(pairs: &mut [(f64, f64)], q: f64) -> f64 {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut run = 0.0;
    for p in pairs.iter() {
        run += p.1;
        if run >= q * total {
            return p.0;
        }
    }
    pairs.last().map_or(0.0, |p| p.0)
}

fn check_pair(mu: &WeightedCloud, nu: &WeightedCloud) -> Result<()> {
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::domain("empty measure"));
    }
    if mu.dim() != nu.dim() {
        return Err(Error::domain("measures live in different dimensions"));
    }
    Ok(())
}

/// Histogram estimate of the total variation distance, normalized to `[0, 1]`.
///
/// Biased: laws that differ inside one cell are not distinguished. Points
/// outside the partition box are assigned to the nearest boundary cell.
pub fn tv_distance(mu: &WeightedCloud, nu: &WeightedCloud, partition: &Partition) -> Result<f64> {
    check_pair(mu, nu)?;
    let d = mu.dim();
    let (lo, hi, bins) = match partition {
        Partition::Fixed { lo, hi, bins } => {
            if lo.len() != d || hi.len() != d || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                return Err(Error::domain("partition box must satisfy lo < hi in every dimension"));
            }
            (lo.clone(), hi.clone(), *bins)
        }
        Partition::Auto { bins } => {
            let mut lo = Vec::with_capacity(d);
            let mut hi = Vec::with_capacity(d);
            for k in 0..d {
                let mut pairs: Vec<(f64, f64)> = (0..mu.len())
                    .map(|i| (mu.point(i)[k], 0.5 * mu.weights()[i]))
                    .chain((0..nu.len()).map(|i| (nu.point(i)[k], 0.5 * nu.weights()[i])))
                    .collect();
                let a = weighted_quantile(&mut pairs, 0.01);
                let b = weighted_quantile(&mut pairs, 0.99);
                let (a, b) = if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
                lo.push(a);
                hi.push(b);
            }
            (lo, hi, *bins)
        }
    };
    if bins == 0 {
        return Err(Error::domain("partition needs at least one bin"));
    }
    let cell = |x: &[f64]| -> Vec<usize> {
        (0..d)
            .map(|k| {
                let r = (x[k] - lo[k]) / (hi[k] - lo[k]) * bins as f64;
                (r.floor().max(0.0) as usize).min(bins - 1)
            })
            .collect()
    };
    let mut mass: BTreeMap<Vec<usize>, (f64, f64)> = BTreeMap::new();
    for i in 0..mu.len() {
        mass.entry(cell(mu.point(i))).or_default().0 += mu.weights()[i];
    }
    for i in 0..nu.len() {
        mass.entry(cell(nu.point(i))).or_default().1 += nu.weights()[i];
    }
    let l1: f64 = mass.values().map(|(a, b)| (a - b).abs()).sum();
    Ok((0.5 * l1).clamp(0.0, 1.0))
}

/// Largest sample count accepted by the exact assignment route for `d > 1`.
pub const MAX_ASSIGNMENT_SIZE: usize = 512;

/// Wasserstein-1 distance with Euclidean ground cost.
///
/// `d = 1`: exact, `∫ |F_μ − F_ν|` over the merged support (any weights).
/// `d > 1`: exact assignment for equal-size uniform clouds of at most
/// [`MAX_ASSIGNMENT_SIZE`] points.
pub fn wasserstein1(mu: &WeightedCloud, nu: &WeightedCloud) -> Result<f64> {
    check_pair(mu, nu)?;
    if mu.dim() == 1 {
        let mut events: Vec<(f64, f64)> = (0..mu.len())
            .map(|i| (mu.point(i)[0], mu.weights()[i]))
            .chain((0..nu.len()).map(|i| (nu.point(i)[0], -nu.weights()[i])))
            .collect();
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut gap = 0.0;
        let mut total = 0.0;
        for w in events.windows(2) {
            gap += w[0].1;
            total += gap.abs() * (w[1].0 - w[0].0);
        }
        return Ok(total);
    }
    if mu.len() != nu.len() || !mu.is_uniform() || !nu.is_uniform() {
        return Err(Error::UnsupportedSize("W1 in d > 1 needs equal-size uniformly weighted clouds".into()));
    }
    if mu.len() > MAX_ASSIGNMENT_SIZE {
        return Err(Error::UnsupportedSize(format!(
            "W1 in d > 1 limited to {MAX_ASSIGNMENT_SIZE} points, got {}",
            mu.len()
        )));
    }
    let n = mu.len();
    let (_, cost) = assignment::min_cost_assignment(n, |i, j| {
        mu.point(i).iter().zip(nu.point(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    });
    Ok(cost / n as f64)
}

/// Per-node relative entropy `H(P¹[t] | P²[t])` with Monte Carlo error.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyReport {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl EntropyReport {
    pub fn at(&self, t: f64) -> Result<(f64, f64)> {
        let k = self.grid.snap(t)?;
        Ok((self.values[k], self.stderr[k]))
    }

    pub fn last(&self) -> (f64, f64) {
        let k = self.values.len() - 1;
        (self.values[k], self.stderr[k])
    }

    /// CSV `t,H,stderr`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "H", "stderr"])?;
        for k in 0..self.values.len() {
            w.write_record(&[self.grid.time(k).to_string(), self.values[k].to_string(), self.stderr[k].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `H(t) = ½ E ∫_0^t |b¹ − b²|² ds` along the sample paths, with the left
/// Riemann sum on the ensemble grid. Both laws must share their initial law.
pub fn girsanov_entropy(
    b1: &dyn PathDrift,
    b2: &dyn PathDrift,
    sample: &Ensemble,
    up_to: f64,
) -> Result<EntropyReport> {
    if b1.dim() != sample.dim() || b2.dim() != sample.dim() {
        return Err(Error::domain("drift and ensemble dimensions differ"));
    }
    b1.check_grid(sample.grid())?;
    b2.check_grid(sample.grid())?;
    let d = sample.dim();
    girsanov_entropy_with(sample, up_to, |_, x, diff| {
        let mut other = vec![0.0; d];
        b1.eval(x, diff);
        b2.eval(x, &mut other);
        diff.iter_mut().zip(&other).for_each(|(a, b)| *a -= b);
    })
}

/// Same estimator for an arbitrary drift difference `δ(i, x|_{[0,t]})`,
/// where `i` is the path index in `sample`.
pub fn girsanov_entropy_with<F>(sample: &Ensemble, up_to: f64, diff: F) -> Result<EntropyReport>
where
    F: Fn(usize, PathView<'_>, &mut [f64]) + Sync,
{
    let grid = sample.grid().truncated(sample.grid().snap(up_to)?)?;
    let n = grid.n_steps();
    let dt = grid.dt();
    let d = sample.dim();
    let per_path: Vec<std::result::Result<Vec<f64>, Error>> = (0..sample.len())
        .into_par_iter()
        .map(|i| {
            let path = sample.path(i);
            let mut cum = vec![0.0; n + 1];
            let mut buf = vec![0.0; d];
            for k in 0..n {
                diff(i, path.prefix(k), &mut buf);
                let sq: f64 = buf.iter().map(|v| v * v).sum();
                if !sq.is_finite() {
                    return Err(Error::SingularDrift { path: i, node: k });
                }
                cum[k + 1] = cum[k] + 0.5 * sq * dt;
            }
            Ok(cum)
        })
        .collect();
    let per_path = per_path.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(summarize(grid, &per_path, sample.weights()))
}

/// Weighted mean and standard error of per-path cumulative entropies.
pub(crate) fn summarize(grid: TimeGrid, per_path: &[Vec<f64>], weights: &[f64]) -> EntropyReport {
    let n = grid.n_steps();
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let mut values = vec![0.0; n + 1];
    let mut stderr = vec![0.0; n + 1];
    for k in 0..=n {
        let mean: f64 = per_path.iter().zip(weights).map(|(c, w)| w * c[k]).sum();
        let var: f64 = per_path.iter().zip(weights).map(|(c, w)| w * (c[k] - mean).powi(2)).sum();
        values[k] = mean;
        stderr[k] = if ess > 1.0 { (var / (ess - 1.0)).sqrt() } else { 0.0 };
    }
    EntropyReport { grid, values, stderr }
}

/// Right side of the weighted Pinsker inequality,
/// `2 (1 + log ⟨ν, e^{|f|²}⟩) H`. Only `|f|` enters, so vector-valued
/// `f` should pass its Euclidean norm.
pub fn weighted_pinsker_bound(f: impl Fn(&[f64]) -> f64, nu: &WeightedCloud, h: f64) -> Result<f64> {
    if !(h >= 0.0) {
        return Err(Error::domain(format!("entropy must be nonnegative, got {h}")));
    }
    if nu.is_empty() {
        return Err(Error::domain("empty measure"));
    }
    let exps = (0..nu.len())
        .map(|i| {
            let v = f(nu.point(i));
            let s = v * v;
            if !s.is_finite() || s.exp().is_infinite() {
                Err(Error::DivergentWeight(format!("e^(|f|^2) overflows at sample {i} (|f|^2 = {s})")))
            } else {
                Ok(s)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let top = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = exps.iter().zip(nu.weights()).map(|(s, w)| w * (s - top).exp()).sum();
    let log_moment = top + sum.ln();
    Ok(2.0 * (1.0 + log_moment) * h)
}

/// `R_ε(μ, ν) = sup_t log ∫∫ exp(ε |b(t, x, y)|²) μ(dx) ν(dy)` over the grid
/// nodes; `+∞` once the double average overflows.
pub fn exp_moment_r(mu: &Ensemble, nu: &Ensemble, b: &Kernel, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::domain(format!("eps must be positive, got {eps}")));
    }
    if mu.dim() != nu.dim() || mu.grid() != nu.grid() {
        return Err(Error::domain("measures must share grid and dimension"));
    }
    let d = mu.dim();
    let per_node: Vec<f64> = (0..mu.grid().n_nodes())
        .into_par_iter()
        .map(|node| {
            let mut buf = vec![0.0; d];
            let mut acc = 0.0;
            for i in 0..mu.len() {
                let x = mu.path(i).prefix(node);
                let mut inner = 0.0;
                for j in 0..nu.len() {
                    b.eval(x, nu.path(j).prefix(node), &mut buf);
                    let sq: f64 = buf.iter().map(|v| v * v).sum();
                    inner += nu.weights()[j] * (eps * sq).exp();
                }
                acc += mu.weights()[i] * inner;
            }
            acc.ln()
        })
        .collect();
    Ok(per_node.into_iter().fold(f64::NEG_INFINITY, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v) }))
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut best) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    best
}

/// Exact `H(p | q) = Σ p log(p/q)` for mass vectors; `+∞` if `p` is not
/// absolutely continuous with respect to `q`.
pub fn discrete_entropy(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            if a <= 0.0 {
                0.0
            } else if b <= 0.0 {
                f64::INFINITY
            } else {
                a * (a / b).ln()
            }
        })
        .sum()
}

/// Exact total variation `½ Σ |p − q|` for mass vectors.
pub fn discrete_tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
