//! Brownian and fractional Brownian drivers and the fBM path entropy.

mod fracops;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::drift::PathDrift;
use crate::error::{Error, Result};
use crate::metrics::{summarize, EntropyReport};
use crate::path::{Ensemble, Path, PathView, TimeGrid};

pub(crate) use fracops::KhInverse;
pub use fracops::{frac_derivative, frac_integral, kh_bound_samples, kh_inverse, BoundSample, KH_MIN_STEPS};

fn check_hurst(h: f64) -> Result<()> {
    if h > 0.0 && h < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("Hurst index must lie in (0, 1), got {h}")))
    }
}

/// fBM covariance `R_H(s, t) = ½(s^{2H} + t^{2H} - |t - s|^{2H})`.
pub fn rh_cov(s: f64, t: f64, hurst: f64) -> Result<f64> {
    check_hurst(hurst)?;
    if s < 0.0 || t < 0.0 {
        return Err(Error::domain("covariance needs nonnegative times"));
    }
    let e = 2.0 * hurst;
    Ok(0.5 * (s.powf(e) + t.powf(e) - (t - s).abs().powf(e)))
}

/// Exact fBM sampler on a grid through the Cholesky factor of the node
/// covariance (nodes `1..=n`; node 0 is pinned at zero).
#[derive(Clone, Debug)]
pub struct FbmSampler {
    hurst: f64,
    grid: TimeGrid,
    dim: usize,
    /// Row-major packed lower triangle.
    factor: Vec<f64>,
    jitter: f64,
}

impl FbmSampler {
    pub fn new(hurst: f64, grid: TimeGrid, dim: usize) -> Result<Self> {
        check_hurst(hurst)?;
        if dim == 0 {
            return Err(Error::domain("dimension must be positive"));
        }
        let n = grid.n_steps();
        let cov = DMatrix::from_fn(n, n, |i, j| rh_cov(grid.time(i + 1), grid.time(j + 1), hurst).expect("validated"));
        let ceiling = 1e-10 * grid.t_end().powf(2.0 * hurst);
        let mut jitter = 0.0;
        let chol = loop {
            let mut m = cov.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(c) = m.cholesky() {
                break c;
            }
            if jitter >= ceiling {
                return Err(Error::Numeric(format!(
                    "fBM covariance not positive definite even with jitter {jitter:e}"
                )));
            }
            jitter = if jitter == 0.0 { ceiling * 1e-6 } else { (jitter * 10.0).min(ceiling) };
        };
        let l = chol.l();
        let mut factor = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                factor.push(l[(i, j)]);
            }
        }
        Ok(FbmSampler { hurst, grid, dim, factor, jitter })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Diagonal jitter that was needed for the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// One scalar fBM path on the nodes (`out[0] = 0`).
    pub fn sample_scalar<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let n = self.grid.n_steps();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        out[0] = 0.0;
        let mut row = 0;
        for i in 0..n {
            let li = &self.factor[row..row + i + 1];
            out[i + 1] = li.iter().zip(&z).map(|(a, b)| a * b).sum();
            row += i + 1;
        }
    }

    /// One `d`-dimensional path with independent coordinates.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Path {
        let nodes = self.grid.n_nodes();
        let mut coord = vec![0.0; nodes];
        let mut values = vec![0.0; nodes * self.dim];
        for k in 0..self.dim {
            self.sample_scalar(rng, &mut coord);
            for (node, v) in coord.iter().enumerate() {
                values[node * self.dim + k] = *v;
            }
        }
        Path::new(self.grid, self.dim, values).expect("finite Gaussian sample")
    }
}

/// `sample_fbm` in functional form.
pub fn sample_fbm<R: Rng + ?Sized>(sampler: &FbmSampler, rng: &mut R) -> Path {
    sampler.sample(rng)
}

/// Driving noise of an SDE.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    Brownian,
    Fractional { hurst: f64 },
}

/// Noise increments on a fixed grid.
#[derive(Clone, Debug)]
pub struct Driver {
    kind: NoiseKind,
    grid: TimeGrid,
    dim: usize,
    sampler: Option<FbmSampler>,
}

impl Driver {
    pub fn new(kind: NoiseKind, grid: TimeGrid, dim: usize) -> Result<Self> {
        let sampler = match kind {
            NoiseKind::Brownian => None,
            NoiseKind::Fractional { hurst } => Some(FbmSampler::new(hurst, grid, dim)?),
        };
        Ok(Driver { kind, grid, dim, sampler })
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Increments `B_{t_{k+1}} - B_{t_k}`, step-major: `out[k * d + i]`.
    pub fn increments<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let n = self.grid.n_steps();
        let d = self.dim;
        match &self.sampler {
            None => {
                let sd = self.grid.dt().sqrt();
                out.iter_mut().for_each(|v| *v = sd * rng.sample::<f64, _>(StandardNormal));
            }
            Some(s) => {
                let mut coord = vec![0.0; n + 1];
                for i in 0..d {
                    s.sample_scalar(rng, &mut coord);
                    for k in 0..n {
                        out[k * d + i] = coord[k + 1] - coord[k];
                    }
                }
            }
        }
    }
}

/// fBM analogue of the Girsanov entropy: per path, `U = ∫_0^· u` (left
/// Riemann sum), then `½ ∫ |K_H^{-1} U|²` accumulated along the grid.
/// `H = 1/2` reproduces the Brownian estimator exactly.
pub fn fbm_path_entropy_with<F>(sample: &Ensemble, hurst: f64, up_to: f64, diff: F) -> Result<EntropyReport>
where
    F: Fn(usize, PathView<'_>, &mut [f64]) + Sync,
{
    check_hurst(hurst)?;
    let grid = sample.grid().truncated(sample.grid().snap(up_to)?)?;
    let n = grid.n_steps();
    if n < KH_MIN_STEPS {
        return Err(Error::Resolution { n_steps: n, required: KH_MIN_STEPS });
    }
    let dt = grid.dt();
    let d = sample.dim();
    let op = KhInverse::new(&grid, hurst);
    let per_path: Vec<Result<Vec<f64>>> = (0..sample.len())
        .into_par_iter()
        .map(|i| {
            let path = sample.path(i);
            let mut u = vec![0.0; n * d];
            let mut buf = vec![0.0; d];
            for k in 0..n {
                diff(i, path.prefix(k), &mut buf);
                if buf.iter().any(|v| !v.is_finite()) {
                    return Err(Error::SingularDrift { path: i, node: k });
                }
                u[k * d..(k + 1) * d].copy_from_slice(&buf);
            }
            let mut sq = vec![0.0; n];
            let mut coord = vec![0.0; n];
            for c in 0..d {
                coord.iter_mut().enumerate().for_each(|(k, v)| *v = u[k * d + c]);
                for (s, g) in sq.iter_mut().zip(op.apply(&coord)) {
                    *s += g * g;
                }
            }
            let mut cum = vec![0.0; n + 1];
            for k in 0..n {
                cum[k + 1] = cum[k] + 0.5 * sq[k] * dt;
            }
            Ok(cum)
        })
        .collect();
    let per_path = per_path.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(summarize(grid, &per_path, sample.weights()))
}

/// [`fbm_path_entropy_with`] for the difference of two drifts.
pub fn fbm_path_entropy(
    b1: &dyn PathDrift,
    b2: &dyn PathDrift,
    sample: &Ensemble,
    hurst: f64,
    up_to: f64,
) -> Result<EntropyReport> {
    if b1.dim() != sample.dim() || b2.dim() != sample.dim() {
        return Err(Error::domain("drift and ensemble dimensions differ"));
    }
    b1.check_grid(sample.grid())?;
    b2.check_grid(sample.grid())?;
    let d = sample.dim();
    fbm_path_entropy_with(sample, hurst, up_to, |_, x, diff| {
        let mut other = vec![0.0; d];
        b1.eval(x, diff);
        b2.eval(x, &mut other);
        diff.iter_mut().zip(&other).for_each(|(a, b)| *a -= b);
    })
}
