//! Euler–Maruyama for frozen-measure SDEs, the measure-Picard loop, the
//! truncation ladder and interacting particle systems.

mod particles;
mod picard;

use std::io::Read;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::drift::PathDrift;
use crate::error::{Error, Result};
use crate::noise::{Driver, NoiseKind};
use crate::path::{Ensemble, Path, PathView, TimeGrid};
use crate::rng::StreamKey;

pub(crate) use particles::particle_drifts;
pub use particles::{particle_system, particle_system_from, particle_system_keyed};
pub use picard::{
    picard_solve, picard_solve_with, truncation_ladder, GapRecord, LadderResult, LadderRung, PicardInit, PicardOptions,
    PicardState,
};

/// Initial law `μ_0`.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialLaw {
    PointMass(Vec<f64>),
    /// Mean and row-major covariance.
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<f64>,
    },
    /// Uniform resampling from a finite list of points (row-major).
    Samples {
        dim: usize,
        points: Vec<f64>,
    },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::PointMass(x) => x.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::Samples { dim, .. } => *dim,
        }
    }

    /// Samples from a CSV with one row per point and columns `x1..xd`.
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let dim = r.headers()?.len();
        let mut points = Vec::new();
        for rec in r.records() {
            for field in rec?.iter() {
                points.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::domain(format!("bad initial sample {field:?}: {e}")))?,
                );
            }
        }
        let law = InitialLaw::Samples { dim, points };
        law.validate()?;
        Ok(law)
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::domain("initial law must have positive dimension"));
        }
        match self {
            InitialLaw::PointMass(x) => finite(x),
            InitialLaw::Gaussian { mean, cov } => {
                finite(mean)?;
                finite(cov)?;
                if cov.len() != d * d {
                    return Err(Error::domain("covariance must be d x d"));
                }
                self.gaussian_factor().map(|_| ())
            }
            InitialLaw::Samples { dim, points } => {
                if points.is_empty() || points.len() % dim != 0 {
                    return Err(Error::domain("initial samples must be a nonempty list of d-vectors"));
                }
                finite(points)
            }
        }
    }

    fn gaussian_factor(&self) -> Result<Vec<f64>> {
        let InitialLaw::Gaussian { mean, cov } = self else { unreachable!() };
        let d = mean.len();
        let m = DMatrix::from_row_slice(d, d, cov);
        if (0..d).any(|i| (0..d).any(|j| (m[(i, j)] - m[(j, i)]).abs() > 1e-12)) {
            return Err(Error::domain("covariance must be symmetric"));
        }
        if (0..d).all(|i| (0..d).all(|j| m[(i, j)] == 0.0)) {
            return Ok(vec![0.0; d * d]);
        }
        let l = m.cholesky().ok_or_else(|| Error::domain("covariance must be positive definite"))?.l();
        Ok((0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| l[(i, j)]).collect())
    }

    /// Supremum of the admissible sub-Gaussian constants `c_0` with
    /// `∫ e^{c_0 |x|²} μ_0(dx) < ∞` (exclusive for Gaussians, `+∞` for
    /// compactly supported laws).
    pub fn c0(&self) -> f64 {
        match self {
            InitialLaw::PointMass(_) | InitialLaw::Samples { .. } => f64::INFINITY,
            InitialLaw::Gaussian { mean, cov } => {
                let d = mean.len();
                let eig = DMatrix::from_row_slice(d, d, cov).symmetric_eigen().eigenvalues;
                let top = eig.iter().cloned().fold(0.0f64, f64::max);
                if top > 0.0 {
                    1.0 / (2.0 * top)
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

fn finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::domain("initial law contains non-finite values"))
    }
}

/// Draws from an [`InitialLaw`] with any precomputation done once.
#[derive(Clone, Debug)]
pub(crate) struct InitialSampler {
    law: InitialLaw,
    factor: Vec<f64>,
}

impl InitialSampler {
    pub(crate) fn new(law: &InitialLaw) -> Result<Self> {
        law.validate()?;
        let factor = match law {
            InitialLaw::Gaussian { .. } => law.gaussian_factor()?,
            _ => Vec::new(),
        };
        Ok(InitialSampler { law: law.clone(), factor })
    }

    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match &self.law {
            InitialLaw::PointMass(x) => out.copy_from_slice(x),
            InitialLaw::Gaussian { mean, .. } => {
                let d = mean.len();
                let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                for i in 0..d {
                    out[i] = mean[i] + (0..=i).map(|j| self.factor[i * d + j] * z[j]).sum::<f64>();
                }
            }
            InitialLaw::Samples { dim, points } => {
                let i = rng.random_range(0..points.len() / dim);
                out.copy_from_slice(&points[i * dim..(i + 1) * dim]);
            }
        }
    }
}

/// Everything an Euler–Maruyama run needs besides the drift.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub initial: InitialLaw,
    pub seed: u64,
    pub noise: NoiseKind,
}

impl SolverConfig {
    pub fn new(grid: TimeGrid, n_paths: usize, initial: InitialLaw, seed: u64, noise: NoiseKind) -> Result<Self> {
        let cfg = SolverConfig { grid, n_paths, initial, seed, noise };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Brownian noise started at the origin.
    pub fn brownian(grid: TimeGrid, n_paths: usize, dim: usize, seed: u64) -> Result<Self> {
        SolverConfig::new(grid, n_paths, InitialLaw::PointMass(vec![0.0; dim]), seed, NoiseKind::Brownian)
    }

    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::domain("need at least two paths"));
        }
        self.initial.validate()?;
        if let NoiseKind::Fractional { hurst } = self.noise {
            if !(hurst > 0.0 && hurst < 1.0) {
                return Err(Error::domain(format!("Hurst index must lie in (0, 1), got {hurst}")));
            }
        }
        Ok(())
    }
}

/// Shared machinery for every path simulation: initial sampler, noise driver
/// and grid.
pub(crate) struct Simulator {
    pub grid: TimeGrid,
    pub dim: usize,
    pub n_paths: usize,
    initial: InitialSampler,
    driver: Driver,
}

impl Simulator {
    pub(crate) fn new(config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        Ok(Simulator {
            grid: config.grid,
            dim: config.dim(),
            n_paths: config.n_paths,
            initial: InitialSampler::new(&config.initial)?,
            driver: Driver::new(config.noise, config.grid, config.dim())?,
        })
    }

    /// Initial value and noise increments of path `i` under `key`.
    pub(crate) fn inputs(&self, key: &StreamKey, i: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = key.stream(i as u64);
        let mut x0 = vec![0.0; self.dim];
        self.initial.sample(&mut rng, &mut x0);
        let mut inc = vec![0.0; self.grid.n_steps() * self.dim];
        self.driver.increments(&mut rng, &mut inc);
        (x0, inc)
    }

    pub(crate) fn run(&self, drift: &dyn PathDrift, key: &StreamKey) -> Result<Ensemble> {
        if drift.dim() != self.dim {
            return Err(Error::domain("drift dimension does not match the initial law"));
        }
        drift.check_grid(&self.grid)?;
        let paths: Vec<Result<Path>> = (0..self.n_paths)
            .into_par_iter()
            .map(|i| {
                let (x0, inc) = self.inputs(key, i);
                integrate(drift, self.grid, &x0, &inc, i)
            })
            .collect();
        Ensemble::new(paths.into_iter().collect::<Result<Vec<_>>>()?)
    }
}

/// `X_{k+1} = X_k + b(t_k, X|_{[0,t_k]}) Δt + ΔB_k` along one path.
fn integrate(drift: &dyn PathDrift, grid: TimeGrid, x0: &[f64], inc: &[f64], id: usize) -> Result<Path> {
    let d = x0.len();
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut v = vec![0.0; (n + 1) * d];
    v[..d].copy_from_slice(x0);
    let mut b = vec![0.0; d];
    for k in 0..n {
        drift.eval(PathView::new(grid, d, &v[..(k + 1) * d]), &mut b);
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularDrift { path: id, node: k });
        }
        for i in 0..d {
            v[(k + 1) * d + i] = v[k * d + i] + b[i] * dt + inc[k * d + i];
        }
    }
    Path::new(grid, d, v)
}

/// `M` Euler–Maruyama paths of `dX = b(t, X) dt + dB`; deterministic in the seed.
pub fn euler_maruyama(drift: &dyn PathDrift, config: &SolverConfig) -> Result<Ensemble> {
    Simulator::new(config)?.run(drift, &StreamKey::new(config.seed, "euler-maruyama"))
}
