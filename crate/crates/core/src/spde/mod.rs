//! Spectral-Galerkin stochastic heat and wave equations on `[0, 1]` with
//! mean-field drifts and interacting field particles.
//!
//! Heat: Neumann cosine modes `e_0 = 1`, `e_k = √2 cos(kπσ)`, `λ_k = (kπ)²`,
//! coefficient slot `k` is mode `k`. Wave: Dirichlet sine modes
//! `e_k = √2 sin(kπσ)`, `k >= 1`; slots `0..K` hold the positions of modes
//! `1..=K` and slots `K..2K` the velocities.

mod field;

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::drift::PathDrift;
use crate::error::{Error, Result};
use crate::metrics::{girsanov_entropy_with, EntropyReport};
use crate::path::{Ensemble, Path, PathView, TimeGrid};
use crate::rng::StreamKey;
use crate::sde::{GapRecord, PicardState};

pub(crate) use field::particle_drifts;
pub use field::{FieldDrift, FieldKernel, FrozenField, SpdeDriftSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpdeKind {
    Heat,
    Wave,
}

/// Orthonormal modes sampled at `S` midpoint quadrature nodes `σ_s = (s + ½)/S`.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    kind: SpdeKind,
    n_modes: usize,
    quad: usize,
    /// `table[s * K + k] = e_k(σ_s)`
    table: Vec<f64>,
}

impl SpectralBasis {
    pub fn new(kind: SpdeKind, n_modes: usize, quad: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::domain("need at least one mode"));
        }
        if quad <= n_modes {
            return Err(Error::domain("quadrature points must exceed the number of modes"));
        }
        let mut table = vec![0.0; quad * n_modes];
        let r2 = std::f64::consts::SQRT_2;
        for s in 0..quad {
            let sigma = (s as f64 + 0.5) / quad as f64;
            for k in 0..n_modes {
                table[s * n_modes + k] = match kind {
                    SpdeKind::Heat if k == 0 => 1.0,
                    SpdeKind::Heat => r2 * (k as f64 * std::f64::consts::PI * sigma).cos(),
                    SpdeKind::Wave => r2 * ((k + 1) as f64 * std::f64::consts::PI * sigma).sin(),
                };
            }
        }
        Ok(SpectralBasis { kind, n_modes, quad, table })
    }

    pub fn kind(&self) -> SpdeKind {
        self.kind
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn quad_points(&self) -> usize {
        self.quad
    }

    pub fn sigma(&self, s: usize) -> f64 {
        (s as f64 + 0.5) / self.quad as f64
    }

    /// `λ` of coefficient slot `k`.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let m = match self.kind {
            SpdeKind::Heat => k,
            SpdeKind::Wave => k + 1,
        };
        (m as f64 * std::f64::consts::PI).powi(2)
    }

    /// Field values at the quadrature nodes from `K` mode coefficients.
    pub fn reconstruct(&self, coeffs: &[f64], out: &mut [f64]) {
        let k = self.n_modes;
        for (s, o) in out.iter_mut().enumerate() {
            *o = self.table[s * k..(s + 1) * k].iter().zip(coeffs).map(|(e, c)| e * c).sum();
        }
    }

    /// Midpoint-rule projection `∫ f e_k` of a field given at the nodes.
    pub fn project(&self, field: &[f64], out: &mut [f64]) {
        let k = self.n_modes;
        out.fill(0.0);
        for (s, f) in field.iter().enumerate() {
            for (o, e) in out.iter_mut().zip(&self.table[s * k..(s + 1) * k]) {
                *o += f * e;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.quad as f64);
    }
}

/// A field given by its mode coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    pub kind: SpdeKind,
    pub coeffs: Vec<f64>,
}

impl SpectralField {
    /// `‖x‖²_{L²}` of the position field (Parseval).
    pub fn l2_norm_sq(&self) -> f64 {
        let k = match self.kind {
            SpdeKind::Heat => self.coeffs.len(),
            SpdeKind::Wave => self.coeffs.len() / 2,
        };
        self.coeffs[..k].iter().map(|c| c * c).sum()
    }

    /// Position field at `σ`.
    pub fn eval(&self, sigma: f64) -> f64 {
        let k = match self.kind {
            SpdeKind::Heat => self.coeffs.len(),
            SpdeKind::Wave => self.coeffs.len() / 2,
        };
        let r2 = std::f64::consts::SQRT_2;
        let pi = std::f64::consts::PI;
        (0..k)
            .map(|j| {
                let e = match self.kind {
                    SpdeKind::Heat if j == 0 => 1.0,
                    SpdeKind::Heat => r2 * (j as f64 * pi * sigma).cos(),
                    SpdeKind::Wave => r2 * ((j + 1) as f64 * pi * sigma).sin(),
                };
                e * self.coeffs[j]
            })
            .sum()
    }

    /// Per-mode energy `λ_k y_k² + z_k²` of a wave field.
    pub fn wave_energy(&self) -> Vec<f64> {
        let k = self.coeffs.len() / 2;
        (0..k)
            .map(|j| {
                let w = (j + 1) as f64 * std::f64::consts::PI;
                w * w * self.coeffs[j].powi(2) + self.coeffs[k + j].powi(2)
            })
            .collect()
    }
}

/// Initial field.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum FieldInit {
    #[default]
    Zero,
    /// Deterministic coefficient vector (length `K`, or `2K` for the wave).
    Coefficients(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpdeConfig {
    pub kind: SpdeKind,
    pub n_modes: usize,
    pub quad_points: usize,
    pub grid: TimeGrid,
    pub n_replicas: usize,
    pub seed: u64,
    pub initial: FieldInit,
    /// Multiplies the cylindrical noise; `0` gives the deterministic equation.
    pub noise_scale: f64,
}

impl SpdeConfig {
    pub const DEFAULT_MODES: usize = 64;
    pub const DEFAULT_QUAD: usize = 256;

    pub fn new(kind: SpdeKind, n_modes: usize, grid: TimeGrid, n_replicas: usize, seed: u64) -> Self {
        SpdeConfig {
            kind,
            n_modes,
            quad_points: Self::DEFAULT_QUAD.max(2 * n_modes),
            grid,
            n_replicas,
            seed,
            initial: FieldInit::Zero,
            noise_scale: 1.0,
        }
    }

    /// Length of the coefficient vector.
    pub fn state_dim(&self) -> usize {
        match self.kind {
            SpdeKind::Heat => self.n_modes,
            SpdeKind::Wave => 2 * self.n_modes,
        }
    }

    pub fn basis(&self) -> Result<SpectralBasis> {
        SpectralBasis::new(self.kind, self.n_modes, self.quad_points)
    }

    fn validate(&self) -> Result<()> {
        if self.n_replicas < 1 {
            return Err(Error::domain("need at least one replica"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::domain("noise scale must be finite and nonnegative"));
        }
        if let FieldInit::Coefficients(c) = &self.initial {
            if c.len() != self.state_dim() || c.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain("initial coefficients have the wrong length or are not finite"));
            }
        }
        Ok(())
    }
}

/// Per-mode one-step coefficients of the exact linear flow.
#[derive(Clone, Debug)]
pub(crate) struct Stepper {
    kind: SpdeKind,
    k: usize,
    /// heat: (decay, drift gain, noise sd); wave: (cos, sin, ω)
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    /// wave noise factor: (l11, l21, l22)
    chol: Vec<[f64; 3]>,
    noise: f64,
}

impl Stepper {
    pub(crate) fn new(cfg: &SpdeConfig, basis: &SpectralBasis) -> Self {
        let k = cfg.n_modes;
        let dt = cfg.grid.dt();
        let mut s = Stepper {
            kind: cfg.kind,
            k,
            a: vec![0.0; k],
            b: vec![0.0; k],
            c: vec![0.0; k],
            chol: vec![[0.0; 3]; k],
            noise: cfg.noise_scale,
        };
        for j in 0..k {
            let lam = basis.eigenvalue(j);
            match cfg.kind {
                SpdeKind::Heat if lam == 0.0 => {
                    s.a[j] = 1.0;
                    s.b[j] = dt;
                    s.c[j] = dt.sqrt();
                }
                SpdeKind::Heat => {
                    s.a[j] = (-lam * dt).exp();
                    s.b[j] = -(-lam * dt).exp_m1() / lam;
                    s.c[j] = (-(-2.0 * lam * dt).exp_m1() / (2.0 * lam)).sqrt();
                }
                SpdeKind::Wave => {
                    let w = lam.sqrt();
                    let (sn, cs) = (w * dt).sin_cos();
                    s.a[j] = cs;
                    s.b[j] = sn;
                    s.c[j] = w;
                    let s2 = (2.0 * w * dt).sin();
                    let vy = (dt / 2.0 - s2 / (4.0 * w)) / (w * w);
                    let vz = dt / 2.0 + s2 / (4.0 * w);
                    let cyz = sn * sn / (2.0 * w * w);
                    let l11 = vy.sqrt();
                    let l21 = if l11 > 0.0 { cyz / l11 } else { 0.0 };
                    let l22 = (vz - l21 * l21).max(0.0).sqrt();
                    s.chol[j] = [l11, l21, l22];
                }
            }
        }
        s
    }

    /// Advance `x` by one step with drift coefficients `g` (`K` values) and
    /// standard normals `xi` (`K` for heat, `2K` for the wave).
    pub(crate) fn step(&self, x: &mut [f64], g: &[f64], xi: &[f64]) {
        let k = self.k;
        match self.kind {
            SpdeKind::Heat => {
                for j in 0..k {
                    x[j] = self.a[j] * x[j] + self.b[j] * g[j] + self.noise * self.c[j] * xi[j];
                }
            }
            SpdeKind::Wave => {
                for j in 0..k {
                    let (cs, sn, w) = (self.a[j], self.b[j], self.c[j]);
                    let (y, z) = (x[j], x[k + j]);
                    let [l11, l21, l22] = self.chol[j];
                    let (e1, e2) = (xi[j], xi[k + j]);
                    x[j] = cs * y + sn / w * z + g[j] * (1.0 - cs) / (w * w) + self.noise * l11 * e1;
                    x[k + j] = -w * sn * y + cs * z + g[j] * sn / w + self.noise * (l21 * e1 + l22 * e2);
                }
            }
        }
    }
}

/// Replica simulation in coefficient space.
pub(crate) struct FieldSim {
    pub cfg: SpdeConfig,
    pub basis: Arc<SpectralBasis>,
    stepper: Stepper,
}

impl FieldSim {
    pub(crate) fn new(cfg: &SpdeConfig) -> Result<Self> {
        cfg.validate()?;
        let basis = Arc::new(cfg.basis()?);
        let stepper = Stepper::new(cfg, &basis);
        Ok(FieldSim { cfg: cfg.clone(), basis, stepper })
    }

    fn initial(&self) -> Vec<f64> {
        match &self.cfg.initial {
            FieldInit::Zero => vec![0.0; self.cfg.state_dim()],
            FieldInit::Coefficients(c) => c.clone(),
        }
    }

    /// Standard normals for replica `i`: `n_steps * state_dim` values.
    pub(crate) fn normals(&self, key: &StreamKey, i: usize) -> Vec<f64> {
        let mut rng = key.stream(i as u64);
        let len = self.cfg.grid.n_steps() * self.cfg.state_dim();
        (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    /// Drift coefficients (`K` values) from a drift on the full state.
    fn drift_modes(&self, drift: &dyn PathDrift, x: PathView<'_>, buf: &mut [f64]) -> Vec<f64> {
        drift.eval(x, buf);
        let k = self.cfg.n_modes;
        match self.cfg.kind {
            SpdeKind::Heat => buf.to_vec(),
            SpdeKind::Wave => buf[k..].to_vec(),
        }
    }

    pub(crate) fn run(&self, drift: &dyn PathDrift, key: &StreamKey) -> Result<Ensemble> {
        let dim = self.cfg.state_dim();
        if drift.dim() != dim {
            return Err(Error::domain("field drift has the wrong state dimension"));
        }
        let grid = self.cfg.grid;
        let n = grid.n_steps();
        let paths: Vec<Result<Path>> = (0..self.cfg.n_replicas)
            .into_par_iter()
            .map(|i| {
                let xi = self.normals(key, i);
                let mut v = vec![0.0; (n + 1) * dim];
                v[..dim].copy_from_slice(&self.initial());
                let mut buf = vec![0.0; dim];
                let mut x = vec![0.0; dim];
                for k in 0..n {
                    let g = self.drift_modes(drift, PathView::new(grid, dim, &v[..(k + 1) * dim]), &mut buf);
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::SingularDrift { path: i, node: k });
                    }
                    x.copy_from_slice(&v[k * dim..(k + 1) * dim]);
                    self.stepper.step(&mut x, &g, &xi[k * dim..(k + 1) * dim]);
                    v[(k + 1) * dim..(k + 2) * dim].copy_from_slice(&x);
                }
                Path::new(grid, dim, v)
            })
            .collect();
        Ensemble::new(paths.into_iter().collect::<Result<Vec<_>>>()?)
    }
}

/// Replicas of the linear equation driven by a measure-independent drift.
pub fn spde_simulate(drift: &dyn PathDrift, cfg: &SpdeConfig) -> Result<Ensemble> {
    FieldSim::new(cfg)?.run(drift, &StreamKey::new(cfg.seed, "spde"))
}

/// `½ E ∫ ‖G¹ − G²‖²_{L²} ds` along the replicas (velocity part for the wave).
pub fn field_entropy(b1: &dyn PathDrift, b2: &dyn PathDrift, sample: &Ensemble) -> Result<EntropyReport> {
    let d = sample.dim();
    girsanov_entropy_with(sample, sample.grid().t_end(), |_, x, diff| {
        let mut other = vec![0.0; d];
        b1.eval(x, diff);
        b2.eval(x, &mut other);
        diff.iter_mut().zip(&other).for_each(|(a, b)| *a -= b);
    })
}

fn mf_solve(spec: &SpdeDriftSpec, cfg: &SpdeConfig, kind: SpdeKind, tol: f64, max_iter: usize) -> Result<PicardState> {
    if cfg.kind != kind {
        return Err(Error::domain("configuration is for the other equation"));
    }
    if !(tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    let sim = FieldSim::new(cfg)?;
    let root = StreamKey::new(cfg.seed, "spde-picard");
    let start = Arc::new(sim.run(&FrozenField::zero(sim.basis.clone(), cfg.state_dim()), &root.child("iter", 0))?);
    let mut prev = FrozenField::new(spec, sim.basis.clone(), start.clone())?;
    let mut state = PicardState {
        iteration: 0,
        ensemble: start,
        entropy_gap: f64::INFINITY,
        stderr: 0.0,
        tv_bound: f64::INFINITY,
        history: Vec::new(),
        converged: false,
        non_contraction: false,
        last_report: None,
        clamp_hits: 0,
        evaluations: 0,
        c0: f64::INFINITY,
    };
    let mut rising = 0;
    for k in 1..=max_iter {
        let law = Arc::new(sim.run(&prev, &root.child("iter", k as u64))?);
        let next = FrozenField::new(spec, sim.basis.clone(), law.clone())?;
        let report = field_entropy(&prev, &next, &law)?;
        let (gap, se) = report.last();
        if let Some(last) = state.history.last() {
            rising = if gap >= last.entropy_gap { rising + 1 } else { 0 };
        }
        state.non_contraction |= rising >= 3;
        let record = GapRecord { iter: k, entropy_gap: gap, stderr: se, tv_bound: (2.0 * gap.max(0.0)).sqrt() };
        state.history.push(record);
        state.iteration = k;
        state.ensemble = law;
        state.entropy_gap = gap;
        state.stderr = se;
        state.tv_bound = record.tv_bound;
        state.last_report = Some(report);
        if gap < tol {
            state.converged = true;
            break;
        }
        prev = next;
    }
    Ok(state)
}

/// Mean-field stochastic heat equation by measure-Picard iteration.
pub fn heat_mf_solve(spec: &SpdeDriftSpec, cfg: &SpdeConfig, tol: f64, max_iter: usize) -> Result<PicardState> {
    mf_solve(spec, cfg, SpdeKind::Heat, tol, max_iter)
}

/// Mean-field stochastic wave equation; the drift acts on the velocity.
pub fn wave_mf_solve(spec: &SpdeDriftSpec, cfg: &SpdeConfig, tol: f64, max_iter: usize) -> Result<PicardState> {
    mf_solve(spec, cfg, SpdeKind::Wave, tol, max_iter)
}

/// `N` coupled heat-equation particles with drift `(1/(N-1)) Σ_{j≠i} F(X^i, X^j)`.
pub fn spde_particles(kernel: &FieldKernel, n: usize, cfg: &SpdeConfig) -> Result<Ensemble> {
    spde_particles_keyed(kernel, n, cfg, &StreamKey::new(cfg.seed, "spde-particles"))
}

pub fn spde_particles_keyed(kernel: &FieldKernel, n: usize, cfg: &SpdeConfig, key: &StreamKey) -> Result<Ensemble> {
    if cfg.kind != SpdeKind::Heat {
        return Err(Error::domain("field particles are implemented for the heat equation"));
    }
    if n == 0 {
        return Err(Error::domain("need at least one particle"));
    }
    let sim = FieldSim::new(cfg)?;
    let k = cfg.n_modes;
    let grid = cfg.grid;
    let steps = grid.n_steps();
    let xi: Vec<Vec<f64>> = (0..n).map(|i| sim.normals(key, i)).collect();
    let mut values: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut v = vec![0.0; (steps + 1) * k];
            v[..k].copy_from_slice(&sim.initial());
            v
        })
        .collect();
    for node in 0..steps {
        let states: Vec<&[f64]> = values.iter().map(|v| &v[node * k..(node + 1) * k]).collect();
        let drifts = field::particle_drifts(kernel, &sim.basis, &states);
        for (i, g) in drifts.iter().enumerate() {
            let v = &mut values[i];
            let mut x = v[node * k..(node + 1) * k].to_vec();
            sim.stepper.step(&mut x, g, &xi[i][node * k..(node + 1) * k]);
            v[(node + 1) * k..(node + 2) * k].copy_from_slice(&x);
        }
    }
    let paths = values.into_iter().map(|v| Path::new(grid, k, v)).collect::<Result<Vec<_>>>()?;
    Ensemble::new(paths)
}

/// CSV `replica,t,k,coeff`; `k` is the coefficient slot.
pub fn write_field_csv<W: Write>(fields: &Ensemble, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["replica", "t", "k", "coeff"])?;
    for (r, p) in fields.paths().iter().enumerate() {
        for node in 0..fields.grid().n_nodes() {
            let t = fields.grid().time(node).to_string();
            for (k, c) in p.at(node).iter().enumerate() {
                w.write_record(&[r.to_string(), t.clone(), k.to_string(), (c + 0.0).to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV `replica,t,sigma,value` of the position field at the quadrature
/// nodes, for the grid nodes nearest to `times`.
pub fn write_snapshot_csv<W: Write>(fields: &Ensemble, basis: &SpectralBasis, times: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["replica", "t", "sigma", "value"])?;
    let k = basis.n_modes();
    let mut field = vec![0.0; basis.quad_points()];
    for &t in times {
        let node = fields.grid().snap(t)?;
        let tn = fields.grid().time(node).to_string();
        for (r, p) in fields.paths().iter().enumerate() {
            basis.reconstruct(&p.at(node)[..k], &mut field);
            for (s, v) in field.iter().enumerate() {
                w.write_record(&[r.to_string(), tn.clone(), basis.sigma(s).to_string(), (v + 0.0).to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
