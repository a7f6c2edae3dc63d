//! Propagation-of-chaos experiments: the conditioned-drift discrepancy, the
//! full-system Girsanov entropy against the product of mean-field laws, and
//! log-log rate fits.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::drift::{freeze, DriftSpec, FrozenDrift, PathDrift};
use crate::error::{Error, Result};
use crate::path::Ensemble;
use crate::rng::StreamKey;
use crate::sde::{particle_drifts, particle_system_keyed, SolverConfig};
use crate::spde::{particle_drifts as field_particle_drifts, FieldKernel, FrozenField, SpdeConfig, SpectralBasis};
use crate::spde::{spde_particles_keyed, SpdeKind};

/// Mean and standard error across repetitions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    fn from_samples(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let value = v.iter().sum::<f64>() / n;
        let stderr =
            if v.len() > 1 { (v.iter().map(|x| (x - value).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt() } else { 0.0 };
        Estimate { value, stderr }
    }
}

fn check_system(system: &Ensemble, reference: &Ensemble) -> Result<()> {
    if system.len() < 2 {
        return Err(Error::domain("the drift gap needs at least two particles"));
    }
    if system.grid() != reference.grid() || system.dim() != reference.dim() {
        return Err(Error::domain("particle system and mean-field law must share grid and dimension"));
    }
    Ok(())
}

/// Per-node average over particles of
/// `|(1/(N-1)) Σ_{j≠i} F(X^i, X^j) - ⟨μ_t, F(X^i, ·)⟩|²` for one system.
pub fn gap_curve(system: &Ensemble, meanfield: &FrozenDrift, spec: &DriftSpec) -> Result<Vec<f64>> {
    check_system(system, meanfield.measure())?;
    let n = system.len();
    let d = spec.dim();
    Ok((0..system.grid().n_nodes())
        .map(|node| {
            let drifts = particle_drifts(spec, system, node);
            let mut mf = vec![0.0; d];
            drifts
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    meanfield.eval(system.path(i).prefix(node), &mut mf);
                    b.iter().zip(&mf).map(|(a, c)| (a - c).powi(2)).sum::<f64>()
                })
                .sum::<f64>()
                / n as f64
        })
        .collect())
}

/// The same curve for heat-equation field particles; the squared norm is
/// the `L²` norm of the projected drift difference.
pub fn field_gap_curve(
    system: &Ensemble,
    meanfield: &FrozenField,
    kernel: &FieldKernel,
    basis: &SpectralBasis,
) -> Result<Vec<f64>> {
    let reference = meanfield.measure().ok_or_else(|| Error::domain("mean-field drift has no law"))?;
    check_system(system, reference)?;
    if basis.kind() != SpdeKind::Heat || system.dim() != basis.n_modes() {
        return Err(Error::domain("field particles must be heat-equation coefficient paths"));
    }
    let n = system.len();
    let k = basis.n_modes();
    Ok((0..system.grid().n_nodes())
        .map(|node| {
            let states: Vec<&[f64]> = system.paths().iter().map(|p| p.at(node)).collect();
            let drifts = field_particle_drifts(kernel, basis, &states);
            let mut mf = vec![0.0; k];
            drifts
                .iter()
                .zip(&states)
                .map(|(g, x)| {
                    meanfield.modes(x, node, &mut mf);
                    g.iter().zip(&mf).map(|(a, c)| (a - c).powi(2)).sum::<f64>()
                })
                .sum::<f64>()
                / n as f64
        })
        .collect())
}

/// Drift gap at node `node` and `½ N Σ_k gap_k Δt` up to that node.
fn reduce(curve: &[f64], n: usize, dt: f64, node: usize) -> (f64, f64) {
    let h = 0.5 * n as f64 * curve[..node].iter().sum::<f64>() * dt;
    (curve[node], h)
}

/// Drift gap at time `t`, averaged over independent systems.
pub fn drift_gap(systems: &[Ensemble], meanfield: &FrozenDrift, spec: &DriftSpec, t: f64) -> Result<Estimate> {
    if systems.is_empty() {
        return Err(Error::domain("need at least one particle system"));
    }
    let node = meanfield.measure().grid().snap(t)?;
    let v = systems.iter().map(|s| gap_curve(s, meanfield, spec).map(|c| c[node])).collect::<Result<Vec<_>>>()?;
    Ok(Estimate::from_samples(&v))
}

/// `½ Σ_i E ∫_0^t |(1/(N-1)) Σ_{j≠i} F(X^i, X^j) - ⟨μ_s, F(X^i, ·)⟩|² ds`, the
/// relative entropy of the particle law with respect to `μ^{⊗N}`.
pub fn system_entropy(systems: &[Ensemble], meanfield: &FrozenDrift, spec: &DriftSpec, up_to: f64) -> Result<Estimate> {
    if systems.is_empty() {
        return Err(Error::domain("need at least one particle system"));
    }
    let grid = meanfield.measure().grid();
    let node = grid.snap(up_to)?;
    let v = systems
        .iter()
        .map(|s| gap_curve(s, meanfield, spec).map(|c| reduce(&c, s.len(), grid.dt(), node).1))
        .collect::<Result<Vec<_>>>()?;
    Ok(Estimate::from_samples(&v))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChaosRow {
    pub n: usize,
    pub repetitions: usize,
    pub drift_gap: Estimate,
    pub system_entropy: Estimate,
    /// Mean drift gap at every grid node.
    pub gap_curve: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ChaosRun {
    pub t: f64,
    pub rows: Vec<ChaosRow>,
    pub reference: Arc<Ensemble>,
}

impl ChaosRun {
    /// CSV `N,stat,value,stderr` with the statistics `drift_gap`,
    /// `scaled_gap` (`(N-1)·drift_gap`), `system_entropy` and
    /// `entropy_per_particle`.
    pub fn write_log<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["N", "stat", "value", "stderr"])?;
        for r in &self.rows {
            let s = (r.n - 1) as f64;
            let n = r.n as f64;
            for (name, e) in [
                ("drift_gap", r.drift_gap),
                ("scaled_gap", Estimate { value: s * r.drift_gap.value, stderr: s * r.drift_gap.stderr }),
                ("system_entropy", r.system_entropy),
                (
                    "entropy_per_particle",
                    Estimate { value: r.system_entropy.value / n, stderr: r.system_entropy.stderr / n },
                ),
            ] {
                w.write_record(&[r.n.to_string(), name.to_string(), e.value.to_string(), e.stderr.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn ns(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.n as f64).collect()
    }

    /// `(N-1)·drift_gap` for every row.
    pub fn scaled_gaps(&self) -> Vec<Estimate> {
        self.rows
            .iter()
            .map(|r| {
                let s = (r.n - 1) as f64;
                Estimate { value: s * r.drift_gap.value, stderr: s * r.drift_gap.stderr }
            })
            .collect()
    }
}

fn row_from(n: usize, curves: Vec<Vec<f64>>, dt: f64, node: usize) -> ChaosRow {
    let reps = curves.len();
    let (gaps, ents): (Vec<f64>, Vec<f64>) = curves.iter().map(|c| reduce(c, n, dt, node)).unzip();
    let len = curves[0].len();
    let gap_curve = (0..len).map(|k| curves.iter().map(|c| c[k]).sum::<f64>() / reps as f64).collect();
    ChaosRow {
        n,
        repetitions: reps,
        drift_gap: Estimate::from_samples(&gaps),
        system_entropy: Estimate::from_samples(&ents),
        gap_curve,
    }
}

fn check_sweep(ns: &[usize], reps: usize) -> Result<()> {
    if ns.is_empty() || ns.iter().any(|&n| n < 2) {
        return Err(Error::domain("every N in the sweep must be at least 2"));
    }
    if reps == 0 {
        return Err(Error::domain("need at least one repetition"));
    }
    Ok(())
}

/// Sweep over `N` with `reps` independent particle systems each, against
/// the mean-field law `reference` (normally a Picard fixed point).
/// Repetition `r` of size `N` reads key `("N", N) / ("rep", r)`.
pub fn chaos_sweep(
    spec: &DriftSpec,
    ns: &[usize],
    reps: usize,
    config: &SolverConfig,
    reference: Arc<Ensemble>,
    t: f64,
) -> Result<ChaosRun> {
    check_sweep(ns, reps)?;
    let meanfield = freeze(spec, reference.clone())?;
    let grid = config.grid;
    let node = grid.snap(t)?;
    let root = StreamKey::new(config.seed, "chaos");
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let key = root.child("N", n as u64);
        let curves = (0..reps)
            .into_par_iter()
            .map(|r| {
                let system = particle_system_keyed(spec, n, config, &key.child("rep", r as u64))?;
                gap_curve(&system, &meanfield, spec)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row_from(n, curves, grid.dt(), node));
    }
    Ok(ChaosRun { t: grid.time(node), rows, reference })
}

/// The sweep for heat-equation field particles.
pub fn field_chaos_sweep(
    kernel: &FieldKernel,
    ns: &[usize],
    reps: usize,
    config: &SpdeConfig,
    meanfield: &FrozenField,
    t: f64,
) -> Result<ChaosRun> {
    check_sweep(ns, reps)?;
    let basis = config.basis()?;
    let reference = meanfield.measure().ok_or_else(|| Error::domain("mean-field drift has no law"))?.clone();
    let grid = config.grid;
    let node = grid.snap(t)?;
    let root = StreamKey::new(config.seed, "field-chaos");
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let key = root.child("N", n as u64);
        let curves = (0..reps)
            .into_par_iter()
            .map(|r| {
                let system = spde_particles_keyed(kernel, n, config, &key.child("rep", r as u64))?;
                field_gap_curve(&system, meanfield, kernel, &basis)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row_from(n, curves, grid.dt(), node));
    }
    Ok(ChaosRun { t: grid.time(node), rows, reference })
}

/// Least-squares slope of `log y` on `log x` with its 95% half-width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub half_width: f64,
}

pub fn rate_fit(x: &[f64], y: &[f64]) -> Result<RateFit> {
    if x.len() != y.len() || x.len() < 4 {
        return Err(Error::domain("rate fit needs at least four (x, y) pairs"));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::domain("rate fit needs positive finite values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("rate fit needs at least two distinct x values"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 2.0).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(RateFit { slope, intercept, half_width: t.inverse_cdf(0.975) * se })
}

/// CSV `stat,slope,half_width`.
pub fn write_rate_fits<W: Write>(fits: &[(&str, RateFit)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stat", "slope", "half_width"])?;
    for (name, f) in fits {
        w.write_record(&[name.to_string(), f.slope.to_string(), f.half_width.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Every estimate within `k` standard errors of the inverse-variance
/// weighted mean.
pub fn consistent_within(estimates: &[Estimate], k: f64) -> bool {
    let w: Vec<f64> = estimates.iter().map(|e| 1.0 / e.stderr.powi(2).max(1e-300)).collect();
    let total: f64 = w.iter().sum();
    let mean = estimates.iter().zip(&w).map(|(e, w)| e.value * w).sum::<f64>() / total;
    estimates.iter().all(|e| (e.value - mean).abs() <= k * e.stderr)
}
