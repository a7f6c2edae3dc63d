use rayon::prelude::*;

use crate::drift::{DriftSpec, Exclude, NodeSummary, PathSource};
use crate::error::{Error, Result};
use crate::path::{Ensemble, Path, PathView, TimeGrid};
use crate::rng::StreamKey;

use super::{Simulator, SolverConfig};

/// Particle trajectories under construction, node-major per particle.
pub(crate) struct Particles {
    pub grid: TimeGrid,
    pub dim: usize,
    pub values: Vec<Vec<f64>>,
}

impl PathSource for Particles {
    fn count(&self) -> usize {
        self.values.len()
    }

    fn weight(&self, _i: usize) -> f64 {
        1.0 / self.values.len() as f64
    }

    fn view(&self, i: usize, node: usize) -> PathView<'_> {
        PathView::new(self.grid, self.dim, &self.values[i][..(node + 1) * self.dim])
    }
}

/// `b_0(t, X^i) + (1/(N-1)) Σ_{j≠i} b(t, X^i, X^j)` for every particle at `node`.
pub(crate) fn particle_drifts<S: PathSource>(spec: &DriftSpec, src: &S, node: usize) -> Vec<Vec<f64>> {
    let (bases, parts) = spec.components();
    let d = spec.dim();
    let n = src.count();
    let summaries: Vec<NodeSummary> = parts.iter().map(|p| NodeSummary::build(p, d, src, node)).collect();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let x = src.view(i, node);
            let mut out = vec![0.0; d];
            for b in &bases {
                b.add_to(x, &mut out);
            }
            let exclude = Some(Exclude { index: i, weight: src.weight(i) });
            let mut tmp = vec![0.0; d];
            for (part, summary) in parts.iter().zip(&summaries) {
                summary.eval(part, x, src, node, exclude, &mut tmp);
                out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
            }
            out
        })
        .collect()
}

/// The coupled system driven by the given initial values and noise
/// increments (`increments[i][k * d + c]`).
pub fn particle_system_from(
    spec: &DriftSpec,
    grid: TimeGrid,
    initial: &[Vec<f64>],
    increments: &[Vec<f64>],
) -> Result<Ensemble> {
    let n = initial.len();
    let d = spec.dim();
    if n == 0 || increments.len() != n {
        return Err(Error::domain("need one initial value and one noise path per particle"));
    }
    if initial.iter().any(|x| x.len() != d) || increments.iter().any(|w| w.len() != grid.n_steps() * d) {
        return Err(Error::domain("particle inputs have the wrong shape"));
    }
    let mut ps = Particles {
        grid,
        dim: d,
        values: initial
            .iter()
            .map(|x0| {
                let mut v = vec![0.0; grid.n_nodes() * d];
                v[..d].copy_from_slice(x0);
                v
            })
            .collect(),
    };
    let dt = grid.dt();
    for k in 0..grid.n_steps() {
        let drifts = particle_drifts(spec, &ps, k);
        for (i, b) in drifts.iter().enumerate() {
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::SingularDrift { path: i, node: k });
            }
            let v = &mut ps.values[i];
            for c in 0..d {
                v[(k + 1) * d + c] = v[k * d + c] + b[c] * dt + increments[i][k * d + c];
            }
        }
    }
    let paths = ps.values.into_iter().map(|v| Path::new(grid, d, v)).collect::<Result<Vec<_>>>()?;
    Ensemble::new(paths)
}

/// One realization of the `N`-particle system, particle `i` reading stream `i` of `key`.
pub fn particle_system_keyed(spec: &DriftSpec, n: usize, config: &SolverConfig, key: &StreamKey) -> Result<Ensemble> {
    if n == 0 {
        return Err(Error::domain("need at least one particle"));
    }
    if spec.dim() != config.dim() {
        return Err(Error::domain("drift and initial law dimensions differ"));
    }
    let sim = Simulator::new(config)?;
    let (initial, increments): (Vec<_>, Vec<_>) = (0..n).map(|i| sim.inputs(key, i)).unzip();
    particle_system_from(spec, config.grid, &initial, &increments)
}

/// `N` coupled particles with interaction `(1/(N-1)) Σ_{j≠i} b(t, X^i, X^j)`.
pub fn particle_system(spec: &DriftSpec, n: usize, config: &SolverConfig) -> Result<Ensemble> {
    particle_system_keyed(spec, n, config, &StreamKey::new(config.seed, "particles"))
}
