use std::sync::Arc;

use rayon::prelude::*;

use crate::drift::PathDrift;
use crate::error::{Error, Result};
use crate::path::{Ensemble, PathView};

use super::{SpdeKind, SpectralBasis};

/// Pointwise pair interaction `F(x, y)(σ)` between two fields.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FieldKernel {
    Zero,
    /// `L tanh(y(σ))`
    TanhOther {
        strength: f64,
    },
    /// `L tanh(x(σ))`
    SelfTanh {
        strength: f64,
    },
    /// `L tanh(y(σ) - x(σ))`
    SaturatedDiff {
        strength: f64,
    },
}

impl FieldKernel {
    pub fn bound(&self) -> f64 {
        match *self {
            FieldKernel::Zero => 0.0,
            FieldKernel::TanhOther { strength }
            | FieldKernel::SelfTanh { strength }
            | FieldKernel::SaturatedDiff { strength } => strength.abs(),
        }
    }

    fn strength(&self) -> f64 {
        match *self {
            FieldKernel::Zero => 0.0,
            FieldKernel::TanhOther { strength }
            | FieldKernel::SelfTanh { strength }
            | FieldKernel::SaturatedDiff { strength } => strength,
        }
    }
}

/// Mean-field drift `G(x, μ)` of the field equation.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldDrift {
    /// Constant forcing given by its mode coefficients.
    Constant(Vec<f64>),
    /// `G(x, μ)(σ) = ∫ F(x, y)(σ) μ(dy)`.
    Interaction(FieldKernel),
    /// `G(x, μ)(σ) = L tanh(⟨μ, clip_R(y(σ))⟩ - x(σ))`, the saturated
    /// distance to the clipped mean field.
    SaturatedMeanDistance { strength: f64, clip: f64 },
}

/// A field drift with its `L²` bound and total-variation Lipschitz constant.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdeDriftSpec {
    drift: FieldDrift,
    bound: f64,
    lipschitz: f64,
}

impl SpdeDriftSpec {
    pub fn new(drift: FieldDrift) -> Result<Self> {
        let (bound, lipschitz) = match &drift {
            FieldDrift::Constant(g) => {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::domain("constant forcing must be finite"));
                }
                (g.iter().map(|v| v * v).sum::<f64>().sqrt(), 0.0)
            }
            FieldDrift::Interaction(k) => {
                if !k.strength().is_finite() {
                    return Err(Error::domain("kernel strength must be finite"));
                }
                let lip = match k {
                    FieldKernel::Zero | FieldKernel::SelfTanh { .. } => 0.0,
                    _ => 2.0 * k.bound(),
                };
                (k.bound(), lip)
            }
            &FieldDrift::SaturatedMeanDistance { strength, clip } => {
                if !(strength.is_finite() && clip > 0.0 && clip.is_finite()) {
                    return Err(Error::domain("need finite strength and a positive clip radius"));
                }
                (strength.abs(), 2.0 * strength.abs() * clip)
            }
        };
        Ok(SpdeDriftSpec { drift, bound, lipschitz })
    }

    pub fn drift(&self) -> &FieldDrift {
        &self.drift
    }

    /// `sup ‖G‖_{L²}`
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// `‖G(x, μ) - G(x, ν)‖_{L²} <= lipschitz · ‖μ - ν‖_TV`
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// Per-node summary of the frozen measure.
#[derive(Clone, Debug)]
enum Summary {
    None,
    /// A field on the quadrature nodes, one per grid node.
    Mean(Vec<Vec<f64>>),
    /// The measure itself is needed at evaluation time.
    Direct,
}

/// `G(·, μ)` for a fixed law of fields; a drift on the coefficient state.
#[derive(Clone, Debug)]
pub struct FrozenField {
    drift: FieldDrift,
    basis: Arc<SpectralBasis>,
    measure: Option<Arc<Ensemble>>,
    summary: Summary,
    state_dim: usize,
}

fn position(kind: SpdeKind, k: usize, state: &[f64]) -> &[f64] {
    match kind {
        SpdeKind::Heat => state,
        SpdeKind::Wave => &state[..k],
    }
}

impl FrozenField {
    pub fn new(spec: &SpdeDriftSpec, basis: Arc<SpectralBasis>, measure: Arc<Ensemble>) -> Result<Self> {
        let k = basis.n_modes();
        let state_dim = match basis.kind() {
            SpdeKind::Heat => k,
            SpdeKind::Wave => 2 * k,
        };
        if measure.dim() != state_dim {
            return Err(Error::domain("measure and basis disagree on the state dimension"));
        }
        if let FieldDrift::Constant(g) = &spec.drift {
            if g.len() != k {
                return Err(Error::domain("constant forcing needs one coefficient per mode"));
            }
        }
        let pointwise = |f: &(dyn Fn(f64) -> f64 + Sync)| -> Vec<Vec<f64>> {
            let s = basis.quad_points();
            (0..measure.grid().n_nodes())
                .into_par_iter()
                .map(|node| {
                    let mut acc = vec![0.0; s];
                    let mut field = vec![0.0; s];
                    for (p, w) in measure.paths().iter().zip(measure.weights()) {
                        basis.reconstruct(position(basis.kind(), k, p.at(node)), &mut field);
                        acc.iter_mut().zip(&field).for_each(|(a, v)| *a += w * f(*v));
                    }
                    acc
                })
                .collect()
        };
        let summary = match &spec.drift {
            FieldDrift::Constant(_) => Summary::None,
            FieldDrift::Interaction(kern) => match *kern {
                FieldKernel::Zero | FieldKernel::SelfTanh { .. } => Summary::None,
                FieldKernel::TanhOther { .. } => Summary::Mean(pointwise(&|v| v.tanh())),
                FieldKernel::SaturatedDiff { .. } => Summary::Direct,
            },
            &FieldDrift::SaturatedMeanDistance { clip, .. } => Summary::Mean(pointwise(&|v| v.clamp(-clip, clip))),
        };
        Ok(FrozenField { drift: spec.drift.clone(), basis, measure: Some(measure), summary, state_dim })
    }

    /// The zero drift.
    pub fn zero(basis: Arc<SpectralBasis>, state_dim: usize) -> Self {
        let k = basis.n_modes();
        FrozenField {
            drift: FieldDrift::Constant(vec![0.0; k]),
            basis,
            measure: None,
            summary: Summary::None,
            state_dim,
        }
    }

    pub fn measure(&self) -> Option<&Arc<Ensemble>> {
        self.measure.as_ref()
    }

    /// Mode coefficients of `G(x, μ_t)` at grid node `node`.
    pub fn modes(&self, x: &[f64], node: usize, out: &mut [f64]) {
        let k = self.basis.n_modes();
        let s = self.basis.quad_points();
        if let FieldDrift::Constant(g) = &self.drift {
            out.copy_from_slice(g);
            return;
        }
        let mut field = vec![0.0; s];
        self.basis.reconstruct(position(self.basis.kind(), k, x), &mut field);
        let mut g = vec![0.0; s];
        match (&self.drift, &self.summary) {
            (&FieldDrift::SaturatedMeanDistance { strength, .. }, Summary::Mean(m)) => {
                for ((o, mv), xv) in g.iter_mut().zip(&m[node]).zip(&field) {
                    *o = strength * (mv - xv).tanh();
                }
            }
            (FieldDrift::Interaction(kern), summary) => match (*kern, summary) {
                (FieldKernel::Zero, _) => {}
                (FieldKernel::SelfTanh { strength }, _) => {
                    g.iter_mut().zip(&field).for_each(|(o, v)| *o = strength * v.tanh());
                }
                (FieldKernel::TanhOther { strength }, Summary::Mean(m)) => {
                    g.iter_mut().zip(&m[node]).for_each(|(o, v)| *o = strength * v);
                }
                (FieldKernel::SaturatedDiff { strength }, _) => {
                    let mu = self.measure.as_ref().expect("interaction drift without a measure");
                    let mut other = vec![0.0; s];
                    for (p, w) in mu.paths().iter().zip(mu.weights()) {
                        self.basis.reconstruct(position(self.basis.kind(), k, p.at(node)), &mut other);
                        for ((o, y), xv) in g.iter_mut().zip(&other).zip(&field) {
                            *o += w * strength * (y - xv).tanh();
                        }
                    }
                }
                _ => unreachable!("summary does not match the kernel"),
            },
            _ => unreachable!("summary does not match the drift"),
        }
        self.basis.project(&g, out);
    }
}

impl PathDrift for FrozenField {
    fn dim(&self) -> usize {
        self.state_dim
    }

    /// Heat: the `K` drift modes. Wave: zero on the positions, the drift modes
    /// on the velocities.
    fn eval(&self, x: PathView<'_>, out: &mut [f64]) {
        let k = self.basis.n_modes();
        let node = match &self.measure {
            Some(mu) => {
                let ratio = (mu.grid().n_steps() as f64 / x.grid().n_steps() as f64).round() as usize;
                (x.node() * ratio.max(1)).min(mu.grid().n_steps())
            }
            None => 0,
        };
        match self.basis.kind() {
            SpdeKind::Heat => self.modes(x.current(), node, out),
            SpdeKind::Wave => {
                out[..k].fill(0.0);
                self.modes(x.current(), node, &mut out[k..]);
            }
        }
    }
}

/// Drift modes of every heat particle: `(1/(N-1)) Σ_{j≠i} F(X^i, X^j)`, zero for `N = 1`.
pub(crate) fn particle_drifts(kernel: &FieldKernel, basis: &SpectralBasis, states: &[&[f64]]) -> Vec<Vec<f64>> {
    let n = states.len();
    let k = basis.n_modes();
    let s = basis.quad_points();
    if n < 2 || matches!(kernel, FieldKernel::Zero) {
        return vec![vec![0.0; k]; n];
    }
    let fields: Vec<Vec<f64>> = states
        .par_iter()
        .map(|c| {
            let mut f = vec![0.0; s];
            basis.reconstruct(c, &mut f);
            f
        })
        .collect();
    let scale = 1.0 / (n - 1) as f64;
    let total: Vec<f64> = match kernel {
        FieldKernel::TanhOther { .. } => (0..s).map(|p| fields.iter().map(|f| f[p].tanh()).sum()).collect(),
        _ => Vec::new(),
    };
    (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &fields[i];
            let g: Vec<f64> = match *kernel {
                FieldKernel::Zero => unreachable!(),
                FieldKernel::SelfTanh { strength } => xi.iter().map(|v| strength * v.tanh()).collect(),
                FieldKernel::TanhOther { strength } => {
                    (0..s).map(|p| strength * scale * (total[p] - xi[p].tanh())).collect()
                }
                FieldKernel::SaturatedDiff { strength } => (0..s)
                    .map(|p| {
                        let sum: f64 = fields
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| *j != i)
                            .map(|(_, f)| (f[p] - xi[p]).tanh())
                            .sum();
                        strength * scale * sum
                    })
                    .collect(),
            };
            let mut out = vec![0.0; k];
            basis.project(&g, &mut out);
            out
        })
        .collect()
}
