//! Drift registry: base drifts `b_0`, interaction kernels `b(t, x, y)` of
//! every supported class, truncation, and the frozen-measure drift
//! `b̄_μ(t, x) = b_0(t, x) + ⟨μ_t, b(t, x, ·)⟩`.

mod kernel;
pub(crate) mod summary;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::path::{Ensemble, Path, PathView, TimeGrid};
use crate::rng::StreamKey;

pub use kernel::{BaseDrift, CustomKernel, Kernel, NonlinearOp, SingularKernel};
pub(crate) use summary::{Exclude, NodeSummary, Part, PathSource};

use kernel::norm;

/// A drift evaluated along path prefixes: `b(t_k, x|_{[0, t_k]})`.
pub trait PathDrift: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: PathView<'_>, out: &mut [f64]);

    /// Whether the drift can be evaluated on paths living on `grid`.
    fn check_grid(&self, _grid: &TimeGrid) -> Result<()> {
        Ok(())
    }
}

/// Closure-backed drift.
pub struct FnDrift<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(PathView<'_>, &mut [f64]) + Sync> FnDrift<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnDrift { dim, f }
    }
}

impl<F: Fn(PathView<'_>, &mut [f64]) + Sync> PathDrift for FnDrift<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: PathView<'_>, out: &mut [f64]) {
        (self.f)(x, out)
    }
}

/// Tagged drift class. Each variant carries the constants its well-posedness
/// argument needs, checked on probe paths at construction.
#[derive(Clone, Debug)]
pub enum DriftKind {
    /// Bounded measurable interaction, `|b| <= bound` componentwise.
    BoundedKernel {
        kernel: Kernel,
        bound: f64,
    },
    /// `|b_0(t,x)| + |b(t,x,y)| <= K (1 + ‖x‖_t + ‖y‖_t)`.
    LinearGrowthPath {
        base: BaseDrift,
        kernel: Kernel,
        growth: f64,
    },
    /// `|b_0(t,x)| + sup_y |b_2(t,x,y)| <= K (1 + |x|^β)`, `β < 1`.
    SublinearState {
        base: BaseDrift,
        kernel: Kernel,
        growth: f64,
        beta: f64,
    },
    /// `|b_1(t,x,y)| <= h(x - y)` with `h ∈ L^q_t L^p_x`, `d/p + 2/q < 1`.
    SingularKernel {
        kernel: SingularKernel,
        p: f64,
        q: f64,
    },
    Mixed(Vec<DriftSpec>),
    /// `B(t, x_t, μ_t)`, Lipschitz in total variation with constant `lipschitz`.
    NonlinearTv {
        op: NonlinearOp,
        lipschitz: f64,
    },
}

#[derive(Clone, Debug)]
pub struct DriftSpec {
    dim: usize,
    kind: DriftKind,
    truncation: Option<f64>,
}

const PROBES: usize = 12;

fn probe_paths(dim: usize) -> Vec<Path> {
    let grid = TimeGrid::new(1.0, 8).expect("static grid");
    let key = StreamKey::new(0x5eed, "drift-probes");
    (0..PROBES)
        .map(|i| {
            let mut rng = key.stream(i as u64);
            let scale = 0.5 + 2.0 * i as f64;
            let mut v = vec![0.0; grid.n_nodes() * dim];
            for k in 0..dim {
                v[k] = scale * rng.sample::<f64, _>(StandardNormal);
            }
            for n in 1..grid.n_nodes() {
                for k in 0..dim {
                    let step: f64 = rng.sample(StandardNormal);
                    v[n * dim + k] = v[(n - 1) * dim + k] + scale * step * grid.dt().sqrt();
                }
            }
            Path::new(grid, dim, v).expect("finite probe")
        })
        .collect()
}

fn probe_pairs(dim: usize, mut check: impl FnMut(PathView<'_>, PathView<'_>) -> Result<()>) -> Result<()> {
    let probes = probe_paths(dim);
    for x in &probes {
        for y in &probes {
            for node in [0, 3, 8] {
                check(x.prefix(node), y.prefix(node))?;
            }
        }
    }
    Ok(())
}

impl DriftSpec {
    pub fn new(dim: usize, kind: DriftKind) -> Result<Self> {
        let spec = DriftSpec { dim, kind, truncation: None };
        spec.validate()?;
        Ok(spec)
    }

    /// `b_0 ≡ 0`, `b ≡ 0`.
    pub fn zero(dim: usize) -> Self {
        DriftSpec { dim, kind: DriftKind::Mixed(Vec::new()), truncation: None }
    }

    pub fn bounded(dim: usize, kernel: Kernel) -> Result<Self> {
        let bound = kernel.bound().ok_or_else(|| Error::domain("kernel has no finite bound"))?;
        DriftSpec::new(dim, DriftKind::BoundedKernel { kernel, bound })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &DriftKind {
        &self.kind
    }

    pub fn truncation(&self) -> Option<f64> {
        self.truncation
    }

    /// Supremum of `|interaction|` per coordinate if the drift has no base
    /// part and a finite bound; used for contraction constants.
    pub fn interaction_bound(&self) -> Option<f64> {
        let raw = match &self.kind {
            DriftKind::BoundedKernel { bound, .. } => Some(*bound),
            DriftKind::NonlinearTv { op, .. } => Some(op.bound()),
            DriftKind::Mixed(parts) => parts.iter().map(|p| p.interaction_bound()).sum(),
            _ => None,
        };
        match (raw, self.truncation) {
            (Some(b), Some(n)) => Some(b.min(n)),
            (None, Some(n)) => Some(n),
            (b, None) => b,
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim;
        if d == 0 {
            return Err(Error::domain("drift dimension must be positive"));
        }
        let mut buf = vec![0.0; d];
        let mut base_buf = vec![0.0; d];
        match &self.kind {
            DriftKind::BoundedKernel { kernel, bound } => probe_pairs(d, |x, y| {
                kernel.eval(x, y, &mut buf);
                match buf.iter().find(|v| v.abs() > bound * (1.0 + 1e-12)) {
                    Some(v) => Err(Error::domain(format!("kernel value {v} exceeds declared bound {bound}"))),
                    None => Ok(()),
                }
            }),
            DriftKind::LinearGrowthPath { base, kernel, growth } => probe_pairs(d, |x, y| {
                kernel.eval(x, y, &mut buf);
                base_buf.fill(0.0);
                base.add_to(x, &mut base_buf);
                let lhs = norm(&base_buf) + norm(&buf);
                let rhs = growth * (1.0 + x.running_sup() + y.running_sup());
                if lhs > rhs * (1.0 + 1e-12) {
                    return Err(Error::domain(format!("linear growth violated: {lhs} > {rhs}")));
                }
                Ok(())
            }),
            DriftKind::SublinearState { base, kernel, growth, beta } => {
                if !(0.0..1.0).contains(beta) {
                    return Err(Error::domain(format!("sublinear exponent must lie in [0, 1), got {beta}")));
                }
                probe_pairs(d, |x, y| {
                    kernel.eval(x, y, &mut buf);
                    base_buf.fill(0.0);
                    base.add_to(x, &mut base_buf);
                    let rhs = growth * (1.0 + norm(x.current()).powf(*beta));
                    for v in [norm(&base_buf), norm(&buf)] {
                        if v > rhs * (1.0 + 1e-12) {
                            return Err(Error::domain(format!("sublinear growth violated: {v} > {rhs}")));
                        }
                    }
                    Ok(())
                })
            }
            DriftKind::SingularKernel { kernel, p, q } => {
                if !(*p > 1.0 && *q > 1.0) {
                    return Err(Error::domain("integrability exponents must exceed 1"));
                }
                let index = d as f64 / p + 2.0 / q;
                if index >= 1.0 {
                    return Err(Error::domain(format!("(p, q) = ({p}, {q}) not admissible: d/p + 2/q = {index}")));
                }
                if kernel.exponent * p >= d as f64 {
                    return Err(Error::domain(format!("profile |z|^-{} is not in L^{p} for d = {d}", kernel.exponent)));
                }
                if !(kernel.radius > 0.0 && kernel.clamp_radius > 0.0 && kernel.clamp_radius < kernel.radius) {
                    return Err(Error::domain("need 0 < clamp radius < support radius"));
                }
                Ok(())
            }
            DriftKind::Mixed(parts) => {
                if parts.iter().any(|p| p.dim != d) {
                    return Err(Error::domain("mixed drift parts must share dimension"));
                }
                Ok(())
            }
            DriftKind::NonlinearTv { op, lipschitz } => {
                let needed = op.lipschitz(d);
                if *lipschitz < needed * (1.0 - 1e-12) {
                    return Err(Error::domain(format!("declared TV-Lipschitz constant {lipschitz} below {needed}")));
                }
                Ok(())
            }
        }
    }

    /// Base drifts and interaction terms, truncation pushed down to every term.
    pub(crate) fn components(&self) -> (Vec<BaseDrift>, Vec<Part>) {
        let mut bases = Vec::new();
        let mut parts = Vec::new();
        self.collect(None, &mut bases, &mut parts);
        (bases, parts)
    }

    fn collect(&self, outer: Option<f64>, bases: &mut Vec<BaseDrift>, parts: &mut Vec<Part>) {
        let truncation = match (outer, self.truncation) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        let pair = |kernel: &Kernel| Part::Pair { kernel: kernel.clone(), truncation };
        match &self.kind {
            DriftKind::BoundedKernel { kernel, .. } => parts.push(pair(kernel)),
            DriftKind::LinearGrowthPath { base, kernel, .. } | DriftKind::SublinearState { base, kernel, .. } => {
                if !base.is_zero() {
                    bases.push(base.clone());
                }
                parts.push(pair(kernel));
            }
            DriftKind::SingularKernel { kernel, .. } => parts.push(pair(&Kernel::Singular(*kernel))),
            DriftKind::Mixed(list) => list.iter().for_each(|p| p.collect(truncation, bases, parts)),
            DriftKind::NonlinearTv { op, .. } => parts.push(Part::Nonlinear { op: *op, truncation }),
        }
    }
}

/// Clip every interaction coordinate to `[-n, n]`; `b_0` is left untouched.
pub fn truncate(spec: &DriftSpec, n: f64) -> Result<DriftSpec> {
    if !(n >= 0.0) {
        return Err(Error::domain(format!("truncation level must be nonnegative, got {n}")));
    }
    let mut out = spec.clone();
    out.truncation = Some(spec.truncation.map_or(n, |m| m.min(n)));
    Ok(out)
}

/// Result of a direct interaction evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub value: Vec<f64>,
    /// Singular evaluations that hit the clamp radius.
    pub clamped: u64,
}

fn measure_node(mu_grid: &TimeGrid, x: PathView<'_>) -> Result<usize> {
    let ratio =
        mu_grid.refinement_of(x.grid()).ok_or_else(|| Error::domain("measure grid must refine the evaluation grid"))?;
    Ok(x.node() * ratio)
}

/// `⟨μ, b(t, x, ·)⟩` summed over interaction terms, by direct weighted
/// averaging over every member of `mu`. `b_0` is not included.
pub fn eval_interaction(spec: &DriftSpec, x: PathView<'_>, mu: &Ensemble) -> Result<Interaction> {
    if x.dim() != spec.dim || mu.dim() != spec.dim {
        return Err(Error::domain("dimension mismatch between drift, path and measure"));
    }
    let node = measure_node(mu.grid(), x)?;
    let (_, parts) = spec.components();
    let mut value = vec![0.0; spec.dim];
    let mut tmp = vec![0.0; spec.dim];
    let mut clamped = 0;
    for part in &parts {
        clamped += summary::direct(part, x, mu, node, None, &mut tmp);
        value.iter_mut().zip(&tmp).for_each(|(v, t)| *v += t);
    }
    Ok(Interaction { value, clamped })
}

/// How the frozen measure is averaged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EvalPolicy {
    #[default]
    Full,
    /// Fixed random subsample of the frozen ensemble, drawn once.
    Subsample { size: usize, seed: u64 },
}

/// `b̄_μ(t, x)`: a pure closure over a frozen ensemble.
pub struct FrozenDrift {
    dim: usize,
    bases: Vec<BaseDrift>,
    parts: Vec<Part>,
    measure: Arc<Ensemble>,
    summaries: Vec<Vec<NodeSummary>>,
    clamp_hits: AtomicU64,
    evaluations: AtomicU64,
}

impl std::fmt::Debug for FrozenDrift {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrozenDrift")
            .field("dim", &self.dim)
            .field("parts", &self.parts)
            .field("paths", &self.measure.len())
            .finish()
    }
}

/// Freeze `spec` at the law `mu`.
pub fn freeze(spec: &DriftSpec, mu: Arc<Ensemble>) -> Result<FrozenDrift> {
    freeze_with(spec, mu, EvalPolicy::Full)
}

pub fn freeze_with(spec: &DriftSpec, mu: Arc<Ensemble>, policy: EvalPolicy) -> Result<FrozenDrift> {
    if mu.dim() != spec.dim {
        return Err(Error::domain(format!(
            "measure dimension {} does not match drift dimension {}",
            mu.dim(),
            spec.dim
        )));
    }
    let measure = match policy {
        EvalPolicy::Full => mu,
        EvalPolicy::Subsample { size, seed } => {
            if size == 0 {
                return Err(Error::domain("subsample size must be positive"));
            }
            if size >= mu.len() {
                mu
            } else {
                let mut rng = StreamKey::new(seed, "drift-subsample").stream(0);
                let mut idx = sample(&mut rng, mu.len(), size).into_vec();
                idx.sort_unstable();
                let total: f64 = idx.iter().map(|&i| mu.weights()[i]).sum();
                let paths = idx.iter().map(|&i| mu.path(i).clone()).collect();
                let weights = idx.iter().map(|&i| mu.weights()[i] / total).collect();
                Arc::new(Ensemble::with_weights(paths, weights)?)
            }
        }
    };
    Ok(FrozenDrift::from_parts(spec, measure))
}

impl FrozenDrift {
    fn from_parts(spec: &DriftSpec, measure: Arc<Ensemble>) -> Self {
        let (bases, parts) = spec.components();
        let n_nodes = measure.grid().n_nodes();
        let summaries = parts
            .iter()
            .map(|part| (0..n_nodes).map(|node| NodeSummary::build(part, spec.dim, measure.as_ref(), node)).collect())
            .collect();
        FrozenDrift {
            dim: spec.dim,
            bases,
            parts,
            measure,
            summaries,
            clamp_hits: AtomicU64::new(0),
            evaluations: AtomicU64::new(0),
        }
    }

    pub fn measure(&self) -> &Arc<Ensemble> {
        &self.measure
    }

    /// Singular-kernel evaluations clamped so far.
    pub fn clamp_hits(&self) -> u64 {
        self.clamp_hits.load(Ordering::Relaxed)
    }

    /// Pairwise kernel evaluations (or measure lookups) performed so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }
}

impl PathDrift for FrozenDrift {
    fn dim(&self) -> usize {
        self.dim
    }

    fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        self.measure
            .grid()
            .refinement_of(grid)
            .map(|_| ())
            .ok_or_else(|| Error::domain("frozen measure grid must refine the solver grid"))
    }

    fn eval(&self, x: PathView<'_>, out: &mut [f64]) {
        self.eval_excluding(x, None, out);
    }
}

impl FrozenDrift {
    /// Drift with member path `i` of the frozen law left out, for evaluation
    /// along that path itself.
    pub fn eval_leave_out(&self, x: PathView<'_>, i: usize, out: &mut [f64]) {
        let weight = self.measure.weights()[i];
        self.eval_excluding(x, Some(Exclude { index: i, weight }), out);
    }

    fn eval_excluding(&self, x: PathView<'_>, exclude: Option<Exclude>, out: &mut [f64]) {
        let ratio = self.measure.grid().n_steps() / x.grid().n_steps();
        let node = x.node() * ratio;
        out.fill(0.0);
        for b in &self.bases {
            b.add_to(x, out);
        }
        let mut tmp = vec![0.0; self.dim];
        let mut clamps = 0;
        for (part, table) in self.parts.iter().zip(&self.summaries) {
            clamps += table[node].eval(part, x, self.measure.as_ref(), node, exclude, &mut tmp);
            out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
        }
        if clamps > 0 {
            self.clamp_hits.fetch_add(clamps, Ordering::Relaxed);
        }
        if !self.parts.is_empty() {
            self.evaluations.fetch_add(self.measure.len() as u64, Ordering::Relaxed);
        }
    }
}

#[cfg(test)]
mod tests;
