use std::io::Write;
use std::sync::Arc;

use crate::drift::{freeze_with, truncate, DriftSpec, EvalPolicy, FnDrift, FrozenDrift, PathDrift};
use crate::error::{Error, Result};
use crate::metrics::{girsanov_entropy_with, EntropyReport};
use crate::noise::{fbm_path_entropy_with, NoiseKind};
use crate::path::{Ensemble, Path};
use crate::rng::StreamKey;

use super::{Simulator, SolverConfig};

/// Starting law of the Picard iteration.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum PicardInit {
    /// Law of the driving noise started from `μ_0`.
    #[default]
    DriverLaw,
    /// A single constant path.
    PointMass(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub init: PicardInit,
    pub policy: EvalPolicy,
}

impl PicardOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        PicardOptions { tol, max_iter, init: PicardInit::DriverLaw, policy: EvalPolicy::Full }
    }
}

/// One row of the Picard log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapRecord {
    pub iter: usize,
    pub entropy_gap: f64,
    pub stderr: f64,
    pub tv_bound: f64,
}

#[derive(Clone, Debug)]
pub struct PicardState {
    pub iteration: usize,
    pub ensemble: Arc<Ensemble>,
    pub entropy_gap: f64,
    pub stderr: f64,
    pub tv_bound: f64,
    pub history: Vec<GapRecord>,
    pub converged: bool,
    /// Set after three consecutive non-decreasing gaps.
    pub non_contraction: bool,
    /// Entropy curve `t ↦ H` of the last iteration.
    pub last_report: Option<EntropyReport>,
    pub clamp_hits: u64,
    pub evaluations: u64,
    /// Sub-Gaussian constant of the initial law.
    pub c0: f64,
}

impl PicardState {
    /// CSV `iter,entropy_gap,stderr,tv_bound`.
    pub fn write_log<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "entropy_gap", "stderr", "tv_bound"])?;
        for r in &self.history {
            w.write_record(&[
                r.iter.to_string(),
                r.entropy_gap.to_string(),
                r.stderr.to_string(),
                r.tv_bound.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// The frozen drift of the final law.
    pub fn frozen(&self, spec: &DriftSpec) -> Result<FrozenDrift> {
        crate::drift::freeze(spec, self.ensemble.clone())
    }
}

/// Path entropy along `sample` between two frozen drifts. A drift marked
/// `leave_out` is evaluated along path `i` without member `i` of its law, so
/// a path never interacts with itself (or with its common-noise twin).
pub(crate) fn path_entropy(
    noise: NoiseKind,
    b1: (&FrozenDrift, bool),
    b2: (&FrozenDrift, bool),
    sample: &Ensemble,
) -> Result<EntropyReport> {
    let t = sample.grid().t_end();
    let d = sample.dim();
    for (b, loo) in [b1, b2] {
        if loo && b.measure().len() != sample.len() {
            return Err(Error::domain("leave-one-out needs index-aligned ensembles"));
        }
        b.check_grid(sample.grid())?;
    }
    let eval = |(b, loo): (&FrozenDrift, bool), i: usize, x: crate::path::PathView<'_>, out: &mut [f64]| {
        if loo {
            b.eval_leave_out(x, i, out)
        } else {
            b.eval(x, out)
        }
    };
    let diff = |i: usize, x: crate::path::PathView<'_>, diff: &mut [f64]| {
        let mut other = vec![0.0; d];
        eval(b1, i, x, diff);
        eval(b2, i, x, &mut other);
        diff.iter_mut().zip(&other).for_each(|(a, b)| *a -= b);
    };
    match noise {
        NoiseKind::Brownian => girsanov_entropy_with(sample, t, diff),
        NoiseKind::Fractional { hurst } => fbm_path_entropy_with(sample, hurst, t, diff),
    }
}

/// Measure-Picard iteration `μ^{k+1} = Φ(μ^k)` with fresh noise per
/// iteration, stopped once the path entropy between successive iterates
/// drops below `tol`.
pub fn picard_solve(spec: &DriftSpec, config: &SolverConfig, tol: f64, max_iter: usize) -> Result<PicardState> {
    picard_solve_with(spec, config, &PicardOptions::new(tol, max_iter))
}

pub fn picard_solve_with(spec: &DriftSpec, config: &SolverConfig, opts: &PicardOptions) -> Result<PicardState> {
    if !(opts.tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    if spec.dim() != config.dim() {
        return Err(Error::domain("drift and initial law dimensions differ"));
    }
    let sim = Simulator::new(config)?;
    let root = StreamKey::new(config.seed, "picard");
    let start = match &opts.init {
        PicardInit::DriverLaw => {
            let d = spec.dim();
            let zero = FnDrift::new(d, move |_, out: &mut [f64]| out.fill(0.0));
            sim.run(&zero, &root.child("iter", 0))?
        }
        PicardInit::PointMass(x) => {
            if x.len() != spec.dim() {
                return Err(Error::domain("point-mass start has wrong dimension"));
            }
            Ensemble::new(vec![Path::from_fn(config.grid, x.len(), |_, out| out.copy_from_slice(x))?])?
        }
    };
    let mut prev = freeze_with(spec, Arc::new(start), opts.policy)?;
    let mut state = PicardState {
        iteration: 0,
        ensemble: prev.measure().clone(),
        entropy_gap: f64::INFINITY,
        stderr: 0.0,
        tv_bound: f64::INFINITY,
        history: Vec::new(),
        converged: false,
        non_contraction: false,
        last_report: None,
        clamp_hits: 0,
        evaluations: 0,
        c0: config.initial.c0(),
    };
    let mut rising = 0;
    for k in 1..=opts.max_iter {
        let law = Arc::new(sim.run(&prev, &root.child("iter", k as u64))?);
        let next = freeze_with(spec, law.clone(), opts.policy)?;
        let report = path_entropy(config.noise, (&prev, false), (&next, true), &law)?;
        let (gap, se) = report.last();
        let record = GapRecord { iter: k, entropy_gap: gap, stderr: se, tv_bound: (2.0 * gap.max(0.0)).sqrt() };
        if let Some(last) = state.history.last() {
            rising = if gap >= last.entropy_gap { rising + 1 } else { 0 };
        }
        if rising >= 3 {
            state.non_contraction = true;
        }
        state.history.push(record);
        state.iteration = k;
        state.ensemble = law;
        state.entropy_gap = gap;
        state.stderr = se;
        state.tv_bound = record.tv_bound;
        state.last_report = Some(report);
        state.clamp_hits += prev.clamp_hits() + next.clamp_hits();
        state.evaluations += prev.evaluations() + next.evaluations();
        if gap < opts.tol {
            state.converged = true;
            break;
        }
        prev = next;
    }
    Ok(state)
}

#[derive(Clone, Debug)]
pub struct LadderRung {
    pub level: f64,
    pub state: PicardState,
    /// Path entropy between this level's fixed point and the previous one's,
    /// with its standard error; `None` on the first rung.
    pub cross_entropy: Option<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct LadderResult {
    pub rungs: Vec<LadderRung>,
    /// Some level did not reach the tolerance.
    pub failed: bool,
}

impl LadderResult {
    /// CSV `level,iterations,entropy_gap,converged,cross_entropy,cross_stderr`;
    /// the cross-level columns are empty on the first rung.
    pub fn write_log<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level", "iterations", "entropy_gap", "converged", "cross_entropy", "cross_stderr"])?;
        for r in &self.rungs {
            let (h, se) =
                r.cross_entropy.map_or((String::new(), String::new()), |(h, se)| (h.to_string(), se.to_string()));
            w.write_record(&[
                r.level.to_string(),
                r.state.iteration.to_string(),
                r.state.entropy_gap.to_string(),
                r.state.converged.to_string(),
                h,
                se,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Picard fixed points of `truncate(spec, n)` for increasing `n`. Every
/// level reuses the configured seed, so successive levels share their noise.
pub fn truncation_ladder(
    spec: &DriftSpec,
    levels: &[f64],
    config: &SolverConfig,
    tol: f64,
    max_iter: usize,
) -> Result<LadderResult> {
    if levels.is_empty() || levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("levels must be nonempty and strictly increasing"));
    }
    let mut rungs: Vec<LadderRung> = Vec::with_capacity(levels.len());
    let mut failed = false;
    let mut prev_spec: Option<DriftSpec> = None;
    for &level in levels {
        let cut = truncate(spec, level)?;
        let state = picard_solve(&cut, config, tol, max_iter)?;
        failed |= !state.converged;
        let cross_entropy = match (&prev_spec, rungs.last()) {
            (Some(ps), Some(prev)) => {
                let coarse = crate::drift::freeze(ps, prev.state.ensemble.clone())?;
                let fine = crate::drift::freeze(&cut, state.ensemble.clone())?;
                Some(path_entropy(config.noise, (&fine, true), (&coarse, true), &state.ensemble)?.last())
            }
            _ => None,
        };
        rungs.push(LadderRung { level, state, cross_entropy });
        prev_spec = Some(cut);
    }
    Ok(LadderResult { rungs, failed })
}
