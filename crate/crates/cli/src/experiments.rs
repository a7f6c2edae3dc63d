//! `prepare` turns a config into solver inputs without running anything, so
//! `validate` catches every config error; `execute` runs the plan and writes
//! the CSVs.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mvlab::chaos::{chaos_sweep, consistent_within, field_chaos_sweep, rate_fit, write_rate_fits, ChaosRun, RateFit};
use mvlab::drift::{DriftSpec, FnDrift};
use mvlab::noise::{frac_derivative, frac_integral, kh_inverse, rh_cov, FbmSampler, KH_MIN_STEPS};
use mvlab::sde::{
    euler_maruyama, particle_system, picard_solve, picard_solve_with, truncation_ladder, PicardOptions, PicardState,
    SolverConfig,
};
use mvlab::spde::{
    heat_mf_solve, wave_mf_solve, write_field_csv, write_snapshot_csv, FieldDrift, FieldInit, FieldKernel, FrozenField,
    SpdeConfig, SpdeDriftSpec, SpdeKind,
};
use mvlab::verify::{khasminskii_check, krylov_check, write_verify_log, LpLqFunction, McOptions};
use mvlab::{Ensemble, StreamKey, TimeGrid};
use rayon::prelude::*;
use serde_json::{json, Value};
use statrs::function::gamma::gamma;

use crate::config::{require, Experiment, NoiseName, RunConfig};
use crate::CliError;

pub struct Report {
    pub outputs: Vec<String>,
    pub summary: Value,
}

struct Iteration {
    tol: f64,
    max_iter: usize,
}

enum Job {
    Simulate { spec: Option<DriftSpec>, solver: SolverConfig },
    Picard { spec: DriftSpec, solver: SolverConfig, it: Iteration, save_paths: bool },
    Ladder { spec: DriftSpec, solver: SolverConfig, levels: Vec<f64>, it: Iteration },
    Particles { spec: DriftSpec, solver: SolverConfig, n: usize },
    Spde { spec: SpdeDriftSpec, cfg: SpdeConfig, it: Iteration, snapshots: Vec<f64>, save: usize },
    Chaos { spec: DriftSpec, solver: SolverConfig, sweep: Sweep, it: Iteration },
    FieldChaos { kernel: FieldKernel, cfg: SpdeConfig, sweep: Sweep, it: Iteration },
    Verify { f: LpLqFunction, krylov: Option<(Vec<f64>, McOptions)>, khasminskii: Option<(f64, f64, McOptions)> },
    FbmOps { hurst: f64, grid: TimeGrid, samples: usize, alphas: Vec<f64>, n_steps: usize, seed: u64 },
}

struct Sweep {
    ns: Vec<usize>,
    reps: usize,
    t: f64,
    se_multiplier: f64,
}

pub struct Plan {
    job: Job,
}

fn config_err(key: &str) -> impl Fn(mvlab::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("{key}: {e}"))
}

fn iteration(cfg: &RunConfig) -> Result<Iteration, CliError> {
    let tol = cfg.picard.as_ref().and_then(|p| p.tol).unwrap_or(cfg.tolerances.entropy_tol);
    let max_iter = cfg.picard.as_ref().map_or(10, |p| p.max_iter);
    if !(tol > 0.0) || max_iter == 0 {
        return Err(CliError::Config("picard: need tol > 0 and max_iter >= 1".into()));
    }
    Ok(Iteration { tol, max_iter })
}

fn require_bm(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.noise.kind != NoiseName::Bm {
        return Err(CliError::Config(format!(
            "noise.kind: experiment `{}` needs Brownian noise",
            cfg.experiment.name()
        )));
    }
    cfg.noise_kind().map(|_| ())
}

/// Solver settings plus a drift of matching dimension.
fn sde_inputs(cfg: &RunConfig, base: &Path, paths: usize) -> Result<(DriftSpec, SolverConfig), CliError> {
    let solver = cfg.solver(base, paths)?;
    let spec = cfg.drift_spec(solver.dim())?;
    Ok((spec, solver))
}

fn spde_config(
    cfg: &RunConfig,
    kind: SpdeKind,
    modes: usize,
    quad: Option<usize>,
    replicas: usize,
) -> Result<SpdeConfig, CliError> {
    let mut sc = SpdeConfig::new(kind, modes, cfg.grid()?, replicas, cfg.noise.seed);
    if let Some(q) = quad {
        sc.quad_points = q;
    }
    sc.basis().map_err(config_err("spde"))?;
    Ok(sc)
}

pub fn prepare(cfg: &RunConfig, base: &Path) -> Result<Plan, CliError> {
    let exp = cfg.experiment;
    let paths = || require(&cfg.paths, "paths", exp).copied();
    let job = match exp {
        Experiment::Simulate => {
            let solver = cfg.solver(base, paths()?)?;
            let spec = match &cfg.drift {
                Some(_) => Some(cfg.drift_spec(solver.dim())?),
                None => None,
            };
            Job::Simulate { spec, solver }
        }
        Experiment::Picard => {
            let (spec, solver) = sde_inputs(cfg, base, paths()?)?;
            Job::Picard { spec, solver, it: iteration(cfg)?, save_paths: cfg.save_paths }
        }
        Experiment::Ladder => {
            let (spec, solver) = sde_inputs(cfg, base, paths()?)?;
            let levels = require(&cfg.ladder, "ladder", exp)?.levels.clone();
            if levels.is_empty() || levels.windows(2).any(|w| w[1] <= w[0]) || levels[0] < 0.0 {
                return Err(CliError::Config("ladder.levels: must be nonnegative and strictly increasing".into()));
            }
            Job::Ladder { spec, solver, levels, it: iteration(cfg)? }
        }
        Experiment::Particles => {
            let n = require(&cfg.particles, "particles", exp)?.n;
            if n < 2 {
                return Err(CliError::Config("particles.n: need at least two particles".into()));
            }
            let (spec, solver) = sde_inputs(cfg, base, cfg.paths.unwrap_or(n))?;
            Job::Particles { spec, solver, n }
        }
        Experiment::SpdeHeat | Experiment::SpdeWave => {
            require_bm(cfg)?;
            let s = require(&cfg.spde, "spde", exp)?;
            let kind = if exp == Experiment::SpdeHeat { SpdeKind::Heat } else { SpdeKind::Wave };
            let mut sc = spde_config(cfg, kind, s.modes, s.quad_points, s.replicas)?;
            sc.noise_scale = s.noise_scale;
            if let Some(c) = &s.initial {
                if c.len() != sc.state_dim() {
                    return Err(CliError::Config(format!(
                        "spde.initial: expected {} coefficients, got {}",
                        sc.state_dim(),
                        c.len()
                    )));
                }
                sc.initial = FieldInit::Coefficients(c.clone());
            }
            let drift = s.drift.build();
            if let FieldDrift::Constant(c) = &drift {
                if c.len() != s.modes {
                    return Err(CliError::Config(format!("spde.drift: expected {} coefficients", s.modes)));
                }
            }
            let spec = SpdeDriftSpec::new(drift).map_err(config_err("spde.drift"))?;
            let t_end = sc.grid.t_end();
            if let Some(t) = s.snapshots.iter().find(|t| !(**t >= 0.0 && **t <= t_end)) {
                return Err(CliError::Config(format!("spde.snapshots: time {t} outside [0, {t_end}]")));
            }
            Job::Spde { spec, cfg: sc, it: iteration(cfg)?, snapshots: s.snapshots.clone(), save: s.save_replicas }
        }
        Experiment::Chaos => {
            let c = require(&cfg.chaos, "chaos", exp)?;
            if c.ns.len() < 4 || c.ns.iter().any(|&n| n < 2) || c.repetitions < 2 {
                return Err(CliError::Config("chaos: need at least four sizes N >= 2 and two repetitions".into()));
            }
            let grid = cfg.grid()?;
            let t = c.t.unwrap_or(grid.t_end());
            grid.snap(t).map_err(config_err("chaos.t"))?;
            let sweep = Sweep { ns: c.ns.clone(), reps: c.repetitions, t, se_multiplier: cfg.tolerances.se_multiplier };
            match &c.field {
                None => {
                    let (spec, solver) = sde_inputs(cfg, base, c.reference_paths)?;
                    Job::Chaos { spec, solver, sweep, it: iteration(cfg)? }
                }
                Some(f) => {
                    require_bm(cfg)?;
                    let sc = spde_config(cfg, SpdeKind::Heat, f.modes, f.quad_points, c.reference_paths)?;
                    Job::FieldChaos { kernel: f.kernel.build(), cfg: sc, sweep, it: iteration(cfg)? }
                }
            }
        }
        Experiment::Verify => {
            require_bm(cfg)?;
            let v = require(&cfg.verify, "verify", exp)?;
            let f = v.function().map_err(config_err("verify"))?;
            if !f.admissible() {
                return Err(CliError::Config(format!("verify: (p, q) = ({}, {}) violates d/p + 2/q < 1", f.p, f.q)));
            }
            if v.krylov.is_none() && v.khasminskii.is_none() {
                return Err(CliError::Config("verify: need `krylov` or `khasminskii`".into()));
            }
            let krylov = match &v.krylov {
                Some(k) => {
                    let mut mc = McOptions::new(k.samples, k.dt, cfg.noise.seed, v.dim);
                    if let Some(s) = &k.start {
                        mc.start = s.clone();
                    }
                    if mc.start.len() != v.dim || k.t_values.iter().any(|t| !(*t > 0.0)) {
                        return Err(CliError::Config("verify.krylov: bad start dimension or nonpositive t".into()));
                    }
                    Some((k.t_values.clone(), mc))
                }
                None => None,
            };
            let khasminskii = match &v.khasminskii {
                Some(k) if !(k.lambda > 0.0 && k.t > 0.0) => {
                    return Err(CliError::Config("verify.khasminskii: need lambda > 0 and t > 0".into()))
                }
                Some(k) => Some((k.lambda, k.t, McOptions::new(k.samples, k.dt, cfg.noise.seed, v.dim))),
                None => None,
            };
            Job::Verify { f, krylov, khasminskii }
        }
        Experiment::FbmOps => {
            let hurst = match cfg.noise_kind()? {
                mvlab::noise::NoiseKind::Fractional { hurst } => hurst,
                mvlab::noise::NoiseKind::Brownian => {
                    return Err(CliError::Config("noise.kind: fbm-ops needs fbm noise with a Hurst index".into()))
                }
            };
            let grid = cfg.grid()?;
            let ops =
                cfg.fbm_ops.clone().unwrap_or_else(|| serde_json::from_value(json!({})).expect("fbm_ops defaults"));
            if ops.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
                return Err(CliError::Config("fbm_ops.alphas: every alpha must lie in (0, 1)".into()));
            }
            if ops.n_steps < KH_MIN_STEPS || ops.samples < 2 {
                return Err(CliError::Config(format!("fbm_ops: need n_steps >= {KH_MIN_STEPS} and samples >= 2")));
            }
            Job::FbmOps {
                hurst,
                grid,
                samples: ops.samples,
                alphas: ops.alphas,
                n_steps: ops.n_steps,
                seed: cfg.noise.seed,
            }
        }
    };
    Ok(Plan { job })
}

struct Sink<'a> {
    dir: &'a Path,
    outputs: Vec<String>,
}

impl Sink<'_> {
    fn write(&mut self, name: &str, f: impl FnOnce(BufWriter<File>) -> mvlab::Result<()>) -> Result<(), CliError> {
        let path: PathBuf = self.dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        f(BufWriter::new(file)).map_err(|e| match e {
            mvlab::Error::Io(_) => CliError::Io(format!("{name}: {e}")),
            e => CliError::Numeric(format!("{name}: {e}")),
        })?;
        self.outputs.push(name.to_string());
        Ok(())
    }
}

fn picard_summary(st: &PicardState) -> Value {
    json!({
        "iterations": st.iteration,
        "converged": st.converged,
        "entropy_gap": st.entropy_gap,
        "stderr": st.stderr,
        "tv_bound": st.tv_bound,
        "non_contraction": st.non_contraction,
        "c0": st.c0,
        "clamp_hits": st.clamp_hits,
        "evaluations": st.evaluations,
    })
}

fn picard_outputs(sink: &mut Sink<'_>, st: &PicardState) -> Result<(), CliError> {
    sink.write("picard_log.csv", |w| st.write_log(w))?;
    if let Some(report) = &st.last_report {
        sink.write("entropy.csv", |w| report.write_csv(w))?;
    }
    Ok(())
}

/// Fits of every statistic that is positive at all `N`.
fn chaos_outputs(sink: &mut Sink<'_>, run: &ChaosRun, se_multiplier: f64) -> Result<Value, CliError> {
    sink.write("chaos_log.csv", |w| run.write_log(w))?;
    let ns = run.ns();
    let scaled = run.scaled_gaps();
    let stats: [(&str, Vec<f64>); 4] = [
        ("drift_gap", run.rows.iter().map(|r| r.drift_gap.value).collect()),
        ("scaled_gap", scaled.iter().map(|e| e.value).collect()),
        ("system_entropy", run.rows.iter().map(|r| r.system_entropy.value).collect()),
        ("entropy_per_particle", run.rows.iter().map(|r| r.system_entropy.value / r.n as f64).collect()),
    ];
    let fits: Vec<(&str, RateFit)> =
        stats.iter().filter_map(|(name, y)| rate_fit(&ns, y).ok().map(|f| (*name, f))).collect();
    sink.write("rate_fit.csv", |w| write_rate_fits(&fits, w))?;
    let slopes: serde_json::Map<String, Value> = fits
        .iter()
        .map(|(name, f)| (name.to_string(), json!({"slope": f.slope, "half_width": f.half_width})))
        .collect();
    Ok(json!({
        "t": run.t,
        "rate_fits": slopes,
        "scaled_gap_consistent": consistent_within(&scaled, se_multiplier),
    }))
}

fn fbm_ops(
    sink: &mut Sink<'_>,
    hurst: f64,
    grid: TimeGrid,
    samples: usize,
    alphas: &[f64],
    n_steps: usize,
    seed: u64,
) -> Result<Value, CliError> {
    let sampler = FbmSampler::new(hurst, grid, 1)?;
    let key = StreamKey::new(seed, "fbm-ops");
    let nodes = grid.n_nodes();
    let paths: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; nodes];
            sampler.sample_scalar(&mut key.stream(i as u64), &mut out);
            out
        })
        .collect();
    let mut worst = 0.0f64;
    let mut rows = Vec::with_capacity(nodes * (nodes - 1) / 2);
    for i in 1..nodes {
        for j in i..nodes {
            let emp = paths.iter().map(|p| p[i] * p[j]).sum::<f64>() / samples as f64;
            let exact = rh_cov(grid.time(i), grid.time(j), hurst)?;
            worst = worst.max((emp - exact).abs());
            rows.push((grid.time(i), grid.time(j), emp, exact));
        }
    }
    sink.write("fbm_cov.csv", |out| {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["s", "t", "empirical", "exact"])?;
        for (s, t, e, x) in &rows {
            w.write_record(&[s.to_string(), t.to_string(), e.to_string(), x.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;

    // operators applied to f(t) = t on [0, 1]
    let op_grid = TimeGrid::new(1.0, n_steps)?;
    let dt = op_grid.dt();
    let lin: Vec<f64> = op_grid.times().collect();
    let mut ops = Vec::new();
    for &a in alphas {
        let i = frac_integral(&lin, dt, a)?;
        let d = frac_derivative(&lin, dt, a)?;
        ops.push((a, "integral", i, 1.0 / gamma(2.0 + a), 1.0 + a));
        ops.push((a, "derivative", d, 1.0 / gamma(2.0 - a), 1.0 - a));
    }
    sink.write("fracops.csv", |out| {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["alpha", "op", "t", "value", "exact"])?;
        for (a, name, vals, c, e) in &ops {
            for (t, v) in lin.iter().zip(vals) {
                w.write_record(&[
                    a.to_string(),
                    name.to_string(),
                    t.to_string(),
                    v.to_string(),
                    (c * t.powf(*e)).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;

    // K_H^{-1} of h(s) = s is Γ(3/2 - H)/Γ(2 - 2H) s^{1/2 - H}, on cell midpoints
    let kh = kh_inverse(&lin, &op_grid, hurst)?;
    let c = gamma(1.5 - hurst) / gamma(2.0 - 2.0 * hurst);
    sink.write("kh_inverse.csv", |out| {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "value", "exact"])?;
        for (j, v) in kh.iter().enumerate() {
            let s = (j as f64 + 0.5) * dt;
            w.write_record(&[s.to_string(), v.to_string(), (c * s.powf(0.5 - hurst)).to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(json!({"hurst": hurst, "jitter": sampler.jitter(), "max_cov_abs_err": worst}))
}

pub fn execute(plan: &Plan, dir: &Path) -> Result<Report, CliError> {
    let mut sink = Sink { dir, outputs: Vec::new() };
    let summary = match &plan.job {
        Job::Simulate { spec: None, solver } => {
            let zero = FnDrift::new(solver.dim(), |_, out: &mut [f64]| out.fill(0.0));
            let paths = euler_maruyama(&zero, solver)?;
            sink.write("paths.csv", |w| paths.write_csv(w))?;
            json!({"paths": paths.len(), "drift": "zero"})
        }
        Job::Simulate { spec: Some(spec), solver } => {
            // one application of the Picard map to the driver law
            let st = picard_solve_with(spec, solver, &PicardOptions::new(f64::MIN_POSITIVE, 1))?;
            sink.write("paths.csv", |w| st.ensemble.write_csv(w))?;
            json!({"paths": st.ensemble.len(), "drift": "frozen at the driver law"})
        }
        Job::Picard { spec, solver, it, save_paths } => {
            let st = picard_solve(spec, solver, it.tol, it.max_iter)?;
            picard_outputs(&mut sink, &st)?;
            if *save_paths {
                sink.write("paths.csv", |w| st.ensemble.write_csv(w))?;
            }
            picard_summary(&st)
        }
        Job::Ladder { spec, solver, levels, it } => {
            let res = truncation_ladder(spec, levels, solver, it.tol, it.max_iter)?;
            sink.write("ladder_log.csv", |w| res.write_log(w))?;
            let cross: Vec<Value> = res.rungs.iter().filter_map(|r| r.cross_entropy).map(|(h, _)| json!(h)).collect();
            json!({"levels": levels, "all_converged": !res.failed, "cross_entropies": cross})
        }
        Job::Particles { spec, solver, n } => {
            let sys = particle_system(spec, *n, solver)?;
            sink.write("particles.csv", |w| sys.write_csv(w))?;
            json!({"particles": n})
        }
        Job::Spde { spec, cfg, it, snapshots, save } => {
            let st = match cfg.kind {
                SpdeKind::Heat => heat_mf_solve(spec, cfg, it.tol, it.max_iter)?,
                SpdeKind::Wave => wave_mf_solve(spec, cfg, it.tol, it.max_iter)?,
            };
            picard_outputs(&mut sink, &st)?;
            let kept = Ensemble::new(st.ensemble.paths()[..(*save).min(st.ensemble.len())].to_vec());
            if let Ok(kept) = kept {
                sink.write("field_coeffs.csv", |w| write_field_csv(&kept, w))?;
                if !snapshots.is_empty() {
                    let basis = cfg.basis()?;
                    sink.write("field_snapshots.csv", |w| write_snapshot_csv(&kept, &basis, snapshots, w))?;
                }
            }
            picard_summary(&st)
        }
        Job::Chaos { spec, solver, sweep, it } => {
            let reference = picard_solve(spec, solver, it.tol, it.max_iter)?;
            let run = chaos_sweep(spec, &sweep.ns, sweep.reps, solver, reference.ensemble.clone(), sweep.t)?;
            let mut s = chaos_outputs(&mut sink, &run, sweep.se_multiplier)?;
            s["reference"] = picard_summary(&reference);
            s
        }
        Job::FieldChaos { kernel, cfg, sweep, it } => {
            let spec = SpdeDriftSpec::new(FieldDrift::Interaction(*kernel))?;
            let reference = heat_mf_solve(&spec, cfg, it.tol, it.max_iter)?;
            let mf = FrozenField::new(&spec, Arc::new(cfg.basis()?), reference.ensemble.clone())?;
            let run = field_chaos_sweep(kernel, &sweep.ns, sweep.reps, cfg, &mf, sweep.t)?;
            let mut s = chaos_outputs(&mut sink, &run, sweep.se_multiplier)?;
            s["reference"] = picard_summary(&reference);
            s
        }
        Job::Verify { f, krylov, khasminskii } => {
            let kr = match krylov {
                Some((ts, mc)) => vec![krylov_check(f, ts, mc)?],
                None => Vec::new(),
            };
            let kh = match khasminskii {
                Some((lambda, t, mc)) => vec![khasminskii_check(f, *lambda, *t, mc)?],
                None => Vec::new(),
            };
            sink.write("verify_log.csv", |w| write_verify_log(&kr, &kh, w))?;
            json!({
                "krylov_exponent": kr.first().and_then(|r| r.exponent).map(|(s, hw)| json!({"slope": s, "half_width": hw})),
                "bound_exponent": f.bound_exponent(),
                "khasminskii": kh.first().map(|r| json!({
                    "estimate": r.estimate, "stderr": r.stderr, "relative_change": r.relative_change, "divergent": r.divergent,
                })),
            })
        }
        Job::FbmOps { hurst, grid, samples, alphas, n_steps, seed } => {
            fbm_ops(&mut sink, *hurst, *grid, *samples, alphas, *n_steps, *seed)?
        }
    };
    Ok(Report { outputs: sink.outputs, summary })
}
