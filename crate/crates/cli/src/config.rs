//! JSON run configuration. Every object rejects unknown keys.

use std::path::Path;

use mvlab::drift::{BaseDrift, DriftKind, DriftSpec, Kernel, NonlinearOp, SingularKernel};
use mvlab::noise::NoiseKind;
use mvlab::sde::{InitialLaw, SolverConfig};
use mvlab::spde::{FieldDrift, FieldKernel};
use mvlab::verify::{LpLqFunction, TestFunction};
use mvlab::TimeGrid;
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    Picard,
    Ladder,
    Particles,
    SpdeHeat,
    SpdeWave,
    Chaos,
    Verify,
    FbmOps,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Picard => "picard",
            Experiment::Ladder => "ladder",
            Experiment::Particles => "particles",
            Experiment::SpdeHeat => "spde-heat",
            Experiment::SpdeWave => "spde-wave",
            Experiment::Chaos => "chaos",
            Experiment::Verify => "verify",
            Experiment::FbmOps => "fbm-ops",
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub output: Option<String>,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub paths: Option<usize>,
    #[serde(default)]
    pub initial: Option<InitialConfig>,
    #[serde(default)]
    pub drift: Option<DriftConfig>,
    /// Write the full ensemble of the final law as `paths.csv`.
    #[serde(default)]
    pub save_paths: bool,
    #[serde(default)]
    pub picard: Option<PicardConfig>,
    #[serde(default)]
    pub ladder: Option<LadderConfig>,
    #[serde(default)]
    pub particles: Option<ParticlesConfig>,
    #[serde(default)]
    pub spde: Option<SpdeSection>,
    #[serde(default)]
    pub chaos: Option<ChaosSection>,
    #[serde(default)]
    pub verify: Option<VerifySection>,
    #[serde(default)]
    pub fbm_ops: Option<FbmOpsSection>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum NoiseName {
    Bm,
    Fbm,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseName,
    #[serde(default)]
    pub hurst: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_entropy_tol")]
    pub entropy_tol: f64,
    #[serde(default = "default_se_multiplier")]
    pub se_multiplier: f64,
}

fn default_entropy_tol() -> f64 {
    1e-3
}

fn default_se_multiplier() -> f64 {
    3.0
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { entropy_tol: default_entropy_tol(), se_multiplier: default_se_multiplier() }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_end: f64,
    pub n_steps: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Point {
        x: Vec<f64>,
    },
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<f64>,
    },
    /// CSV of sample points, relative to the config file.
    Samples {
        path: String,
    },
}

#[derive(Clone, Debug, Deserialize)]
/// Parameterless variants are empty structs so that stray keys are rejected.
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Constant { value: Vec<f64> },
    Mean {},
    Tanh {},
    RunningSup {},
    Sine {},
    Attraction {},
    SaturatedAttraction {},
    SelfSine {},
    Scaled { factor: f64, kernel: Box<KernelConfig> },
}

impl KernelConfig {
    fn build(&self) -> Kernel {
        match self {
            KernelConfig::Constant { value } => Kernel::Constant(value.clone()),
            KernelConfig::Mean {} => Kernel::Mean,
            KernelConfig::Tanh {} => Kernel::Tanh,
            KernelConfig::RunningSup {} => Kernel::RunningSup,
            KernelConfig::Sine {} => Kernel::Sine,
            KernelConfig::Attraction {} => Kernel::Attraction,
            KernelConfig::SaturatedAttraction {} => Kernel::SaturatedAttraction,
            KernelConfig::SelfSine {} => Kernel::SelfSine,
            KernelConfig::Scaled { factor, kernel } => kernel.build().scaled(*factor),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseConfig {
    Zero {},
    Constant { value: Vec<f64> },
    Linear { coefficient: f64 },
    SublinearPower { scale: f64, beta: f64 },
    RunningSup { coefficient: f64 },
}

impl BaseConfig {
    fn build(&self) -> BaseDrift {
        match self {
            BaseConfig::Zero {} => BaseDrift::Zero,
            BaseConfig::Constant { value } => BaseDrift::Constant(value.clone()),
            BaseConfig::Linear { coefficient } => BaseDrift::Linear(*coefficient),
            BaseConfig::SublinearPower { scale, beta } => BaseDrift::SublinearPower { scale: *scale, beta: *beta },
            BaseConfig::RunningSup { coefficient } => BaseDrift::RunningSup(*coefficient),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum OpConfig {
    TailBalance { strength: f64 },
    SaturatedMean { strength: f64 },
}

/// `drift.kind` with its `drift.params`.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftConfig {
    Zero,
    Bounded {
        kernel: KernelConfig,
    },
    LinearGrowth {
        #[serde(default)]
        base: Option<BaseConfig>,
        kernel: KernelConfig,
        growth: f64,
    },
    Sublinear {
        #[serde(default)]
        base: Option<BaseConfig>,
        kernel: KernelConfig,
        growth: f64,
        beta: f64,
    },
    Singular {
        exponent: f64,
        radius: f64,
        p: f64,
        q: f64,
    },
    NonlinearTv {
        op: OpConfig,
        #[serde(default)]
        lipschitz: Option<f64>,
    },
    Mixed {
        parts: Vec<DriftConfig>,
    },
}

impl DriftConfig {
    pub fn build(&self, dim: usize) -> mvlab::Result<DriftSpec> {
        let base = |b: &Option<BaseConfig>| b.as_ref().map_or(BaseDrift::Zero, BaseConfig::build);
        match self {
            DriftConfig::Zero => Ok(DriftSpec::zero(dim)),
            DriftConfig::Bounded { kernel } => DriftSpec::bounded(dim, kernel.build()),
            DriftConfig::LinearGrowth { base: b, kernel, growth } => DriftSpec::new(
                dim,
                DriftKind::LinearGrowthPath { base: base(b), kernel: kernel.build(), growth: *growth },
            ),
            DriftConfig::Sublinear { base: b, kernel, growth, beta } => DriftSpec::new(
                dim,
                DriftKind::SublinearState { base: base(b), kernel: kernel.build(), growth: *growth, beta: *beta },
            ),
            DriftConfig::Singular { exponent, radius, p, q } => DriftSpec::new(
                dim,
                DriftKind::SingularKernel { kernel: SingularKernel::new(*exponent, *radius), p: *p, q: *q },
            ),
            DriftConfig::NonlinearTv { op, lipschitz } => {
                let op = match op {
                    OpConfig::TailBalance { strength } => NonlinearOp::TailBalance { strength: *strength },
                    OpConfig::SaturatedMean { strength } => NonlinearOp::SaturatedMean { strength: *strength },
                };
                let lipschitz = lipschitz.unwrap_or_else(|| op.lipschitz(dim));
                DriftSpec::new(dim, DriftKind::NonlinearTv { op, lipschitz })
            }
            DriftConfig::Mixed { parts } => {
                let parts = parts.iter().map(|p| p.build(dim)).collect::<mvlab::Result<Vec<_>>>()?;
                DriftSpec::new(dim, DriftKind::Mixed(parts))
            }
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_max_iter() -> usize {
    10
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    pub levels: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticlesConfig {
    pub n: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldKernelConfig {
    Zero {},
    TanhOther { strength: f64 },
    SelfTanh { strength: f64 },
    SaturatedDiff { strength: f64 },
}

impl FieldKernelConfig {
    pub fn build(&self) -> FieldKernel {
        match *self {
            FieldKernelConfig::Zero {} => FieldKernel::Zero,
            FieldKernelConfig::TanhOther { strength } => FieldKernel::TanhOther { strength },
            FieldKernelConfig::SelfTanh { strength } => FieldKernel::SelfTanh { strength },
            FieldKernelConfig::SaturatedDiff { strength } => FieldKernel::SaturatedDiff { strength },
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldDriftConfig {
    Constant { coefficients: Vec<f64> },
    Interaction { kernel: FieldKernelConfig },
    SaturatedMeanDistance { strength: f64, clip: f64 },
}

impl FieldDriftConfig {
    pub fn build(&self) -> FieldDrift {
        match self {
            FieldDriftConfig::Constant { coefficients } => FieldDrift::Constant(coefficients.clone()),
            FieldDriftConfig::Interaction { kernel } => FieldDrift::Interaction(kernel.build()),
            FieldDriftConfig::SaturatedMeanDistance { strength, clip } => {
                FieldDrift::SaturatedMeanDistance { strength: *strength, clip: *clip }
            }
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpdeSection {
    pub modes: usize,
    #[serde(default)]
    pub quad_points: Option<usize>,
    pub replicas: usize,
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub noise_scale: f64,
    pub drift: FieldDriftConfig,
    /// Times of the spatial snapshots.
    #[serde(default)]
    pub snapshots: Vec<f64>,
    /// Replicas written to the coefficient dump.
    #[serde(default = "default_saved")]
    pub save_replicas: usize,
}

fn one() -> f64 {
    1.0
}

fn default_saved() -> usize {
    10
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldChaosConfig {
    pub modes: usize,
    #[serde(default)]
    pub quad_points: Option<usize>,
    pub kernel: FieldKernelConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosSection {
    pub ns: Vec<usize>,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default)]
    pub t: Option<f64>,
    pub reference_paths: usize,
    /// Heat-equation field particles instead of the SDE drift.
    #[serde(default)]
    pub field: Option<FieldChaosConfig>,
}

fn default_reps() -> usize {
    200
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunctionConfig {
    Zero {},
    Constant { c: f64 },
    Indicator { radius: f64 },
    RadialPower { exponent: f64, radius: f64 },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrylovConfig {
    pub t_values: Vec<f64>,
    pub samples: usize,
    pub dt: f64,
    #[serde(default)]
    pub start: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KhasminskiiConfig {
    pub lambda: f64,
    pub t: f64,
    pub samples: usize,
    pub dt: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub function: TestFunctionConfig,
    pub dim: usize,
    pub p: f64,
    pub q: f64,
    #[serde(default)]
    pub krylov: Option<KrylovConfig>,
    #[serde(default)]
    pub khasminskii: Option<KhasminskiiConfig>,
}

impl VerifySection {
    pub fn function(&self) -> mvlab::Result<LpLqFunction> {
        let f = match self.function {
            TestFunctionConfig::Zero {} => TestFunction::Zero,
            TestFunctionConfig::Constant { c } => TestFunction::Constant(c),
            TestFunctionConfig::Indicator { radius } => TestFunction::Indicator { radius },
            TestFunctionConfig::RadialPower { exponent, radius } => TestFunction::RadialPower { exponent, radius },
        };
        LpLqFunction::new(f, self.dim, self.p, self.q)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FbmOpsSection {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_op_steps")]
    pub n_steps: usize,
    #[serde(default = "default_cov_samples")]
    pub samples: usize,
}

fn default_alphas() -> Vec<f64> {
    vec![0.25, 0.3, 0.5]
}

fn default_op_steps() -> usize {
    2048
}

fn default_cov_samples() -> usize {
    1000
}

/// Parse a config; errors name the offending key path.
pub fn parse(text: &str) -> Result<(RunConfig, serde_json::Value), CliError> {
    let raw: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            CliError::Config(e.inner().to_string())
        } else {
            CliError::Config(format!("{path}: {}", e.inner()))
        }
    })?;
    Ok((cfg, raw))
}

pub fn require<'a, T>(v: &'a Option<T>, key: &str, exp: Experiment) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::Config(format!("missing field `{key}` required by experiment `{}`", exp.name())))
}

impl RunConfig {
    pub fn noise_kind(&self) -> Result<NoiseKind, CliError> {
        match (self.noise.kind, self.noise.hurst) {
            (NoiseName::Bm, None) => Ok(NoiseKind::Brownian),
            (NoiseName::Bm, Some(_)) => Err(CliError::Config("noise.hurst: only valid with noise.kind = fbm".into())),
            (NoiseName::Fbm, Some(hurst)) => Ok(NoiseKind::Fractional { hurst }),
            (NoiseName::Fbm, None) => Err(CliError::Config("noise: missing field `hurst` for fbm noise".into())),
        }
    }

    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        let g = require(&self.grid, "grid", self.experiment)?;
        TimeGrid::new(g.t_end, g.n_steps).map_err(|e| CliError::Config(format!("grid: {e}")))
    }

    pub fn initial_law(&self, base: &Path) -> Result<InitialLaw, CliError> {
        Ok(match require(&self.initial, "initial", self.experiment)? {
            InitialConfig::Point { x } => InitialLaw::PointMass(x.clone()),
            InitialConfig::Gaussian { mean, cov } => InitialLaw::Gaussian { mean: mean.clone(), cov: cov.clone() },
            InitialConfig::Samples { path } => {
                let file = std::fs::File::open(base.join(path))
                    .map_err(|e| CliError::Config(format!("initial.path: cannot open {path}: {e}")))?;
                InitialLaw::from_csv(file).map_err(|e| CliError::Config(format!("initial.path: {e}")))?
            }
        })
    }

    /// Solver settings from `grid`, `paths`, `initial` and `noise`.
    pub fn solver(&self, base: &Path, paths: usize) -> Result<SolverConfig, CliError> {
        SolverConfig::new(self.grid()?, paths, self.initial_law(base)?, self.noise.seed, self.noise_kind()?)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn drift_spec(&self, dim: usize) -> Result<DriftSpec, CliError> {
        require(&self.drift, "drift", self.experiment)?.build(dim).map_err(|e| CliError::Config(format!("drift: {e}")))
    }
}
