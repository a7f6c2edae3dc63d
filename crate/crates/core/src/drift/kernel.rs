use std::fmt;
use std::sync::Arc;

use crate::path::{euclid, PathView};

type KernelFn = dyn Fn(PathView<'_>, PathView<'_>, &mut [f64]) + Send + Sync;
type BaseFn = dyn Fn(PathView<'_>, &mut [f64]) + Send + Sync;

/// Singular profile `|z|^{-a} 1_{|z| <= radius}` evaluated on `z = x_t - y_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingularKernel {
    pub exponent: f64,
    pub radius: f64,
    pub clamp_radius: f64,
}

impl SingularKernel {
    pub const DEFAULT_CLAMP: f64 = 1e-6;

    pub fn new(exponent: f64, radius: f64) -> Self {
        SingularKernel { exponent, radius, clamp_radius: Self::DEFAULT_CLAMP * radius }
    }

    /// Profile at distance `r`; the flag is set when the clamp was used.
    #[inline]
    pub fn profile(&self, r: f64) -> (f64, bool) {
        if r > self.radius {
            (0.0, false)
        } else if r < self.clamp_radius {
            (self.clamp_radius.powf(-self.exponent), true)
        } else {
            (r.powf(-self.exponent), false)
        }
    }
}

/// User-supplied interaction `b(t, x, y)` on path prefixes.
#[derive(Clone)]
pub struct CustomKernel {
    pub name: String,
    pub bound: Option<f64>,
    pub(crate) f: Arc<KernelFn>,
}

impl CustomKernel {
    pub fn new(
        name: impl Into<String>,
        bound: Option<f64>,
        f: impl Fn(PathView<'_>, PathView<'_>, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        CustomKernel { name: name.into(), bound, f: Arc::new(f) }
    }
}

impl fmt::Debug for CustomKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomKernel({})", self.name)
    }
}

/// Built-in interaction kernels `b(t, x, y)`. Coordinatewise unless noted.
#[derive(Clone, Debug)]
pub enum Kernel {
    /// `b ≡ c`
    Constant(Vec<f64>),
    /// `y_t`
    Mean,
    /// `tanh(y_t)`
    Tanh,
    /// `‖y‖_t` on every coordinate (path dependent, linear growth).
    RunningSup,
    /// `sin(x_t - y_t)`
    Sine,
    /// `-(x_t - y_t)`
    Attraction,
    /// `atan(y_t - x_t)`
    SaturatedAttraction,
    /// `sin(x_t)`; ignores the other particle.
    SelfSine,
    /// `|x_t - y_t|^{-a} 1_{|x_t - y_t| <= r}` on every coordinate.
    Singular(SingularKernel),
    Scaled(f64, Box<Kernel>),
    Custom(CustomKernel),
}

/// How a kernel depends on its arguments; selects the per-node summary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Structure {
    /// Depends on `y` only.
    OtherOnly,
    /// Depends on `x` only.
    SelfOnly,
    /// `sin(x - y)`
    Trig,
    /// `y - x`
    Affine,
    /// Radial singular profile, `d = 1`.
    Radial,
    Generic,
}

impl Kernel {
    pub fn scaled(self, factor: f64) -> Kernel {
        Kernel::Scaled(factor, Box::new(self))
    }

    /// `sup |b|` per coordinate when finite.
    pub fn bound(&self) -> Option<f64> {
        match self {
            Kernel::Constant(c) => Some(c.iter().fold(0.0, |m, v| m.max(v.abs()))),
            Kernel::Tanh | Kernel::Sine | Kernel::SelfSine => Some(1.0),
            Kernel::SaturatedAttraction => Some(std::f64::consts::FRAC_PI_2),
            Kernel::Scaled(a, k) => k.bound().map(|b| a.abs() * b),
            Kernel::Custom(c) => c.bound,
            Kernel::Mean | Kernel::RunningSup | Kernel::Attraction | Kernel::Singular(_) => None,
        }
    }

    /// Peel nested scalings: `b = factor * base`.
    pub(crate) fn split_scale(&self) -> (f64, &Kernel) {
        match self {
            Kernel::Scaled(a, k) => {
                let (b, base) = k.split_scale();
                (a * b, base)
            }
            k => (1.0, k),
        }
    }

    pub(crate) fn structure(&self, dim: usize, truncation: Option<f64>) -> Structure {
        let (scale, base) = self.split_scale();
        let clip_is_noop = match (truncation, self.bound()) {
            (None, _) => true,
            (Some(n), Some(b)) => b <= n,
            (Some(_), None) => false,
        };
        match base {
            Kernel::Constant(_) | Kernel::Mean | Kernel::Tanh | Kernel::RunningSup => Structure::OtherOnly,
            Kernel::SelfSine => Structure::SelfOnly,
            Kernel::Sine if clip_is_noop => Structure::Trig,
            Kernel::Attraction if clip_is_noop => Structure::Affine,
            Kernel::Singular(_) if dim == 1 && scale >= 0.0 => Structure::Radial,
            _ => Structure::Generic,
        }
    }

    /// Feature `φ(y)` of a kernel with [`Structure::OtherOnly`], before scaling.
    pub(crate) fn other_feature(&self, y: PathView<'_>, out: &mut [f64]) {
        match self {
            Kernel::Constant(c) => out.copy_from_slice(c),
            Kernel::Mean => out.copy_from_slice(y.current()),
            Kernel::Tanh => {
                for (o, v) in out.iter_mut().zip(y.current()) {
                    *o = v.tanh();
                }
            }
            Kernel::RunningSup => out.fill(y.running_sup()),
            _ => unreachable!("not an other-only kernel"),
        }
    }

    /// Direct evaluation of `b(t, x, y)`; returns `true` if a singular clamp fired.
    pub fn eval(&self, x: PathView<'_>, y: PathView<'_>, out: &mut [f64]) -> bool {
        match self {
            Kernel::Constant(_) | Kernel::Mean | Kernel::Tanh | Kernel::RunningSup => {
                self.other_feature(y, out);
                false
            }
            Kernel::Sine => {
                for ((o, a), b) in out.iter_mut().zip(x.current()).zip(y.current()) {
                    *o = (a - b).sin();
                }
                false
            }
            Kernel::Attraction => {
                for ((o, a), b) in out.iter_mut().zip(x.current()).zip(y.current()) {
                    *o = b - a;
                }
                false
            }
            Kernel::SaturatedAttraction => {
                for ((o, a), b) in out.iter_mut().zip(x.current()).zip(y.current()) {
                    *o = (b - a).atan();
                }
                false
            }
            Kernel::SelfSine => {
                for (o, a) in out.iter_mut().zip(x.current()) {
                    *o = a.sin();
                }
                false
            }
            Kernel::Singular(s) => {
                let r = x.current().iter().zip(y.current()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let (v, clamped) = s.profile(r);
                out.fill(v);
                clamped
            }
            Kernel::Scaled(a, k) => {
                let clamped = k.eval(x, y, out);
                out.iter_mut().for_each(|o| *o *= a);
                clamped
            }
            Kernel::Custom(c) => {
                (c.f)(x, y, out);
                false
            }
        }
    }
}

/// The non-interacting drift `b_0(t, x)`.
#[derive(Clone)]
pub enum BaseDrift {
    Zero,
    Constant(Vec<f64>),
    /// `a * x_t`
    Linear(f64),
    /// `k * sign(x_t) |x_t|^β` per coordinate.
    SublinearPower {
        scale: f64,
        beta: f64,
    },
    /// `k * ‖x‖_t` on every coordinate.
    RunningSup(f64),
    Custom(String, Arc<BaseFn>),
}

impl fmt::Debug for BaseDrift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseDrift::Zero => write!(f, "Zero"),
            BaseDrift::Constant(c) => write!(f, "Constant({c:?})"),
            BaseDrift::Linear(a) => write!(f, "Linear({a})"),
            BaseDrift::SublinearPower { scale, beta } => write!(f, "SublinearPower({scale}, {beta})"),
            BaseDrift::RunningSup(k) => write!(f, "RunningSup({k})"),
            BaseDrift::Custom(name, _) => write!(f, "Custom({name})"),
        }
    }
}

impl BaseDrift {
    pub fn custom(name: impl Into<String>, f: impl Fn(PathView<'_>, &mut [f64]) + Send + Sync + 'static) -> Self {
        BaseDrift::Custom(name.into(), Arc::new(f))
    }

    /// Adds `b_0(t, x)` into `out`.
    pub fn add_to(&self, x: PathView<'_>, out: &mut [f64]) {
        match self {
            BaseDrift::Zero => {}
            BaseDrift::Constant(c) => out.iter_mut().zip(c).for_each(|(o, c)| *o += c),
            BaseDrift::Linear(a) => out.iter_mut().zip(x.current()).for_each(|(o, v)| *o += a * v),
            BaseDrift::SublinearPower { scale, beta } => {
                out.iter_mut().zip(x.current()).for_each(|(o, v)| *o += scale * v.signum() * v.abs().powf(*beta))
            }
            BaseDrift::RunningSup(k) => {
                let s = k * x.running_sup();
                out.iter_mut().for_each(|o| *o += s);
            }
            BaseDrift::Custom(_, f) => {
                let mut tmp = vec![0.0; out.len()];
                f(x, &mut tmp);
                out.iter_mut().zip(tmp).for_each(|(o, v)| *o += v);
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, BaseDrift::Zero)
    }
}

/// Measure-nonlinear drift `B(t, x_t, μ_t)`, Lipschitz in total variation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NonlinearOp {
    /// `L (μ(y_k <= x_k) - 1/2)` per coordinate.
    TailBalance { strength: f64 },
    /// `L tanh(<μ, tanh y_k> - x_k)` per coordinate.
    SaturatedMean { strength: f64 },
}

impl NonlinearOp {
    /// TV-Lipschitz constant of `x ↦ B(t, x, ·)` in the Euclidean norm,
    /// with TV normalized to `[0, 1]`.
    pub fn lipschitz(&self, dim: usize) -> f64 {
        let root = (dim as f64).sqrt();
        match self {
            NonlinearOp::TailBalance { strength } => strength.abs() * root,
            NonlinearOp::SaturatedMean { strength } => 2.0 * strength.abs() * root,
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            NonlinearOp::TailBalance { strength } => 0.5 * strength.abs(),
            NonlinearOp::SaturatedMean { strength } => strength.abs(),
        }
    }

    /// Direct evaluation against a weighted marginal, skipping `exclude`.
    pub(crate) fn eval_cloud<'a>(&self, x: &[f64], points: impl Iterator<Item = (&'a [f64], f64)>, out: &mut [f64]) {
        let dim = x.len();
        let mut acc = vec![0.0; dim];
        let mut total = 0.0;
        for (y, w) in points {
            total += w;
            for k in 0..dim {
                acc[k] += w * match self {
                    NonlinearOp::TailBalance { .. } => f64::from(u8::from(y[k] <= x[k])),
                    NonlinearOp::SaturatedMean { .. } => y[k].tanh(),
                };
            }
        }
        for k in 0..dim {
            let avg = if total > 0.0 { acc[k] / total } else { 0.0 };
            out[k] = self.apply(x[k], avg);
        }
    }

    /// Combines the per-coordinate functional of the measure with `x_k`.
    #[inline]
    pub(crate) fn apply(&self, xk: f64, functional: f64) -> f64 {
        match self {
            NonlinearOp::TailBalance { strength } => strength * (functional - 0.5),
            NonlinearOp::SaturatedMean { strength } => strength * (functional - xk).tanh(),
        }
    }
}

pub(crate) fn clip(out: &mut [f64], level: Option<f64>) {
    if let Some(n) = level {
        out.iter_mut().for_each(|v| *v = v.clamp(-n, n));
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    euclid(v)
}
