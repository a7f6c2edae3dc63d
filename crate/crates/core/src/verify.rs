//! Monte-Carlo checks of the Krylov and Khasminskii estimates for Brownian
//! motion and closed-form singular test functions.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::gamma::gamma;

use crate::chaos::rate_fit;
use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// Singular evaluations closer than this to the origin are clamped.
pub const CLAMP: f64 = 1e-8;

/// Closed-form test functions `f(x)` (constant in time).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestFunction {
    Zero,
    /// `f ≡ c`; not in any `L^p` with `p < ∞`, used as a diagnostic.
    Constant(f64),
    /// `1_{[-r, r]^d}`
    Indicator {
        radius: f64,
    },
    /// `|x|^{-a} 1_{|x| <= r}`
    RadialPower {
        exponent: f64,
        radius: f64,
    },
}

/// A test function with its integrability exponents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LpLqFunction {
    pub f: TestFunction,
    pub dim: usize,
    pub p: f64,
    pub q: f64,
}

impl LpLqFunction {
    pub fn new(f: TestFunction, dim: usize, p: f64, q: f64) -> Result<Self> {
        if dim == 0 || !(p > 1.0 && q > 1.0) {
            return Err(Error::domain("need d >= 1 and p, q > 1"));
        }
        match f {
            TestFunction::Indicator { radius } if !(radius > 0.0) => {
                return Err(Error::domain("indicator radius must be positive"))
            }
            TestFunction::RadialPower { exponent, radius } => {
                if !(radius > 0.0 && exponent >= 0.0) {
                    return Err(Error::domain("need a nonnegative exponent and a positive radius"));
                }
                if exponent * p >= dim as f64 {
                    return Err(Error::domain(format!("|x|^-{exponent} is not in L^{p} on R^{dim}")));
                }
            }
            TestFunction::Constant(c) if !c.is_finite() => return Err(Error::domain("constant must be finite")),
            _ => {}
        }
        Ok(LpLqFunction { f, dim, p, q })
    }

    /// `d/p + 2/q < 1`
    pub fn admissible(&self) -> bool {
        self.dim as f64 / self.p + 2.0 / self.q < 1.0
    }

    /// `‖f‖_{L^p(R^d)}`; infinite for nonzero constants.
    pub fn space_norm(&self) -> f64 {
        let d = self.dim as f64;
        match self.f {
            TestFunction::Zero => 0.0,
            TestFunction::Constant(c) => {
                if c == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            TestFunction::Indicator { radius } => (2.0 * radius).powf(d / self.p),
            TestFunction::RadialPower { exponent, radius } => {
                let sphere = 2.0 * PI.powf(d / 2.0) / gamma(d / 2.0);
                let e = d - exponent * self.p;
                (sphere * radius.powf(e) / e).powf(1.0 / self.p)
            }
        }
    }

    /// `‖f‖_{L^q([0, t]; L^p)}`
    pub fn norm(&self, t: f64) -> f64 {
        t.powf(1.0 / self.q) * self.space_norm()
    }

    /// Exponent of `t` in the Krylov bound, `(q-1)/q - d/(2p)`.
    pub fn bound_exponent(&self) -> f64 {
        (self.q - 1.0) / self.q - self.dim as f64 / (2.0 * self.p)
    }

    /// `sup |f|`, if finite.
    pub fn sup(&self) -> Option<f64> {
        match self.f {
            TestFunction::Zero => Some(0.0),
            TestFunction::Constant(c) => Some(c.abs()),
            TestFunction::Indicator { .. } => Some(1.0),
            TestFunction::RadialPower { exponent, .. } if exponent == 0.0 => Some(1.0),
            TestFunction::RadialPower { .. } => None,
        }
    }

    /// `|f(x)|²` and whether the evaluation was clamped.
    pub fn squared(&self, x: &[f64]) -> (f64, bool) {
        match self.f {
            TestFunction::Zero => (0.0, false),
            TestFunction::Constant(c) => (c * c, false),
            TestFunction::Indicator { radius } => (if x.iter().all(|v| v.abs() <= radius) { 1.0 } else { 0.0 }, false),
            TestFunction::RadialPower { exponent, radius } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r > radius {
                    (0.0, false)
                } else if r < CLAMP {
                    (CLAMP.powf(-2.0 * exponent), true)
                } else {
                    (r.powf(-2.0 * exponent), false)
                }
            }
        }
    }

    fn param_json(&self) -> String {
        let f = match self.f {
            TestFunction::Zero => r#""f":"zero""#.to_string(),
            TestFunction::Constant(c) => format!(r#""f":"constant","c":{c}"#),
            TestFunction::Indicator { radius } => format!(r#""f":"indicator","radius":{radius}"#),
            TestFunction::RadialPower { exponent, radius } => {
                format!(r#""f":"radial_power","exponent":{exponent},"radius":{radius}"#)
            }
        };
        format!(r#"{{{f},"d":{},"p":{},"q":{}}}"#, self.dim, self.p, self.q)
    }
}

/// `E |N(m, v I_d)|^{-2a}` through `v^{-a} 2^{-a} Γ(d/2 - a)/Γ(d/2) · e^{-z} M(d/2 - a, d/2, z)`,
/// `z = |m|²/(2v)`, tabulated on `[0, Z_MAX]` with a two-term asymptotic beyond.
#[derive(Clone, Debug)]
struct GaussianMoment {
    a: f64,
    beta: f64,
    prefactor: f64,
    table: Vec<f64>,
}

const Z_MAX: f64 = 40.0;
const Z_STEP: f64 = 0.005;

impl GaussianMoment {
    fn new(a: f64, dim: usize) -> Self {
        let beta = dim as f64 / 2.0;
        let n = (Z_MAX / Z_STEP).round() as usize;
        let table = (0..=n)
            .map(|k| {
                let z = k as f64 * Z_STEP;
                let (mut term, mut sum, mut j) = (1.0f64, 1.0f64, 0.0f64);
                while term > 1e-17 * sum || j < z {
                    term *= (beta - a + j) / (beta + j) * z / (j + 1.0);
                    sum += term;
                    j += 1.0;
                }
                (-z).exp() * sum
            })
            .collect();
        GaussianMoment { a, beta, prefactor: 2f64.powf(-a) * gamma(beta - a) / gamma(beta), table }
    }

    fn eval(&self, m2: f64, v: f64) -> f64 {
        let z = m2 / (2.0 * v);
        if z >= Z_MAX {
            return m2.powf(-self.a) * (1.0 + self.a * (1.0 + self.a - self.beta) / z);
        }
        let x = z / Z_STEP;
        let k = (x as usize).min(self.table.len() - 2);
        let f = x - k as f64;
        let phi = self.table[k] * (1.0 - f) + self.table[k + 1] * f;
        self.prefactor * v.powf(-self.a) * phi
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
const GL8: [(f64, f64); 8] = [
    (0.019855071751231856, 0.05061426814518813),
    (0.10166676129318664, 0.11119051722668724),
    (0.2372337950418355, 0.15685332293894363),
    (0.408282678752175, 0.181341891689181),
    (0.591717321247825, 0.181341891689181),
    (0.7627662049581645, 0.15685332293894363),
    (0.8983332387068134, 0.11119051722668724),
    (0.9801449282487681, 0.05061426814518813),
];

/// Steps whose segment passes within this many `√Δ` of the singularity use
/// the bridge quadrature.
const NEAR: f64 = 4.0;

/// `∫ |f(W_s)|² ds` over one step given both endpoints: the trapezoid rule
/// away from the singularity and, near it, the Brownian-bridge conditional
/// expectation `∫ E[|f(W_s)|² | W_a, W_b] ds`, which is finite.
struct StepRule {
    moment: Option<GaussianMoment>,
}

impl StepRule {
    fn new(f: &LpLqFunction) -> Self {
        let moment = match f.f {
            TestFunction::RadialPower { exponent, .. } if exponent > 0.0 => Some(GaussianMoment::new(exponent, f.dim)),
            _ => None,
        };
        StepRule { moment }
    }

    /// Returns the step integral and the number of clamped evaluations.
    fn integrate(&self, f: &LpLqFunction, a: &[f64], b: &[f64], dt: f64) -> (f64, u64) {
        if let (Some(g), TestFunction::RadialPower { radius, .. }) = (&self.moment, f.f) {
            let sd = dt.sqrt();
            let (dist, far) = segment_distance(a, b);
            if dist < NEAR * sd && far + 2.0 * NEAR * sd < radius {
                let mut acc = 0.0;
                for (u, w) in GL8 {
                    let m2: f64 = a.iter().zip(b).map(|(x, y)| (x + u * (y - x)).powi(2)).sum();
                    acc += w * g.eval(m2, dt * u * (1.0 - u));
                }
                return (acc * dt, 0);
            }
        }
        let (fa, ca) = f.squared(a);
        let (fb, cb) = f.squared(b);
        (0.5 * (fa + fb) * dt, u64::from(ca) + u64::from(cb))
    }
}

/// Distance from the origin to the segment `[a, b]`, and to its far end.
fn segment_distance(a: &[f64], b: &[f64]) -> (f64, f64) {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum();
    let dot: f64 = a.iter().zip(b).map(|(x, y)| -x * (y - x)).sum();
    let u = if ab > 0.0 { (dot / ab).clamp(0.0, 1.0) } else { 0.0 };
    let near = a.iter().zip(b).map(|(x, y)| (x + u * (y - x)).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (near, na.max(nb))
}

/// Monte-Carlo settings: Brownian motion from `start` on a grid of step `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct McOptions {
    pub samples: usize,
    pub dt: f64,
    pub seed: u64,
    pub start: Vec<f64>,
}

impl McOptions {
    pub fn new(samples: usize, dt: f64, seed: u64, dim: usize) -> Self {
        McOptions { samples, dt, seed, start: vec![0.0; dim] }
    }

    fn validate(&self, f: &LpLqFunction) -> Result<()> {
        if self.samples < 2 || !(self.dt > 0.0) {
            return Err(Error::domain("need at least two samples and a positive step"));
        }
        if self.start.len() != f.dim {
            return Err(Error::domain("start point has the wrong dimension"));
        }
        Ok(())
    }
}

/// Per sample, `∫_0^{t_j} |f(W_s)|² ds` by [`StepRule`] at every requested
/// horizon (`checkpoints` in steps, increasing), plus clamp hits.
fn integrals(f: &LpLqFunction, mc: &McOptions, checkpoints: &[usize], key: &StreamKey) -> (Vec<Vec<f64>>, u64) {
    let last = *checkpoints.last().unwrap();
    let sd = mc.dt.sqrt();
    let rule = StepRule::new(f);
    let per: Vec<(Vec<f64>, u64)> = (0..mc.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = key.stream(i as u64);
            let mut w = mc.start.clone();
            let mut prev = w.clone();
            let mut acc = 0.0;
            let mut hits = 0u64;
            let mut out = Vec::with_capacity(checkpoints.len());
            let mut next = 0;
            for k in 1..=last {
                prev.copy_from_slice(&w);
                for c in w.iter_mut() {
                    *c += sd * rng.sample::<f64, _>(StandardNormal);
                }
                let (v, clamped) = rule.integrate(f, &prev, &w, mc.dt);
                hits += clamped;
                acc += v;
                while next < checkpoints.len() && checkpoints[next] == k {
                    out.push(acc);
                    next += 1;
                }
            }
            (out, hits)
        })
        .collect();
    let hits = per.iter().map(|p| p.1).sum();
    (per.into_iter().map(|p| p.0).collect(), hits)
}

fn mean_se(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovRow {
    pub t: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// `estimate <= C_fit t^{bound_exponent} ‖f‖²` with `C_fit` calibrated at the largest `t`.
    pub within_bound: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KrylovReport {
    pub f: LpLqFunction,
    pub rows: Vec<KrylovRow>,
    /// Least-squares exponent of `log lhs` on `log t` and its 95% half-width;
    /// `None` when fewer than four positive estimates are available.
    pub exponent: Option<(f64, f64)>,
    pub bound_exponent: f64,
    pub c_fit: f64,
    pub clamp_hits: u64,
    pub evaluations: u64,
}

/// `E ∫_0^t |f(W_s)|² ds` at every `t` in `t_values`.
pub fn krylov_check(f: &LpLqFunction, t_values: &[f64], mc: &McOptions) -> Result<KrylovReport> {
    if !f.admissible() {
        return Err(Error::domain(format!("(p, q) = ({}, {}) violates d/p + 2/q < 1", f.p, f.q)));
    }
    mc.validate(f)?;
    if t_values.is_empty() || t_values.windows(2).any(|w| w[1] <= w[0]) || !(t_values[0] > 0.0) {
        return Err(Error::domain("horizons must be positive and strictly increasing"));
    }
    let steps: Vec<usize> = t_values.iter().map(|t| ((t / mc.dt).round() as usize).max(1)).collect();
    if steps.windows(2).any(|w| w[1] == w[0]) {
        return Err(Error::domain("horizons closer than one step"));
    }
    let (ints, clamp_hits) = integrals(f, mc, &steps, &StreamKey::new(mc.seed, "krylov"));
    let est: Vec<(f64, f64)> = (0..steps.len()).map(|j| mean_se(ints.iter().map(move |v| v[j]))).collect();
    let bound_exponent = f.bound_exponent();
    let t_max = *t_values.last().unwrap();
    let norm2 = f.norm(t_max).powi(2);
    let c_fit = est.last().unwrap().0 / (t_max.powf(bound_exponent) * norm2);
    let rows = t_values
        .iter()
        .zip(&est)
        .map(|(&t, &(e, se))| KrylovRow {
            t,
            estimate: e,
            stderr: se,
            within_bound: !norm2.is_finite() || e <= c_fit * t.powf(bound_exponent) * norm2 + 3.0 * se,
        })
        .collect();
    let positive: Vec<(f64, f64)> =
        t_values.iter().zip(&est).filter(|(_, e)| e.0 > 0.0).map(|(t, e)| (*t, e.0)).collect();
    let exponent = if positive.len() >= 4 {
        let (x, y): (Vec<f64>, Vec<f64>) = positive.into_iter().unzip();
        let fit = rate_fit(&x, &y)?;
        Some((fit.slope, fit.half_width))
    } else {
        None
    };
    Ok(KrylovReport {
        f: *f,
        rows,
        exponent,
        bound_exponent,
        c_fit,
        clamp_hits,
        evaluations: (mc.samples * steps.last().unwrap()) as u64,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KhasminskiiReport {
    pub f: LpLqFunction,
    pub lambda: f64,
    pub t: f64,
    /// Estimate from all samples.
    pub estimate: f64,
    pub stderr: f64,
    /// Estimate from the first half of the samples.
    pub half_estimate: f64,
    /// `|estimate / half_estimate - 1|`
    pub relative_change: f64,
    /// Some `exp(λ ∫ |f|²)` overflowed.
    pub divergent: bool,
    pub clamp_hits: u64,
}

/// `E exp(λ ∫_0^t |f(W_s)|² ds)` with `mc.samples` paths, compared against
/// the estimate from the first half of them.
pub fn khasminskii_check(f: &LpLqFunction, lambda: f64, t: f64, mc: &McOptions) -> Result<KhasminskiiReport> {
    if !f.admissible() {
        return Err(Error::domain(format!("(p, q) = ({}, {}) violates d/p + 2/q < 1", f.p, f.q)));
    }
    mc.validate(f)?;
    if !(lambda > 0.0 && t > 0.0) {
        return Err(Error::domain("lambda and t must be positive"));
    }
    let steps = ((t / mc.dt).round() as usize).max(1);
    let (ints, clamp_hits) = integrals(f, mc, &[steps], &StreamKey::new(mc.seed, "khasminskii"));
    let vals: Vec<f64> = ints.iter().map(|v| (lambda * v[0]).exp()).collect();
    let divergent = vals.iter().any(|v| !v.is_finite());
    let (estimate, stderr) = mean_se(vals.iter().copied());
    let (half_estimate, _) = mean_se(vals[..vals.len() / 2].iter().copied());
    Ok(KhasminskiiReport {
        f: *f,
        lambda,
        t,
        estimate,
        stderr,
        half_estimate,
        relative_change: (estimate / half_estimate - 1.0).abs(),
        divergent,
        clamp_hits,
    })
}

/// CSV `check,param_json,t,estimate,stderr,flag`.
pub fn write_verify_log<W: Write>(krylov: &[KrylovReport], khasminskii: &[KhasminskiiReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["check", "param_json", "t", "estimate", "stderr", "flag"])?;
    for rep in krylov {
        let params = rep.f.param_json();
        for r in &rep.rows {
            let flag = if r.within_bound { "ok" } else { "bound_violated" };
            w.write_record(&[
                "krylov".to_string(),
                params.clone(),
                r.t.to_string(),
                r.estimate.to_string(),
                r.stderr.to_string(),
                flag.to_string(),
            ])?;
        }
        if let Some((slope, hw)) = rep.exponent {
            let t_max = rep.rows.last().map_or(0.0, |r| r.t);
            let flag = if slope <= rep.bound_exponent + hw { "ok" } else { "exponent_above_bound" };
            w.write_record(&[
                "krylov_exponent".to_string(),
                params.clone(),
                t_max.to_string(),
                slope.to_string(),
                (hw / 1.96).to_string(),
                flag.to_string(),
            ])?;
        }
    }
    for rep in khasminskii {
        let params = format!("{},\"lambda\":{}}}", rep.f.param_json().trim_end_matches('}'), rep.lambda);
        let flag = if rep.divergent {
            "divergent"
        } else if rep.relative_change >= 0.1 {
            "unstable"
        } else {
            "ok"
        };
        w.write_record(&[
            "khasminskii".to_string(),
            params,
            rep.t.to_string(),
            rep.estimate.to_string(),
            rep.stderr.to_string(),
            flag.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn singular() -> LpLqFunction {
        LpLqFunction::new(TestFunction::RadialPower { exponent: 0.4, radius: 1.0 }, 1, 2.0, 8.0).unwrap()
    }

    #[test]
    fn norms_and_admissibility() {
        let f = singular();
        assert!(f.admissible());
        // ∫_{-1}^{1} |x|^{-0.8} dx = 2 / 0.2
        assert!((f.space_norm() - 10f64.sqrt()).abs() < 1e-12);
        assert!((f.bound_exponent() - 0.625).abs() < 1e-15);
        let g = LpLqFunction::new(TestFunction::Indicator { radius: 0.5 }, 2, 4.0, 8.0).unwrap();
        assert!((g.space_norm() - 1.0).abs() < 1e-12);
        assert!(!LpLqFunction::new(TestFunction::Zero, 1, 2.0, 4.0).unwrap().admissible());
        assert!(LpLqFunction::new(TestFunction::RadialPower { exponent: 0.6, radius: 1.0 }, 1, 2.0, 8.0).is_err());
        // unit-ball volume in d = 3 via the radial formula with exponent 0
        let h = LpLqFunction::new(TestFunction::RadialPower { exponent: 0.0, radius: 1.0 }, 3, 8.0, 8.0).unwrap();
        assert!((h.space_norm().powf(8.0) - 4.0 * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_negative_moment_matches_quadrature() {
        // E|N(m, v)|^{-0.8} in d = 1 by brute-force integration
        let g = GaussianMoment::new(0.4, 1);
        for (m, v) in [(0.0, 1.0), (0.3, 0.5), (1.0, 0.2), (2.0, 0.05), (0.05, 1e-4)] {
            // x = ±t^5 turns |x|^{-0.8} dx into 5 dt
            let dens = |x: f64| (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
            let top = (m.abs() + 12.0 * v.sqrt()).powf(0.2);
            let n = 200_000;
            let h = top / n as f64;
            let mut acc = 0.0;
            for k in 0..n {
                let t = (k as f64 + 0.5) * h;
                let x = t.powi(5);
                acc += 5.0 * (dens(x) + dens(-x)) * h;
            }
            let got = g.eval(m * m, v);
            assert!((got / acc - 1.0).abs() < 5e-3, "m={m} v={v}: {got} vs {acc}");
        }
        // d = 3, m = 0: E|X|^{-2a} = v^{-a} 2^{-a} Γ(3/2 - a)/Γ(3/2)
        let g3 = GaussianMoment::new(0.5, 3);
        let want = 2f64.powf(-0.5) * gamma(1.0) / gamma(1.5);
        assert!((g3.eval(0.0, 1.0) - want).abs() < 1e-12);
    }

    #[test]
    fn bridge_rule_is_unbiased_for_the_time_integral() {
        // E ∫_0^t |W_s|^{-0.8} ds = ∫_0^t E|N(0,s)|^{-0.8} ds = c t^{0.6} / 0.6 for radius = ∞
        let f = LpLqFunction::new(TestFunction::RadialPower { exponent: 0.4, radius: 1e6 }, 1, 2.0, 8.0).unwrap();
        let mc = McOptions::new(20_000, 1e-3, 9, 1);
        let k = krylov_check(&f, &[0.1], &mc).unwrap();
        let c = 2f64.powf(-0.4) * gamma(0.1) / gamma(0.5);
        let want = c * 0.1f64.powf(0.6) / 0.6;
        let r = k.rows[0];
        assert!((r.estimate - want).abs() < 4.0 * r.stderr + 0.01 * want, "{} vs {want}", r.estimate);
    }

    #[test]
    fn inadmissible_pair_is_rejected() {
        let f = LpLqFunction::new(TestFunction::Zero, 1, 2.0, 4.0).unwrap();
        let mc = McOptions::new(10, 0.01, 1, 1);
        assert!(krylov_check(&f, &[0.1], &mc).is_err());
        assert!(khasminskii_check(&f, 0.1, 1.0, &mc).is_err());
    }

    #[test]
    fn zero_function() {
        let f = LpLqFunction::new(TestFunction::Zero, 1, 4.0, 4.0).unwrap();
        let mc = McOptions::new(50, 0.01, 2, 1);
        let k = krylov_check(&f, &[0.1, 0.2], &mc).unwrap();
        assert!(k.rows.iter().all(|r| r.estimate == 0.0));
        let h = khasminskii_check(&f, 3.0, 1.0, &mc).unwrap();
        assert_eq!(h.estimate, 1.0);
    }

    #[test]
    fn bounded_indicator_is_below_t_and_envelope() {
        let f = LpLqFunction::new(TestFunction::Indicator { radius: 1.0 }, 2, 4.0, 8.0).unwrap();
        let mc = McOptions::new(2000, 0.005, 3, 2);
        let k = krylov_check(&f, &[0.05, 0.1, 0.2, 0.4, 0.8], &mc).unwrap();
        for r in &k.rows {
            assert!(r.estimate <= r.t + 1e-12);
        }
        for w in k.rows.windows(2) {
            assert!(w[1].estimate >= w[0].estimate);
        }
        let h = khasminskii_check(&f, 0.7, 1.0, &mc).unwrap();
        assert!(h.estimate >= 1.0 && h.estimate <= (0.7f64).exp() + 1e-12);
    }

    #[test]
    fn constant_function_is_start_independent() {
        let f = LpLqFunction::new(TestFunction::Constant(1.5), 1, 4.0, 4.0 + 1.0).unwrap();
        for start in [0.0, 5.0] {
            let mut mc = McOptions::new(10, 0.01, 4, 1);
            mc.start = vec![start];
            let k = krylov_check(&f, &[0.1, 0.3], &mc).unwrap();
            for r in &k.rows {
                assert!((r.estimate - 2.25 * r.t).abs() < 1e-12);
                assert!(r.within_bound);
            }
        }
    }

    #[test]
    fn singular_scaling_exponent() {
        let mc = McOptions::new(20_000, 2e-4, 5, 1);
        let k = krylov_check(&singular(), &[0.01, 0.02, 0.04, 0.08, 0.16], &mc).unwrap();
        let (slope, _) = k.exponent.unwrap();
        assert!((0.5..=0.7).contains(&slope), "{slope}");
        assert!(k.clamp_hits * 1000 < k.evaluations);
    }

    #[test]
    fn khasminskii_is_at_least_one_and_logged() {
        let mc = McOptions::new(2000, 1e-3, 6, 1);
        let h = khasminskii_check(&singular(), 0.1, 1.0, &mc).unwrap();
        assert!(h.estimate >= 1.0 && !h.divergent);
        let k = krylov_check(&singular(), &[0.01, 0.02, 0.04, 0.08], &mc).unwrap();
        let mut buf = Vec::new();
        write_verify_log(&[k], &[h], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("check,param_json,t,estimate,stderr,flag\n"));
        assert_eq!(text.lines().count(), 1 + 4 + 1 + 1);
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let last = r.records().last().unwrap().unwrap();
        assert_eq!(&last[0], "khasminskii");
        assert!(last[1].ends_with(r#""lambda":0.1}"#));
    }
}
