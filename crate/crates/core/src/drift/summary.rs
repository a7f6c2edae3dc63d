//! Per-node precomputation of `⟨μ_t, b(t, x, ·)⟩`.
//!
//! Averaging a kernel against an ensemble of `M` paths costs `O(M)` per
//! evaluation. For kernels with exploitable structure the measure enters only
//! through a few moments (or through a sorted marginal), which are computed
//! once per node; everything else falls back to the direct weighted sum.

use crate::path::{Ensemble, PathView};

use super::kernel::{clip, Kernel, NonlinearOp, Structure};

/// Anything that can hand out weighted path prefixes.
pub(crate) trait PathSource: Sync {
    fn count(&self) -> usize;
    fn weight(&self, i: usize) -> f64;
    fn view(&self, i: usize, node: usize) -> PathView<'_>;
}

impl PathSource for Ensemble {
    fn count(&self) -> usize {
        self.len()
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights()[i]
    }

    fn view(&self, i: usize, node: usize) -> PathView<'_> {
        self.path(i).prefix(node)
    }
}

/// One additive interaction term of a drift.
#[derive(Clone, Debug)]
pub(crate) enum Part {
    Pair { kernel: Kernel, truncation: Option<f64> },
    Nonlinear { op: NonlinearOp, truncation: Option<f64> },
}

/// An excluded member: the particle's own index and weight.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Exclude {
    pub index: usize,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub(crate) enum NodeSummary {
    OtherMean(Vec<f64>),
    Trig { cos: Vec<f64>, sin: Vec<f64> },
    Affine(Vec<f64>),
    Radial { sorted: Vec<f64>, weights: Vec<f64>, index: Vec<usize> },
    Cdf { sorted: Vec<Vec<f64>>, cumulative: Vec<Vec<f64>> },
    TanhMean(Vec<f64>),
    Measureless,
    Generic,
}

fn weighted_sum<S: PathSource + ?Sized>(
    src: &S,
    node: usize,
    dim: usize,
    mut feature: impl FnMut(PathView<'_>, &mut [f64]),
) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    for j in 0..src.count() {
        feature(src.view(j, node), &mut tmp);
        let w = src.weight(j);
        acc.iter_mut().zip(&tmp).for_each(|(a, t)| *a += w * t);
    }
    acc
}

impl NodeSummary {
    pub(crate) fn build<S: PathSource + ?Sized>(part: &Part, dim: usize, src: &S, node: usize) -> Self {
        match part {
            Part::Pair { kernel, truncation } => {
                let (scale, base) = kernel.split_scale();
                match kernel.structure(dim, *truncation) {
                    Structure::OtherOnly => NodeSummary::OtherMean(weighted_sum(src, node, dim, |y, out| {
                        base.other_feature(y, out);
                        out.iter_mut().for_each(|o| *o *= scale);
                        clip(out, *truncation);
                    })),
                    Structure::Trig => NodeSummary::Trig {
                        cos: weighted_sum(src, node, dim, |y, out| {
                            out.iter_mut().zip(y.current()).for_each(|(o, v)| *o = v.cos())
                        }),
                        sin: weighted_sum(src, node, dim, |y, out| {
                            out.iter_mut().zip(y.current()).for_each(|(o, v)| *o = v.sin())
                        }),
                    },
                    Structure::Affine => {
                        NodeSummary::Affine(weighted_sum(src, node, dim, |y, out| out.copy_from_slice(y.current())))
                    }
                    Structure::Radial => {
                        let mut order: Vec<(f64, f64, usize)> =
                            (0..src.count()).map(|j| (src.view(j, node).current()[0], src.weight(j), j)).collect();
                        order.sort_by(|a, b| a.0.total_cmp(&b.0));
                        NodeSummary::Radial {
                            sorted: order.iter().map(|o| o.0).collect(),
                            weights: order.iter().map(|o| o.1).collect(),
                            index: order.iter().map(|o| o.2).collect(),
                        }
                    }
                    Structure::SelfOnly => NodeSummary::Measureless,
                    Structure::Generic => NodeSummary::Generic,
                }
            }
            Part::Nonlinear { op: NonlinearOp::TailBalance { .. }, .. } => {
                let mut sorted = Vec::with_capacity(dim);
                let mut cumulative = Vec::with_capacity(dim);
                for k in 0..dim {
                    let mut pairs: Vec<(f64, f64)> =
                        (0..src.count()).map(|j| (src.view(j, node).current()[k], src.weight(j))).collect();
                    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let mut run = 0.0;
                    cumulative.push(
                        pairs
                            .iter()
                            .map(|p| {
                                run += p.1;
                                run
                            })
                            .collect(),
                    );
                    sorted.push(pairs.into_iter().map(|p| p.0).collect());
                }
                NodeSummary::Cdf { sorted, cumulative }
            }
            Part::Nonlinear { op: NonlinearOp::SaturatedMean { .. }, .. } => {
                NodeSummary::TanhMean(weighted_sum(src, node, dim, |y, out| {
                    out.iter_mut().zip(y.current()).for_each(|(o, v)| *o = v.tanh())
                }))
            }
        }
    }

    /// `⟨μ_t, b(t, x, ·)⟩` (or `B(t, x_t, μ_t)`) into `out`; returns the
    /// number of clamped singular evaluations.
    pub(crate) fn eval<S: PathSource + ?Sized>(
        &self,
        part: &Part,
        x: PathView<'_>,
        src: &S,
        node: usize,
        exclude: Option<Exclude>,
        out: &mut [f64],
    ) -> u64 {
        let dim = out.len();
        let keep = 1.0 - exclude.map_or(0.0, |e| e.weight);
        if keep <= 1e-15 {
            out.fill(0.0);
            return 0;
        }
        let xt = x.current();
        match (self, part) {
            (NodeSummary::OtherMean(mean), Part::Pair { kernel, truncation }) => {
                out.copy_from_slice(mean);
                if let Some(e) = exclude {
                    let (scale, base) = kernel.split_scale();
                    let mut own = vec![0.0; dim];
                    base.other_feature(x, &mut own);
                    own.iter_mut().for_each(|o| *o *= scale);
                    clip(&mut own, *truncation);
                    out.iter_mut().zip(&own).for_each(|(o, s)| *o = (*o - e.weight * s) / keep);
                }
                0
            }
            (NodeSummary::Trig { cos, sin }, Part::Pair { kernel, .. }) => {
                let (scale, _) = kernel.split_scale();
                for k in 0..dim {
                    let (sx, cx) = xt[k].sin_cos();
                    let (mut c, mut s) = (cos[k], sin[k]);
                    if let Some(e) = exclude {
                        c = (c - e.weight * cx) / keep;
                        s = (s - e.weight * sx) / keep;
                    }
                    out[k] = scale * (sx * c - cx * s);
                }
                0
            }
            (NodeSummary::Affine(mean), Part::Pair { kernel, .. }) => {
                let (scale, _) = kernel.split_scale();
                for k in 0..dim {
                    let m = match exclude {
                        Some(e) => (mean[k] - e.weight * xt[k]) / keep,
                        None => mean[k],
                    };
                    out[k] = scale * (m - xt[k]);
                }
                0
            }
            (NodeSummary::Radial { sorted, weights, index }, Part::Pair { kernel, truncation }) => {
                let (scale, base) = kernel.split_scale();
                let Kernel::Singular(s) = base else { unreachable!() };
                let x0 = xt[0];
                let lo = sorted.partition_point(|v| *v < x0 - s.radius);
                let hi = sorted.partition_point(|v| *v <= x0 + s.radius);
                let cap = truncation.unwrap_or(f64::INFINITY);
                let skip = exclude.map(|e| e.index);
                let mut acc = 0.0;
                let mut clamps = 0;
                for j in lo..hi {
                    if Some(index[j]) == skip {
                        continue;
                    }
                    let (h, clamped) = s.profile((x0 - sorted[j]).abs());
                    clamps += u64::from(clamped);
                    acc += weights[j] * (scale * h).min(cap);
                }
                out[0] = acc / keep;
                clamps
            }
            (NodeSummary::Cdf { sorted, cumulative }, Part::Nonlinear { op, truncation }) => {
                for k in 0..dim {
                    let pos = sorted[k].partition_point(|v| *v <= xt[k]);
                    let mut mass = if pos == 0 { 0.0 } else { cumulative[k][pos - 1] };
                    if let Some(e) = exclude {
                        mass = (mass - e.weight) / keep;
                    }
                    out[k] = op.apply(xt[k], mass);
                }
                clip(out, *truncation);
                0
            }
            (NodeSummary::TanhMean(mean), Part::Nonlinear { op, truncation }) => {
                for k in 0..dim {
                    let m = match exclude {
                        Some(e) => (mean[k] - e.weight * xt[k].tanh()) / keep,
                        None => mean[k],
                    };
                    out[k] = op.apply(xt[k], m);
                }
                clip(out, *truncation);
                0
            }
            (NodeSummary::Measureless, Part::Pair { kernel, truncation }) => {
                kernel.eval(x, x, out);
                clip(out, *truncation);
                0
            }
            (NodeSummary::Generic, part) => direct(part, x, src, node, exclude, out),
            _ => unreachable!("summary does not match its interaction part"),
        }
    }
}

/// Reference route: weighted sum over every member path, no precomputation.
pub(crate) fn direct<S: PathSource + ?Sized>(
    part: &Part,
    x: PathView<'_>,
    src: &S,
    node: usize,
    exclude: Option<Exclude>,
    out: &mut [f64],
) -> u64 {
    let dim = out.len();
    let skip = exclude.map(|e| e.index);
    match part {
        Part::Pair { kernel, truncation } => {
            let mut acc = vec![0.0; dim];
            let mut tmp = vec![0.0; dim];
            let mut total = 0.0;
            let mut clamps = 0;
            for j in (0..src.count()).filter(|j| Some(*j) != skip) {
                clamps += u64::from(kernel.eval(x, src.view(j, node), &mut tmp));
                clip(&mut tmp, *truncation);
                let w = src.weight(j);
                total += w;
                acc.iter_mut().zip(&tmp).for_each(|(a, t)| *a += w * t);
            }
            for (o, a) in out.iter_mut().zip(acc) {
                *o = if total > 1e-15 { a / total } else { 0.0 };
            }
            clamps
        }
        Part::Nonlinear { op, truncation } => {
            let members =
                (0..src.count()).filter(|j| Some(*j) != skip).map(|j| (src.view(j, node).current(), src.weight(j)));
            op.eval_cloud(x.current(), members, out);
            clip(out, *truncation);
            0
        }
    }
}
