use super::*;
use crate::path::Path;
use proptest::prelude::*;
use rand::Rng;

fn constant_ensemble(grid: TimeGrid, values: &[f64]) -> Ensemble {
    let paths = values.iter().map(|&v| Path::from_fn(grid, 1, |_, out| out[0] = v).unwrap()).collect();
    Ensemble::new(paths).unwrap()
}

fn walk(grid: TimeGrid, dim: usize, seed: u64, scale: f64) -> Path {
    let mut rng = StreamKey::new(seed, "test-walk").stream(0);
    let mut v = vec![0.0; grid.n_nodes() * dim];
    for n in 0..grid.n_nodes() {
        for k in 0..dim {
            let prev = if n == 0 { 0.0 } else { v[(n - 1) * dim + k] };
            v[n * dim + k] = prev + scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Path::new(grid, dim, v).unwrap()
}

fn random_ensemble(grid: TimeGrid, dim: usize, m: usize, seed: u64) -> Ensemble {
    Ensemble::new((0..m).map(|i| walk(grid, dim, seed * 1000 + i as u64, 1.0)).collect()).unwrap()
}

fn point(grid: TimeGrid, x: f64) -> Path {
    Path::from_fn(grid, 1, |_, out| out[0] = x).unwrap()
}

#[test]
fn mean_kernel_averages_samples() {
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let mu = constant_ensemble(grid, &[1.0, 2.0, 3.0]);
    let spec =
        DriftSpec::new(1, DriftKind::LinearGrowthPath { base: BaseDrift::Zero, kernel: Kernel::Mean, growth: 1.0 })
            .unwrap();
    let x = point(grid, -7.0);
    let got = eval_interaction(&spec, x.prefix(2), &mu).unwrap();
    assert!((got.value[0] - 2.0).abs() < 1e-15);
}

#[test]
fn constant_kernel_ignores_measure() {
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let spec = DriftSpec::bounded(2, Kernel::Constant(vec![0.3, -1.5])).unwrap();
    let mu = random_ensemble(grid, 2, 5, 1);
    let x = walk(grid, 2, 9, 1.0);
    let got = eval_interaction(&spec, x.prefix(3), &mu).unwrap();
    assert!((got.value[0] - 0.3).abs() < 1e-15 && (got.value[1] + 1.5).abs() < 1e-15);
}

#[test]
fn singular_kernel_hand_value() {
    let grid = TimeGrid::new(1.0, 2).unwrap();
    let mu = constant_ensemble(grid, &[0.5, -0.25, 2.0]);
    let spec =
        DriftSpec::new(1, DriftKind::SingularKernel { kernel: SingularKernel::new(0.4, 1.0), p: 2.0, q: 5.0 }).unwrap();
    let x = point(grid, 0.0);
    let want = (0.5f64.powf(-0.4) + 0.25f64.powf(-0.4)) / 3.0;
    let got = eval_interaction(&spec, x.prefix(1), &mu).unwrap();
    assert!((got.value[0] - want).abs() < 1e-12);
    assert!((want - 1.0202).abs() < 1e-4);
    assert_eq!(got.clamped, 0);

    let frozen = freeze(&spec, Arc::new(mu)).unwrap();
    let mut out = [0.0];
    frozen.eval(x.prefix(1), &mut out);
    assert!((out[0] - want).abs() < 1e-12);
}

#[test]
fn singular_clamp_is_counted() {
    let grid = TimeGrid::new(1.0, 2).unwrap();
    let mu = constant_ensemble(grid, &[0.0, 0.5]);
    let kernel = SingularKernel::new(0.4, 1.0);
    let spec = DriftSpec::new(1, DriftKind::SingularKernel { kernel, p: 2.0, q: 5.0 }).unwrap();
    let x = point(grid, 0.0);
    let got = eval_interaction(&spec, x.prefix(1), &mu).unwrap();
    assert_eq!(got.clamped, 1);
    let want = (kernel.clamp_radius.powf(-0.4) + 0.5f64.powf(-0.4)) / 2.0;
    assert!((got.value[0] - want).abs() < 1e-9 * want);
    let frozen = freeze(&spec, Arc::new(mu)).unwrap();
    let mut out = [0.0];
    frozen.eval(x.prefix(1), &mut out);
    frozen.eval(x.prefix(1), &mut out);
    assert_eq!(frozen.clamp_hits(), 2);
}

#[test]
fn truncation_clips_coordinatewise() {
    let grid = TimeGrid::new(1.0, 2).unwrap();
    let mu = constant_ensemble(grid, &[0.0]);
    let spec = DriftSpec::bounded(2, Kernel::Constant(vec![5.0, -0.2])).unwrap();
    let x = walk(grid, 2, 3, 1.0);
    let cut = truncate(&spec, 3.0).unwrap();
    let mu2 = Ensemble::new(vec![walk(grid, 2, 4, 1.0)]).unwrap();
    assert_eq!(eval_interaction(&cut, x.prefix(1), &mu2).unwrap().value, vec![3.0, -0.2]);
    let neg = DriftSpec::bounded(1, Kernel::Constant(vec![-5.0])).unwrap();
    let neg = truncate(&neg, 3.0).unwrap();
    assert_eq!(eval_interaction(&neg, point(grid, 1.0).prefix(1), &mu).unwrap().value, vec![-3.0]);
    assert!(truncate(&spec, -1.0).is_err());
}

#[test]
fn truncation_leaves_base_drift() {
    let grid = TimeGrid::new(1.0, 2).unwrap();
    let spec = DriftSpec::new(
        1,
        DriftKind::LinearGrowthPath { base: BaseDrift::Constant(vec![10.0]), kernel: Kernel::Mean, growth: 11.0 },
    )
    .unwrap();
    let cut = truncate(&spec, 1.0).unwrap();
    let frozen = freeze(&cut, Arc::new(constant_ensemble(grid, &[4.0, 6.0]))).unwrap();
    let mut out = [0.0];
    frozen.eval(point(grid, 0.0).prefix(1), &mut out);
    assert_eq!(out[0], 11.0);
}

#[test]
fn frozen_mean_and_constant_base() {
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let mu = Arc::new(constant_ensemble(grid, &[1.0, 3.0]));
    let spec =
        DriftSpec::new(1, DriftKind::LinearGrowthPath { base: BaseDrift::Zero, kernel: Kernel::Mean, growth: 1.0 })
            .unwrap();
    let frozen = freeze(&spec, mu.clone()).unwrap();
    let mut out = [0.0];
    for x in [-3.0, 0.0, 8.0] {
        for node in 0..5 {
            frozen.eval(point(grid, x).prefix(node), &mut out);
            assert_eq!(out[0], 2.0);
        }
    }
    let spec = DriftSpec::new(
        1,
        DriftKind::LinearGrowthPath {
            base: BaseDrift::Constant(vec![1.0]),
            kernel: Kernel::Constant(vec![0.0]),
            growth: 1.0,
        },
    )
    .unwrap();
    let frozen = freeze(&spec, mu).unwrap();
    frozen.eval(point(grid, 5.0).prefix(2), &mut out);
    assert_eq!(out[0], 1.0);
}

#[test]
fn freeze_rejects_dimension_mismatch() {
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let spec = DriftSpec::bounded(2, Kernel::Sine).unwrap();
    assert!(freeze(&spec, Arc::new(constant_ensemble(grid, &[1.0]))).is_err());
}

#[test]
fn freezing_twice_is_deterministic() {
    let grid = TimeGrid::new(1.0, 8).unwrap();
    let mu = Arc::new(random_ensemble(grid, 2, 20, 5));
    let spec = DriftSpec::bounded(2, Kernel::Sine).unwrap();
    let a = freeze(&spec, mu.clone()).unwrap();
    let b = freeze(&spec, mu).unwrap();
    let x = walk(grid, 2, 77, 1.0);
    let (mut oa, mut ob) = ([0.0; 2], [0.0; 2]);
    for node in 0..=8 {
        a.eval(x.prefix(node), &mut oa);
        b.eval(x.prefix(node), &mut ob);
        assert_eq!(oa, ob);
    }
}

#[test]
fn validation_rejects_bad_constants() {
    assert!(DriftSpec::new(1, DriftKind::BoundedKernel { kernel: Kernel::Sine, bound: 0.5 }).is_err());
    assert!(DriftSpec::new(
        1,
        DriftKind::LinearGrowthPath { base: BaseDrift::Linear(3.0), kernel: Kernel::Mean, growth: 1.0 }
    )
    .is_err());
    assert!(DriftSpec::new(
        1,
        DriftKind::SublinearState {
            base: BaseDrift::SublinearPower { scale: 1.0, beta: 0.5 },
            kernel: Kernel::Tanh,
            growth: 2.0,
            beta: 1.0
        }
    )
    .is_err());
    assert!(DriftSpec::new(
        1,
        DriftKind::SublinearState {
            base: BaseDrift::SublinearPower { scale: 1.0, beta: 0.5 },
            kernel: Kernel::Tanh,
            growth: 2.0,
            beta: 0.5
        }
    )
    .is_ok());
    // d/p + 2/q = 1/2 + 1 is not admissible
    assert!(
        DriftSpec::new(1, DriftKind::SingularKernel { kernel: SingularKernel::new(0.2, 1.0), p: 2.0, q: 2.0 }).is_err()
    );
    assert!(DriftSpec::new(
        2,
        DriftKind::NonlinearTv { op: NonlinearOp::TailBalance { strength: 1.0 }, lipschitz: 1.0 }
    )
    .is_err());
}

fn specs(dim: usize) -> Vec<DriftSpec> {
    let mut out = vec![
        DriftSpec::bounded(dim, Kernel::Sine).unwrap(),
        DriftSpec::bounded(dim, Kernel::Sine.scaled(0.5)).unwrap(),
        DriftSpec::bounded(dim, Kernel::Tanh).unwrap(),
        DriftSpec::bounded(dim, Kernel::SaturatedAttraction).unwrap(),
        DriftSpec::bounded(dim, Kernel::SelfSine).unwrap(),
        truncate(&DriftSpec::bounded(dim, Kernel::Sine.scaled(2.0)).unwrap(), 0.7).unwrap(),
        DriftSpec::new(
            dim,
            DriftKind::LinearGrowthPath { base: BaseDrift::Zero, kernel: Kernel::Attraction, growth: 1.0 },
        )
        .unwrap(),
        truncate(
            &DriftSpec::new(
                dim,
                DriftKind::LinearGrowthPath { base: BaseDrift::Zero, kernel: Kernel::Attraction, growth: 1.0 },
            )
            .unwrap(),
            0.4,
        )
        .unwrap(),
        DriftSpec::new(
            dim,
            DriftKind::LinearGrowthPath {
                base: BaseDrift::Zero,
                kernel: Kernel::RunningSup,
                growth: (dim as f64).sqrt(),
            },
        )
        .unwrap(),
        DriftSpec::new(
            dim,
            DriftKind::NonlinearTv {
                op: NonlinearOp::TailBalance { strength: 1.5 },
                lipschitz: 1.5 * (dim as f64).sqrt(),
            },
        )
        .unwrap(),
        DriftSpec::new(
            dim,
            DriftKind::NonlinearTv {
                op: NonlinearOp::SaturatedMean { strength: 0.8 },
                lipschitz: 1.6 * (dim as f64).sqrt(),
            },
        )
        .unwrap(),
    ];
    out.push(
        DriftSpec::new(dim, DriftKind::SingularKernel { kernel: SingularKernel::new(0.3, 0.8), p: 3.0, q: 8.0 })
            .unwrap(),
    );
    out.push(
        truncate(
            &DriftSpec::new(dim, DriftKind::SingularKernel { kernel: SingularKernel::new(0.3, 0.8), p: 3.0, q: 8.0 })
                .unwrap(),
            1.2,
        )
        .unwrap(),
    );
    out
}

#[test]
fn fast_route_matches_direct_sum() {
    for dim in [1, 2] {
        let grid = TimeGrid::new(1.0, 6).unwrap();
        let mu = Arc::new(random_ensemble(grid, dim, 40, 11 + dim as u64));
        for spec in specs(dim) {
            let frozen = freeze(&spec, mu.clone()).unwrap();
            for s in 0..5 {
                let x = walk(grid, dim, 500 + s, 1.0);
                for node in 0..=6 {
                    let mut fast = vec![0.0; dim];
                    frozen.eval(x.prefix(node), &mut fast);
                    let slow = eval_interaction(&spec, x.prefix(node), &mu).unwrap().value;
                    for (a, b) in fast.iter().zip(&slow) {
                        assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{spec:?}: {a} vs {b}");
                    }
                }
            }
        }
    }
}

#[test]
fn self_exclusion_matches_direct_sum() {
    let grid = TimeGrid::new(1.0, 4).unwrap();
    for dim in [1, 2] {
        let mu = random_ensemble(grid, dim, 15, 3);
        for spec in specs(dim) {
            let (_, parts) = spec.components();
            for part in &parts {
                for i in [0, 7, 14] {
                    let exclude = Some(Exclude { index: i, weight: mu.weights()[i] });
                    let node = 3;
                    let summary = NodeSummary::build(part, dim, &mu, node);
                    let x = mu.path(i).prefix(node);
                    let mut fast = vec![0.0; dim];
                    let mut slow = vec![0.0; dim];
                    summary.eval(part, x, &mu, node, exclude, &mut fast);
                    summary::direct(part, x, &mu, node, exclude, &mut slow);
                    for (a, b) in fast.iter().zip(&slow) {
                        assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{part:?}: {a} vs {b}");
                    }
                }
            }
        }
    }
}

#[test]
fn subsample_policy_uses_fixed_subset() {
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let mu = Arc::new(random_ensemble(grid, 1, 50, 2));
    let spec = DriftSpec::bounded(1, Kernel::Tanh).unwrap();
    let policy = EvalPolicy::Subsample { size: 10, seed: 4 };
    let a = freeze_with(&spec, mu.clone(), policy).unwrap();
    let b = freeze_with(&spec, mu.clone(), policy).unwrap();
    assert_eq!(a.measure().len(), 10);
    let x = walk(grid, 1, 1, 1.0);
    let (mut oa, mut ob) = ([0.0], [0.0]);
    a.eval(x.prefix(2), &mut oa);
    b.eval(x.prefix(2), &mut ob);
    assert_eq!(oa, ob);
    assert_eq!(freeze_with(&spec, mu, EvalPolicy::Subsample { size: 100, seed: 4 }).unwrap().measure().len(), 50);
}

#[test]
fn coarse_solver_grid_reads_refined_measure() {
    let fine = TimeGrid::new(1.0, 8).unwrap();
    let coarse = TimeGrid::new(1.0, 4).unwrap();
    let mu = Arc::new(random_ensemble(fine, 1, 10, 6));
    let spec =
        DriftSpec::new(1, DriftKind::LinearGrowthPath { base: BaseDrift::Zero, kernel: Kernel::Mean, growth: 1.0 })
            .unwrap();
    let frozen = freeze(&spec, mu.clone()).unwrap();
    assert!(frozen.check_grid(&coarse).is_ok());
    assert!(frozen.check_grid(&TimeGrid::new(1.0, 3).unwrap()).is_err());
    let x = point(coarse, 0.0);
    let mut out = [0.0];
    frozen.eval(x.prefix(2), &mut out);
    let mean: f64 = mu.paths().iter().map(|p| p.at(4)[0]).sum::<f64>() / 10.0;
    assert!((out[0] - mean).abs() < 1e-12);
}

/// Laws on a fixed finite set of cells, so TV is exact.
fn cell_ensemble(grid: TimeGrid, cells: &[[f64; 2]], weights: &[f64]) -> Ensemble {
    let paths = cells.iter().map(|c| Path::from_fn(grid, 2, |_, out| out.copy_from_slice(c)).unwrap()).collect();
    Ensemble::with_weights(paths, weights.to_vec()).unwrap()
}

fn normalize(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

proptest! {
    #[test]
    fn truncation_bounds_and_preserves(level in 0.1f64..3.0, scale in 0.1f64..4.0, seed in 0u64..200) {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let mu = random_ensemble(grid, 2, 6, seed);
        let spec = DriftSpec::bounded(2, Kernel::Sine.scaled(scale)).unwrap();
        let cut = truncate(&spec, level).unwrap();
        let x = walk(grid, 2, seed + 1, 1.0);
        for node in 0..=4 {
            let xs = x.prefix(node);
            for y in mu.paths() {
                let mut raw = [0.0; 2];
                Kernel::Sine.scaled(scale).eval(xs, y.prefix(node), &mut raw);
                let single = Ensemble::new(vec![y.clone()]).unwrap();
                let got = eval_interaction(&cut, xs, &single).unwrap().value;
                for k in 0..2 {
                    prop_assert!(got[k].abs() <= level);
                    if raw[k].abs() <= level {
                        prop_assert_eq!(got[k], raw[k]);
                    }
                }
            }
        }
    }

    #[test]
    fn interaction_is_affine_in_weights(alpha in 0.0f64..=1.0, seed in 0u64..200, which in 0usize..13) {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let a = random_ensemble(grid, 1, 5, seed);
        let b = random_ensemble(grid, 1, 7, seed + 999);
        let mix = Ensemble::mixture(&a, alpha, &b).unwrap();
        let spec = specs(1).swap_remove(which);
        if matches!(spec.kind(), DriftKind::NonlinearTv { .. }) {
            return Ok(());
        }
        let x = walk(grid, 1, seed + 5, 1.0);
        for node in 0..=4 {
            let va = eval_interaction(&spec, x.prefix(node), &a).unwrap().value[0];
            let vb = eval_interaction(&spec, x.prefix(node), &b).unwrap().value[0];
            let vm = eval_interaction(&spec, x.prefix(node), &mix).unwrap().value[0];
            prop_assert!((vm - (alpha * va + (1.0 - alpha) * vb)).abs() < 1e-10 * (1.0 + vm.abs()));
        }
    }

    #[test]
    fn linear_growth_bound_holds(seed in 0u64..300, scale in 0.1f64..5.0) {
        let grid = TimeGrid::new(1.0, 6).unwrap();
        let growth = 1.0;
        let spec = DriftSpec::new(
            1,
            DriftKind::LinearGrowthPath { base: BaseDrift::Zero, kernel: Kernel::RunningSup, growth },
        ).unwrap();
        let mu = Ensemble::new((0..8).map(|i| walk(grid, 1, seed * 31 + i, scale)).collect()).unwrap();
        let x = walk(grid, 1, seed + 17, scale);
        for node in 0..=6 {
            let v = eval_interaction(&spec, x.prefix(node), &mu).unwrap().value[0];
            let avg_sup: f64 = mu.paths().iter().map(|p| p.prefix(node).running_sup()).sum::<f64>() / 8.0;
            prop_assert!(v.abs() <= growth * (1.0 + x.prefix(node).running_sup() + avg_sup) + 1e-12);
        }
    }

    #[test]
    fn nonlinear_tv_lipschitz(
        raw_a in proptest::collection::vec(0.01f64..1.0, 6),
        raw_b in proptest::collection::vec(0.01f64..1.0, 6),
        x0 in -2.0f64..2.0,
        x1 in -2.0f64..2.0,
        strength in 0.1f64..3.0,
    ) {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let cells = [[-1.5, 0.3], [-0.4, -1.0], [0.0, 0.0], [0.7, 2.0], [1.2, -0.3], [2.5, 1.1]];
        let (wa, wb) = (normalize(&raw_a), normalize(&raw_b));
        let tv = 0.5 * wa.iter().zip(&wb).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let mu = cell_ensemble(grid, &cells, &wa);
        let nu = cell_ensemble(grid, &cells, &wb);
        let x = Path::from_fn(grid, 2, |_, out| { out[0] = x0; out[1] = x1; }).unwrap();
        for op in [NonlinearOp::TailBalance { strength }, NonlinearOp::SaturatedMean { strength }] {
            let spec = DriftSpec::new(2, DriftKind::NonlinearTv { op, lipschitz: op.lipschitz(2) }).unwrap();
            let bm = eval_interaction(&spec, x.prefix(1), &mu).unwrap().value;
            let bn = eval_interaction(&spec, x.prefix(1), &nu).unwrap().value;
            let diff = ((bm[0] - bn[0]).powi(2) + (bm[1] - bn[1]).powi(2)).sqrt();
            prop_assert!(diff <= op.lipschitz(2) * tv + 1e-12);
        }
    }
}
