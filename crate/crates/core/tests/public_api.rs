use mvlab::chaos::rate_fit;
use mvlab::drift::{eval_interaction, freeze, truncate, DriftSpec, FnDrift, Kernel, PathDrift};
use mvlab::metrics::girsanov_entropy;
use mvlab::noise::NoiseKind;
use mvlab::sde::{euler_maruyama, particle_system, picard_solve, InitialLaw, SolverConfig};
use mvlab::{Ensemble, Path, PathView, TimeGrid};
use proptest::prelude::*;

fn cfg(seed: u64, paths: usize) -> SolverConfig {
    let law = InitialLaw::Gaussian { mean: vec![0.0], cov: vec![1.0] };
    SolverConfig::new(TimeGrid::new(1.0, 20).unwrap(), paths, law, seed, NoiseKind::Brownian).unwrap()
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn csv_bytes(e: &Ensemble) -> Vec<u8> {
    let mut out = Vec::new();
    e.write_csv(&mut out).unwrap();
    out
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let spec = DriftSpec::bounded(1, Kernel::Tanh).unwrap();
    let run = || {
        let st = picard_solve(&spec, &cfg(3, 200), 1e-6, 2).unwrap();
        let sys = particle_system(&spec, 16, &cfg(4, 2)).unwrap();
        (csv_bytes(&st.ensemble), st.entropy_gap, csv_bytes(&sys))
    };
    let a = in_pool(1, run);
    let b = in_pool(4, run);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.to_bits(), b.1.to_bits());
    assert_eq!(a.2, b.2);
}

#[test]
fn ensemble_csv_round_trip_is_exact() {
    let zero = FnDrift::new(1, |_, o: &mut [f64]| o[0] = 0.0);
    let e = euler_maruyama(&zero, &cfg(9, 5)).unwrap();
    let back = Ensemble::read_csv(csv_bytes(&e).as_slice()).unwrap();
    assert_eq!(back.len(), e.len());
    for (p, q) in e.paths().iter().zip(back.paths()) {
        assert_eq!(p.values(), q.values());
    }
}

#[test]
fn entropy_between_a_drift_and_itself_vanishes() {
    let spec = DriftSpec::bounded(1, Kernel::Sine).unwrap();
    let st = picard_solve(&spec, &cfg(5, 100), 1e-6, 1).unwrap();
    let b = freeze(&spec, st.ensemble.clone()).unwrap();
    let rep = girsanov_entropy(&b, &b, &st.ensemble, 1.0).unwrap();
    assert_eq!(rep.last().0, 0.0);
}

#[test]
fn rate_fit_recovers_an_exact_power_law() {
    let x = [8.0, 16.0, 32.0, 64.0, 128.0];
    let y: Vec<f64> = x.iter().map(|n: &f64| 3.0 * n.powf(-1.5)).collect();
    let f = rate_fit(&x, &y).unwrap();
    assert!((f.slope + 1.5).abs() < 1e-12);
    assert!(f.half_width < 1e-9);
}

fn line(grid: TimeGrid, slope: f64) -> Path {
    Path::from_fn(grid, 1, |t, out| out[0] = slope * t).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn truncated_interaction_is_clipped(n in 0.0f64..3.0, shift in -10.0f64..10.0) {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let spec = DriftSpec::new(1, mvlab::drift::DriftKind::LinearGrowthPath {
            base: mvlab::drift::BaseDrift::Zero,
            kernel: Kernel::Mean,
            growth: 1.0,
        }).unwrap();
        let mu = Ensemble::new(vec![line(grid, shift), line(grid, -0.5 * shift)]).unwrap();
        let x = line(grid, 1.0);
        let full = eval_interaction(&spec, x.view(), &mu).unwrap().value[0];
        let cut = eval_interaction(&truncate(&spec, n).unwrap(), x.view(), &mu).unwrap().value[0];
        // each pair term y_t is clipped before averaging over μ
        let clip = |v: f64| v.clamp(-n, n);
        prop_assert!((full - 0.25 * shift).abs() < 1e-12);
        prop_assert!((cut - 0.5 * (clip(shift) + clip(-0.5 * shift))).abs() < 1e-12);
        prop_assert!(cut.abs() <= n + 1e-12);
    }

    #[test]
    fn girsanov_entropy_is_nonnegative_and_grows(c in -2.0f64..2.0, seed in 0u64..1000) {
        let shift = FnDrift::new(1, move |_: PathView<'_>, o: &mut [f64]| o[0] = c);
        let zero = FnDrift::new(1, |_: PathView<'_>, o: &mut [f64]| o[0] = 0.0);
        let sample = euler_maruyama(&shift, &cfg(seed, 4)).unwrap();
        let rep = girsanov_entropy(&shift, &zero, &sample, 1.0).unwrap();
        let mut prev = 0.0;
        for t in [0.25, 0.5, 0.75, 1.0] {
            let h = rep.at(t).unwrap().0;
            prop_assert!(h >= prev - 1e-15);
            prev = h;
        }
        // constant shift: H(t) = c² t / 2 exactly
        prop_assert!((prev - 0.5 * c * c).abs() < 1e-12);
        prop_assert_eq!(shift.dim(), 1);
    }
}
