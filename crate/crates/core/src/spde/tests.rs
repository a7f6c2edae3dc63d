use std::sync::Arc;

use super::*;

fn heat_cfg(k: usize, m: usize, t: f64, n: usize, seed: u64) -> SpdeConfig {
    let mut c = SpdeConfig::new(SpdeKind::Heat, k, TimeGrid::new(t, n).unwrap(), m, seed);
    c.quad_points = 32.max(2 * k);
    c
}

fn wave_cfg(k: usize, m: usize, t: f64, n: usize, seed: u64) -> SpdeConfig {
    let mut c = heat_cfg(k, m, t, n, seed);
    c.kind = SpdeKind::Wave;
    c
}

fn zero(cfg: &SpdeConfig) -> FrozenField {
    FrozenField::zero(Arc::new(cfg.basis().unwrap()), cfg.state_dim())
}

fn constant(cfg: &SpdeConfig, g: Vec<f64>, measure: &Ensemble) -> FrozenField {
    let spec = SpdeDriftSpec::new(FieldDrift::Constant(g)).unwrap();
    FrozenField::new(&spec, Arc::new(cfg.basis().unwrap()), Arc::new(measure.clone())).unwrap()
}

fn moments(e: &Ensemble, node: usize, slot: usize) -> (f64, f64) {
    let v: Vec<f64> = e.paths().iter().map(|p| p.at(node)[slot]).collect();
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var)
}

#[test]
fn heat_free_mode_variances() {
    let cfg = heat_cfg(9, 10_000, 0.5, 50, 11);
    let e = spde_simulate(&zero(&cfg), &cfg).unwrap();
    let basis = cfg.basis().unwrap();
    let t = 0.5;
    for k in 0..9 {
        let lam = basis.eigenvalue(k);
        let want = if k == 0 { t } else { (1.0 - (-2.0 * lam * t).exp()) / (2.0 * lam) };
        let (_, var) = moments(&e, 50, k);
        assert!((var / want - 1.0).abs() < 0.05, "mode {k}: {var} vs {want}");
    }
}

#[test]
fn heat_constant_forcing_mean() {
    let cfg = heat_cfg(6, 4000, 0.4, 40, 12);
    let g = vec![0.3, 1.0, -2.0, 0.5, 4.0, 0.0];
    let dummy = spde_simulate(&zero(&cfg), &cfg).unwrap();
    let e = spde_simulate(&constant(&cfg, g.clone(), &dummy), &cfg).unwrap();
    let basis = cfg.basis().unwrap();
    for (k, gk) in g.iter().enumerate() {
        let lam = basis.eigenvalue(k);
        let want = if k == 0 { gk * 0.4 } else { gk * (1.0 - (-lam * 0.4).exp()) / lam };
        let (m, var) = moments(&e, 40, k);
        let se = (var / 4000.0).sqrt();
        assert!((m - want).abs() < 4.0 * se + 1e-12, "mode {k}: {m} vs {want}");
    }
}

#[test]
fn heat_modes_are_independent_without_drift() {
    let cfg = heat_cfg(4, 10_000, 0.3, 30, 13);
    let e = spde_simulate(&zero(&cfg), &cfg).unwrap();
    for (a, b) in [(0, 1), (1, 2), (2, 3), (1, 3)] {
        let (ma, va) = moments(&e, 30, a);
        let (mb, vb) = moments(&e, 30, b);
        let cov = e.paths().iter().map(|p| (p.at(30)[a] - ma) * (p.at(30)[b] - mb)).sum::<f64>() / 9999.0;
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() < 0.05, "modes {a},{b}: {corr}");
    }
}

#[test]
fn parseval_for_smooth_field() {
    let basis = SpectralBasis::new(SpdeKind::Heat, 64, 256).unwrap();
    let f: Vec<f64> = (0..256).map(|s| basis.sigma(s)).map(|x| x * x * (1.0 - x) * (1.0 - x)).collect();
    let mut c = vec![0.0; 64];
    basis.project(&f, &mut c);
    let exact = 1.0 / 630.0;
    let field = SpectralField { kind: SpdeKind::Heat, coeffs: c.clone() };
    assert!((field.l2_norm_sq() / exact - 1.0).abs() < 0.01);
    let mut back = vec![0.0; 256];
    basis.reconstruct(&c, &mut back);
    let grid_norm = back.iter().map(|v| v * v).sum::<f64>() / 256.0;
    assert!((grid_norm / field.l2_norm_sq() - 1.0).abs() < 1e-10);
    assert!((field.eval(0.3) - 0.3f64.powi(2) * 0.49).abs() < 1e-4);
}

#[test]
fn basis_projection_inverts_reconstruction() {
    for kind in [SpdeKind::Heat, SpdeKind::Wave] {
        let basis = SpectralBasis::new(kind, 10, 40).unwrap();
        let c: Vec<f64> = (0..10).map(|k| (k as f64 * 0.7).sin()).collect();
        let mut f = vec![0.0; 40];
        let mut back = vec![0.0; 10];
        basis.reconstruct(&c, &mut f);
        basis.project(&f, &mut back);
        for (a, b) in c.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn entropy_is_invariant_under_rebasing() {
    let cfg = heat_cfg(4, 50, 0.5, 20, 14);
    let sample = spde_simulate(&zero(&cfg), &cfg).unwrap();
    let g1 = vec![1.0, -0.5, 0.25, 2.0];
    let g2 = vec![0.0, 0.5, -1.0, 1.0];
    // orthonormal Q: a Householder reflection
    let v = [0.5, 0.5, -0.5, 0.5];
    let rot = |g: &[f64]| -> Vec<f64> {
        let d: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        g.iter().zip(&v).map(|(a, b)| a - 2.0 * d * b).collect()
    };
    let h = field_entropy(&constant(&cfg, g1.clone(), &sample), &constant(&cfg, g2.clone(), &sample), &sample)
        .unwrap()
        .last()
        .0;
    let hq = field_entropy(&constant(&cfg, rot(&g1), &sample), &constant(&cfg, rot(&g2), &sample), &sample)
        .unwrap()
        .last()
        .0;
    let exact = 0.5 * 0.5 * g1.iter().zip(&g2).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    assert!((h - exact).abs() < 1e-10);
    assert!((hq - h).abs() < 1e-10);
}

#[test]
fn wave_energy_is_conserved_without_forcing() {
    let mut cfg = wave_cfg(8, 1, 3.0, 3000, 15);
    cfg.noise_scale = 0.0;
    let init: Vec<f64> = (0..16).map(|j| 1.0 / (1.0 + j as f64)).collect();
    cfg.initial = FieldInit::Coefficients(init.clone());
    let e = spde_simulate(&zero(&cfg), &cfg).unwrap();
    let e0 = SpectralField { kind: SpdeKind::Wave, coeffs: init }.wave_energy();
    for node in [1, 500, 3000] {
        let en = SpectralField { kind: SpdeKind::Wave, coeffs: e.path(0).at(node).to_vec() }.wave_energy();
        for (a, b) in e0.iter().zip(&en) {
            assert!((a - b).abs() <= 1e-10 * a.max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn wave_noisy_position_variance() {
    let cfg = wave_cfg(4, 10_000, 0.7, 35, 16);
    let e = spde_simulate(&zero(&cfg), &cfg).unwrap();
    let t = 0.7;
    for k in 0..4 {
        let w = (k + 1) as f64 * std::f64::consts::PI;
        let want = (t / 2.0 - (2.0 * w * t).sin() / (4.0 * w)) / (w * w);
        let (_, var) = moments(&e, 35, k);
        assert!((var / want - 1.0).abs() < 0.05, "mode {k}: {var} vs {want}");
        let vz = t / 2.0 + (2.0 * w * t).sin() / (4.0 * w);
        let (_, var_z) = moments(&e, 35, 4 + k);
        assert!((var_z / vz - 1.0).abs() < 0.05, "velocity {k}: {var_z} vs {vz}");
    }
}

fn rk4_oscillator(w: f64, g: f64, t: f64, steps: usize) -> f64 {
    let h = t / steps as f64;
    let f = |y: f64, z: f64| (z, -w * w * y + g);
    let (mut y, mut z) = (0.0, 0.0);
    for _ in 0..steps {
        let k1 = f(y, z);
        let k2 = f(y + h / 2.0 * k1.0, z + h / 2.0 * k1.1);
        let k3 = f(y + h / 2.0 * k2.0, z + h / 2.0 * k2.1);
        let k4 = f(y + h * k3.0, z + h * k3.1);
        y += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        z += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    y
}

#[test]
fn wave_forced_mean_matches_oscillator() {
    let cfg = wave_cfg(3, 2000, 1.3, 26, 17);
    let g = vec![2.0, -1.0, 5.0];
    let dummy = spde_simulate(&zero(&cfg), &cfg).unwrap();
    let e = spde_simulate(&constant(&cfg, g.clone(), &dummy), &cfg).unwrap();
    let mut quiet = cfg.clone();
    quiet.noise_scale = 0.0;
    let det = spde_simulate(&constant(&quiet, g.clone(), &dummy), &quiet).unwrap();
    for (k, gk) in g.iter().enumerate() {
        let w = (k + 1) as f64 * std::f64::consts::PI;
        let want = rk4_oscillator(w, *gk, 1.3, 100_000);
        let got = det.path(0).at(26)[k];
        assert!((got - want).abs() < 0.01 * want.abs(), "mode {k}: {got} vs {want}");
        let (m, var) = moments(&e, 26, k);
        assert!((m - want).abs() < 4.0 * (var / 2000.0).sqrt());
    }
}

#[test]
fn single_particle_is_the_free_equation() {
    let cfg = heat_cfg(5, 1, 0.2, 20, 18);
    let key = crate::rng::StreamKey::new(3, "x");
    let kern = FieldKernel::SaturatedDiff { strength: 2.0 };
    let p = spde_particles_keyed(&kern, 1, &cfg, &key).unwrap();
    let free = FieldSim::new(&cfg).unwrap().run(&zero(&cfg), &key).unwrap();
    assert_eq!(p.path(0).values(), free.path(0).values());
}

#[test]
fn particle_drift_excludes_self() {
    let basis = SpectralBasis::new(SpdeKind::Heat, 4, 16).unwrap();
    let states: Vec<Vec<f64>> = (0..5).map(|i| (0..4).map(|k| ((i * 4 + k) as f64).sin()).collect()).collect();
    let refs: Vec<&[f64]> = states.iter().map(|v| v.as_slice()).collect();
    let fast = field::particle_drifts(&FieldKernel::TanhOther { strength: 1.5 }, &basis, &refs);
    let mut fields = vec![vec![0.0; 16]; 5];
    for (f, c) in fields.iter_mut().zip(&states) {
        basis.reconstruct(c, f);
    }
    for i in 0..5 {
        let g: Vec<f64> =
            (0..16).map(|s| 1.5 * (0..5).filter(|&j| j != i).map(|j| fields[j][s].tanh()).sum::<f64>() / 4.0).collect();
        let mut want = vec![0.0; 4];
        basis.project(&g, &mut want);
        for (a, b) in fast[i].iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn mean_field_interaction_matches_direct_average() {
    let cfg = heat_cfg(4, 30, 0.2, 10, 19);
    let law = Arc::new(spde_simulate(&zero(&cfg), &cfg).unwrap());
    let basis = Arc::new(cfg.basis().unwrap());
    let fast = FrozenField::new(
        &SpdeDriftSpec::new(FieldDrift::Interaction(FieldKernel::TanhOther { strength: 1.0 })).unwrap(),
        basis.clone(),
        law.clone(),
    )
    .unwrap();
    let x = law.path(3).at(7).to_vec();
    let mut got = vec![0.0; 4];
    fast.modes(&x, 7, &mut got);
    let direct = FrozenField::new(
        &SpdeDriftSpec::new(FieldDrift::Interaction(FieldKernel::SaturatedDiff { strength: 1.0 })).unwrap(),
        basis.clone(),
        law.clone(),
    )
    .unwrap();
    // SaturatedDiff at the zero field is the tanh average
    let mut at_zero = vec![0.0; 4];
    direct.modes(&[0.0; 4], 7, &mut at_zero);
    for (a, b) in got.iter().zip(&at_zero) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn heat_picard_contracts_within_ledger() {
    let cfg = heat_cfg(8, 400, 0.5, 25, 20);
    let spec = SpdeDriftSpec::new(FieldDrift::SaturatedMeanDistance { strength: 1.0, clip: 0.5 }).unwrap();
    assert_eq!(spec.lipschitz(), 1.0);
    let st = heat_mf_solve(&spec, &cfg, 1e-9, 5).unwrap();
    assert_eq!(st.history.len(), 5);
    let factor = spec.lipschitz().powi(2) * 0.5;
    let floor = 3.0 * 0.5 * spec.bound().powi(2) / 400.0;
    for w in st.history.windows(2) {
        assert!(w[1].entropy_gap <= factor * w[0].entropy_gap + floor + 3.0 * w[1].stderr, "{:?}", st.history);
    }
    assert!(st.history[0].entropy_gap > 0.0);
}

#[test]
fn picard_is_deterministic_and_rejects_wrong_kind() {
    let cfg = heat_cfg(4, 50, 0.2, 10, 21);
    let spec = SpdeDriftSpec::new(FieldDrift::SaturatedMeanDistance { strength: 1.0, clip: 1.0 }).unwrap();
    let a = heat_mf_solve(&spec, &cfg, 1e-12, 2).unwrap();
    let b = heat_mf_solve(&spec, &cfg, 1e-12, 2).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.ensemble.path(7).values(), b.ensemble.path(7).values());
    assert!(wave_mf_solve(&spec, &cfg, 1e-3, 2).is_err());
}

#[test]
fn wave_picard_with_constant_forcing_converges_at_once() {
    let cfg = wave_cfg(3, 100, 0.5, 20, 22);
    let spec = SpdeDriftSpec::new(FieldDrift::Constant(vec![1.0, 0.0, 0.0])).unwrap();
    let st = wave_mf_solve(&spec, &cfg, 1e-6, 5).unwrap();
    // the first iterate compares two copies of the same constant drift
    assert!(st.converged);
    assert_eq!(st.iteration, 1);
}

#[test]
fn field_csvs_have_fixed_headers() {
    let cfg = heat_cfg(3, 2, 0.1, 2, 23);
    let e = spde_simulate(&zero(&cfg), &cfg).unwrap();
    let mut buf = Vec::new();
    write_field_csv(&e, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("replica,t,k,coeff\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 3 * 3);
    let mut buf = Vec::new();
    write_snapshot_csv(&e, &cfg.basis().unwrap(), &[0.1], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("replica,t,sigma,value\n"));
    assert_eq!(text.lines().count(), 1 + 2 * cfg.quad_points);
}

#[test]
fn config_validation() {
    let mut cfg = heat_cfg(3, 2, 0.1, 2, 24);
    cfg.initial = FieldInit::Coefficients(vec![1.0]);
    assert!(spde_simulate(&zero(&heat_cfg(3, 2, 0.1, 2, 24)), &cfg).is_err());
    assert!(SpectralBasis::new(SpdeKind::Heat, 8, 8).is_err());
    assert!(SpdeDriftSpec::new(FieldDrift::SaturatedMeanDistance { strength: 1.0, clip: 0.0 }).is_err());
}
