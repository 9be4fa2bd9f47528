mod common;

use ot_steady::measures::{histogram, ParticleEnsemble};
use ot_steady::models::{propagate, reflect, RngStream, SdeModel, StepperConfig};
use proptest::prelude::*;

#[test]
fn propagation_with_no_dynamics_is_the_identity() {
    let m = SdeModel::linear_1d(0.0, 0.0, -5.0, 5.0).unwrap();
    let e = ParticleEnsemble::from_1d(vec![-1.0, 0.25, 3.7]).unwrap();
    let cfg = StepperConfig::new(0.1, 1.0, 9).unwrap();
    let out = propagate(&e, &m, &cfg, &mut RngStream::new(9)).unwrap();
    assert_eq!(out.as_1d().unwrap(), e.as_1d().unwrap());
}

#[test]
fn noiseless_linear_decay_matches_the_ode_solution() {
    let m = SdeModel::linear_1d(-1.0, 0.0, -5.0, 5.0).unwrap();
    let e = ParticleEnsemble::from_1d(vec![1.0]).unwrap();
    let cfg = StepperConfig::new(1e-4, 1.0, 0).unwrap();
    let out = propagate(&e, &m, &cfg, &mut RngStream::new(0)).unwrap();
    let x = out.as_1d().unwrap()[0];
    assert!((x - (-1.0f64).exp()).abs() < 1e-3, "got {x}, want ~0.3679");
}

#[test]
fn noiseless_integration_error_shrinks_linearly_in_dt() {
    // Euler on x' = -x: global error is O(dt), so halving dt should roughly
    // halve the defect against the exact flow.
    let m = SdeModel::linear_1d(-1.0, 0.0, -5.0, 5.0).unwrap();
    let e = ParticleEnsemble::from_1d(vec![2.0]).unwrap();
    let exact = 2.0 * (-1.0f64).exp();
    let mut errs = Vec::new();
    for &dt in &[2e-3, 1e-3] {
        let cfg = StepperConfig::new(dt, 1.0, 0).unwrap();
        let out = propagate(&e, &m, &cfg, &mut RngStream::new(0)).unwrap();
        errs.push((out.as_1d().unwrap()[0] - exact).abs());
    }
    let ratio = errs[0] / errs[1];
    assert!((1.5..3.0).contains(&ratio), "error ratio {ratio} not within first-order band");
}

#[test]
fn pure_diffusion_on_a_box_settles_to_uniform() {
    let m = SdeModel::linear_1d(0.0, 1.0, 0.0, 1.0).unwrap();
    let n = 100_000;
    let e = ParticleEnsemble::from_1d(vec![0.5; n]).unwrap();
    let cfg = StepperConfig::new(1e-2, 10.0, 4).unwrap();
    let out = propagate(&e, &m, &cfg, &mut RngStream::new(4)).unwrap();
    let edges: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
    let counts = histogram(&out, &edges).unwrap();
    let sigma = (n as f64 * 0.1 * 0.9).sqrt();
    for &c in &counts {
        assert!(
            (c as f64 - n as f64 * 0.1).abs() <= 4.0 * sigma,
            "bin count {c} departs from uniform beyond 4 sigma"
        );
    }
}

#[test]
fn reflect_folds_into_the_interval() {
    assert_eq!(reflect(0.5, 0.0, 1.0), 0.5);
    assert!((reflect(1.2, 0.0, 1.0) - 0.8).abs() < 1e-15);
    // -2.3 needs two folds; verify against a literal loop.
    let mut x = -2.3f64;
    loop {
        if x < 0.0 {
            x = -x;
        } else if x > 1.0 {
            x = 2.0 - x;
        } else {
            break;
        }
    }
    assert!((reflect(-2.3, 0.0, 1.0) - x).abs() < 1e-12);
    assert!((x - 0.3).abs() < 1e-12);
}

#[test]
fn chemotaxis_drift_values() {
    let m = SdeModel::chemotaxis();
    assert!((m.drift_1d(0.0) - 1.0).abs() < 1e-15);
    let t: f64 = 1.0f64.tanh();
    let want = (1.0 + 0.5 * t * t) * (1.0 - t * t);
    assert!((m.drift_1d(1.0) - want).abs() < 1e-12);
    assert!((want - 0.5417).abs() < 1e-4);
    assert!(m.drift_1d(9.5).abs() < 1e-6, "drift should vanish far from the origin");
}

#[test]
fn double_well_drift_values() {
    let m = SdeModel::double_well();
    assert_eq!(m.drift_1d(0.0), 0.0);
    assert_eq!(m.drift_1d(1.0), 0.0);
    assert_eq!(m.drift_1d(-1.0), 0.0);
    assert_eq!(m.drift_1d(2.0), -12.0);
    assert!(m.drift_1d(0.5) > 0.0, "should attract toward the well at +1");
}

#[test]
fn half_moon_drift_values() {
    let m = SdeModel::half_moon();
    // At (2,0) the radial term vanishes (r = R) and only the exponential
    // ridge pushes in y.
    let d = m.drift_2d(2.0, 0.0);
    assert!(d[0].abs() < 1e-12);
    assert!((d[1] - 0.75 * (-0.75f64).exp()).abs() < 1e-12);
    assert!((d[1] - 0.35427).abs() < 1e-5);
    // At (0,3) the radial pull is -2A(r-R) * y/r = -4 in y, plus the ridge.
    let d2 = m.drift_2d(0.0, 3.0);
    let ridge = 0.75 * (-1.5f64 * 3.5).exp();
    assert!(d2[0].abs() < 1e-12);
    assert!((d2[1] - (-4.0 + ridge)).abs() < 1e-12);
    // The radial convention keeps the origin finite.
    let d0 = m.drift_2d(0.0, 0.0);
    assert!(d0[0].is_finite() && d0[1].is_finite());
}

#[test]
fn analytic_densities_are_normalized() {
    for m in [SdeModel::chemotaxis(), SdeModel::double_well()] {
        let (lo, hi) = m.domain_1d();
        let n = 4096;
        let step = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let x = lo + step * i as f64;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * m.analytic_density_1d(x).unwrap();
        }
        total *= step;
        assert!((total - 1.0).abs() < 1e-6, "1d density mass {total}");
    }
    let m2 = SdeModel::half_moon();
    let n = 512;
    let step = 8.0 / n as f64;
    let mut total = 0.0;
    for i in 0..=n {
        for j in 0..=n {
            let wx = if i == 0 || i == n { 0.5 } else { 1.0 };
            let wy = if j == 0 || j == n { 0.5 } else { 1.0 };
            total += wx * wy * m2.analytic_density_2d(-4.0 + step * i as f64, -4.0 + step * j as f64).unwrap();
        }
    }
    total *= step * step;
    assert!((total - 1.0).abs() < 1e-6, "2d density mass {total}");
}

#[test]
fn chemotaxis_steady_flux_vanishes() {
    // J = drift * mu - D * mu' must be zero for the stationary density.
    // mu' comes from a five-point stencil, accurate enough to expose any
    // mismatch far above the 1e-8 allowance.
    let m = SdeModel::chemotaxis();
    let mut rng = <rand::rngs::StdRng as rand::SeedableRng>::seed_from_u64(11);
    for _ in 0..100 {
        let x: f64 = rand::Rng::gen_range(&mut rng, -9.0..9.0);
        let h = 1e-3;
        let f = |z: f64| m.analytic_density_1d(z).unwrap();
        let d1 = (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h);
        let flux = m.drift_1d(x) * f(x) - m.diffusion() * d1;
        assert!(flux.abs() < 1e-8, "flux {flux} at x={x}");
    }
}

#[test]
fn double_well_density_is_symmetric() {
    let m = SdeModel::double_well();
    for i in 0..50 {
        let x = 0.08 * i as f64;
        let a = m.analytic_density_1d(x).unwrap();
        let b = m.analytic_density_1d(-x).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }
}

#[test]
fn propagation_is_bit_reproducible() {
    let m = SdeModel::double_well();
    let e = ParticleEnsemble::from_1d((0..500).map(|i| -3.0 + 0.012 * i as f64).collect()).unwrap();
    let cfg = StepperConfig::new(1e-3, 0.1, 77).unwrap();
    let a = propagate(&e, &m, &cfg, &mut RngStream::new(77)).unwrap();
    let b = propagate(&e, &m, &cfg, &mut RngStream::new(77)).unwrap();
    assert_eq!(a.as_1d().unwrap(), b.as_1d().unwrap());
}

#[test]
fn long_chemotaxis_run_reaches_the_analytic_law() {
    let m = SdeModel::chemotaxis();
    let n = 100_000;
    let start: Vec<f64> = (0..n).map(|i| -9.0 + 18.0 * (i as f64 + 0.5) / n as f64).collect();
    let e = ParticleEnsemble::from_1d(start).unwrap();
    let cfg = StepperConfig::new(1e-2, 500.0, 21).unwrap();
    let out = propagate(&e, &m, &cfg, &mut RngStream::new(21)).unwrap();
    let oracle = m.analytic_samples_1d(n).unwrap();
    let d = common::w2_sorted_1d(out.as_1d().unwrap(), &oracle);
    assert!(d <= 0.05, "W2 to the analytic law was {d}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn propagation_preserves_count_and_domain(
        xs in prop::collection::vec(-3.9f64..3.9, 1..40),
        seed in 0u64..1000,
    ) {
        let m = SdeModel::double_well();
        let e = ParticleEnsemble::from_1d(xs.clone()).unwrap();
        let cfg = StepperConfig::new(1e-2, 0.1, seed).unwrap();
        let out = propagate(&e, &m, &cfg, &mut RngStream::new(seed)).unwrap();
        let ys = out.as_1d().unwrap();
        prop_assert_eq!(ys.len(), xs.len());
        for &y in ys {
            prop_assert!(m.contains_1d(y));
        }
    }

    #[test]
    fn reflect_is_total_and_idempotent(x in -100f64..100.0, a in -5f64..0.0, b in 0.1f64..5.0) {
        let y = reflect(x, a, b);
        prop_assert!((a..=b).contains(&y));
        prop_assert_eq!(reflect(y, a, b), y);
    }
}
