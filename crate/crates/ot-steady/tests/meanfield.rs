mod common;

use common::rms;
use ot_steady::krylov::NewtonKrylovOptions;
use ot_steady::meanfield::{cfl_bound, keller_segel_rhs, pde_steady_state, pde_timestepper, FvGrid};
use ot_steady::models::{gaussian, SdeModel};
use proptest::prelude::*;

fn analytic_grid(model: &SdeModel, n: usize) -> FvGrid {
    let (lo, hi) = model.domain_1d();
    FvGrid::from_density_fn(hi.max(-lo), n, |x| model.analytic_density_1d(x).unwrap()).unwrap()
}

#[test]
fn constants_do_not_diffuse() {
    let model = SdeModel::linear_1d(0.0, 1.0, -10.0, 10.0).unwrap();
    let grid = FvGrid::new(10.0, vec![0.05; 200]).unwrap();
    let rhs = keller_segel_rhs(&grid, &model).unwrap();
    assert!(rhs.iter().all(|r| *r == 0.0));
    let out = pde_timestepper(&grid, &model, 1e-3, 0.1).unwrap();
    assert_eq!(out.density(), grid.density());
}

#[test]
fn flux_differences_conserve_mass_exactly() {
    let model = SdeModel::chemotaxis();
    let grid = analytic_grid(&model, 500);
    let rhs = keller_segel_rhs(&grid, &model).unwrap();
    let total: f64 = rhs.iter().sum::<f64>() * grid.dx();
    assert!(total.abs() <= 1e-12, "mass rate {total}");
}

#[test]
fn steady_density_residual_decays_at_second_order() {
    let model = SdeModel::chemotaxis();
    let mut errs = Vec::new();
    for n in [250, 500, 1000] {
        let grid = analytic_grid(&model, n);
        let rhs = keller_segel_rhs(&grid, &model).unwrap();
        errs.push(rms(&rhs));
    }
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.2..=4.8).contains(&ratio), "refinement ratio {ratio} ({errs:?})");
    }
}

#[test]
fn oversized_steps_are_rejected_with_the_bound() {
    let model = SdeModel::chemotaxis();
    let grid = FvGrid::new(10.0, vec![0.05; 100]).unwrap();
    let bound = cfl_bound(&grid, &model);
    assert!((bound - 0.02).abs() <= 1e-15, "bound {bound}");
    let err = pde_timestepper(&grid, &model, 1.5 * bound, 1.0).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("stability bound"), "message: {msg}");
    assert!(pde_timestepper(&grid, &model, 0.5 * bound, 1.0).is_ok());
    let free = SdeModel::linear_1d(0.0, 0.0, -10.0, 10.0).unwrap();
    assert_eq!(cfl_bound(&grid, &free), f64::INFINITY);
}

#[test]
fn stepping_conserves_mass_to_rounding() {
    let model = SdeModel::chemotaxis();
    let blob = gaussian(1.0, 2.0);
    let grid = FvGrid::from_density_fn(10.0, 500, |x| blob(x)).unwrap();
    let before = grid.mass();
    let out = pde_timestepper(&grid, &model, 1e-4, 1.0).unwrap();
    assert!((out.mass() - before).abs() <= 1e-10, "mass drift {}", out.mass() - before);
}

#[test]
fn long_integration_reaches_the_analytic_profile() {
    let model = SdeModel::chemotaxis();
    let blob = gaussian(0.5, 2.0);
    // The slowest mode of this operator decays at rate ~0.027, so 120 time
    // units pull a Gaussian start under 5e-4; the bound leaves 2x headroom.
    let mut grid = FvGrid::from_density_fn(10.0, 1000, |x| blob(x)).unwrap();
    for _ in 0..12 {
        grid = pde_timestepper(&grid, &model, 1e-4, 10.0).unwrap();
    }
    let mut worst = 0.0f64;
    for i in 0..grid.n_cells() {
        let want = model.analytic_density_1d(grid.center(i)).unwrap();
        worst = worst.max((grid.density()[i] - want).abs());
    }
    assert!(worst <= 1e-3, "L-inf to analytic {worst}");
}

#[test]
fn newton_reaches_the_discrete_steady_state_from_uniform() {
    let model = SdeModel::chemotaxis();
    let grid0 = FvGrid::new(10.0, vec![0.05; 1000]).unwrap();
    let mut opts = NewtonKrylovOptions::new(1.0);
    opts.stop = 1e-7;
    opts.max_iters = 15;
    let (report, steady) = pde_steady_state(&grid0, &model, 1e-4, &opts).unwrap();
    assert!(report.converged, "residuals {:?}", report.residual_norms);
    assert!(report.iterations() <= 15, "{} iterations", report.iterations());
    assert!(report.final_residual() <= 1e-7);

    let peak = (0..steady.n_cells())
        .map(|i| model.analytic_density_1d(steady.center(i)).unwrap())
        .fold(0.0f64, f64::max);
    let mut worst = 0.0f64;
    for i in 0..steady.n_cells() {
        let want = model.analytic_density_1d(steady.center(i)).unwrap();
        worst = worst.max((steady.density()[i] - want).abs());
    }
    assert!(worst / peak <= 1e-3, "relative L-inf {}", worst / peak);
}

#[test]
fn near_fixed_points_converge_almost_immediately() {
    let model = SdeModel::chemotaxis();
    let grid0 = analytic_grid(&model, 1000);
    let mut opts = NewtonKrylovOptions::new(1.0);
    opts.stop = 1e-7;
    opts.max_iters = 15;
    let (report, _) = pde_steady_state(&grid0, &model, 1e-4, &opts).unwrap();
    assert!(report.converged);
    assert!(report.iterations() <= 2, "{} iterations from the oracle start", report.iterations());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mass_rate_vanishes_for_any_density(cells in prop::collection::vec(0.0f64..3.0, 8..200)) {
        let model = SdeModel::chemotaxis();
        let grid = FvGrid::new(10.0, cells).unwrap();
        let rhs = keller_segel_rhs(&grid, &model).unwrap();
        let total: f64 = rhs.iter().sum::<f64>() * grid.dx();
        prop_assert!(total.abs() <= 1e-12, "mass rate {}", total);
    }
}
