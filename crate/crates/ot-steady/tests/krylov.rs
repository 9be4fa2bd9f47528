mod common;

use common::{mat_vec, solve_dense};
use ot_steady::krylov::{
    fd_jvp, flow_spectrum_check, gmres, min_horizon, newton_krylov, recommend_eps, residual_spectrum_check, rms,
    NewtonKrylovOptions, ResidualMap, DEFAULT_ETA_SNR,
};
use ot_steady::Error;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Affine test map psi(u) = A u - c, optionally with fresh Gaussian noise of
/// scale sigma on every evaluation.
struct AffineMap {
    a: Vec<Vec<f64>>,
    c: Vec<f64>,
    sigma: f64,
    rng: StdRng,
}

impl AffineMap {
    fn new(a: Vec<Vec<f64>>, c: Vec<f64>, sigma: f64) -> Self {
        let rng = StdRng::seed_from_u64(4242);
        AffineMap { a, c, sigma, rng }
    }

    fn linear(a: Vec<Vec<f64>>) -> Self {
        let n = a.len();
        Self::new(a, vec![0.0; n], 0.0)
    }
}

impl ResidualMap for AffineMap {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn eval(&mut self, u: &[f64], out: &mut [f64]) -> Result<(), Error> {
        let av = mat_vec(&self.a, u);
        for i in 0..out.len() {
            out[i] = av[i] - self.c[i];
            if self.sigma > 0.0 {
                // Box-Muller keeps the test free of distribution deps.
                let (u1, u2) = (self.rng.gen::<f64>().max(1e-300), self.rng.gen::<f64>());
                out[i] += self.sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            }
        }
        Ok(())
    }

    fn noise_scale(&self) -> f64 {
        self.sigma
    }
}

struct FnMap<F: FnMut(&[f64], &mut [f64])> {
    n: usize,
    f: F,
}

impl<F: FnMut(&[f64], &mut [f64])> ResidualMap for FnMap<F> {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&mut self, u: &[f64], out: &mut [f64]) -> Result<(), Error> {
        (self.f)(u, out);
        Ok(())
    }
}

fn random_well_conditioned(n: usize, rng: &mut StdRng) -> Vec<Vec<f64>> {
    // Dominant diagonal keeps the condition number mild for any draw.
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j { 2.0 } else { 0.0 } + 0.3 * rng.gen_range(-1.0..1.0) / n as f64 * 10.0;
        }
    }
    a
}

#[test]
fn jvp_of_linear_map_at_origin_is_exact() {
    let mut rng = StdRng::seed_from_u64(1);
    let n = 20;
    let a = random_well_conditioned(n, &mut rng);
    let mut map = AffineMap::linear(a.clone());
    let u = vec![0.0; n];
    let mut base = vec![0.0; n];
    map.eval(&u, &mut base).unwrap();
    let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() + 0.1).collect();
    let want = mat_vec(&a, &v);
    let scale = rms(&want);
    for &eps in &[1e-8, 1e-6, 1e-4] {
        let mut out = vec![0.0; n];
        fd_jvp(&mut map, &u, &base, &v, eps, &mut out).unwrap();
        let err = out.iter().zip(&want).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt() / n as f64;
        assert!(err <= 1e-10 * scale, "eps {eps}: relative defect {}", err / scale);
    }
}

#[test]
fn jvp_of_linear_map_at_generic_point_is_exact_to_cancellation() {
    let mut rng = StdRng::seed_from_u64(2);
    let n = 20;
    let a = random_well_conditioned(n, &mut rng);
    let mut map = AffineMap::linear(a.clone());
    let u: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
    let mut base = vec![0.0; n];
    map.eval(&u, &mut base).unwrap();
    let v: Vec<f64> = (0..n).map(|i| 1.0 + (i % 3) as f64).collect();
    let want = mat_vec(&a, &v);
    let scale = rms(&want);
    for &eps in &[1e-8, 1e-6, 1e-4] {
        let mut out = vec![0.0; n];
        fd_jvp(&mut map, &u, &base, &v, eps, &mut out).unwrap();
        let err = rms(&out.iter().zip(&want).map(|(x, y)| x - y).collect::<Vec<_>>());
        // Subtractive cancellation costs ~eps_mach/eps in relative terms.
        let allow = (1e-12 / eps).max(1e-10) * scale;
        assert!(err <= allow, "eps {eps}: defect {err} > {allow}");
    }
}

#[test]
fn jvp_matches_first_order_taylor_on_squares() {
    let mut map = FnMap {
        n: 1,
        f: |u: &[f64], out: &mut [f64]| out[0] = u[0] * u[0],
    };
    let u = [1.0];
    let base = [1.0];
    let v = [1.0];
    let mut out = [0.0];
    fd_jvp(&mut map, &u, &base, &v, 1e-6, &mut out).unwrap();
    assert!((out[0] - 2.000001).abs() <= 1e-9, "got {}", out[0]);
}

#[test]
fn jvp_error_curve_blows_up_at_tiny_steps_under_noise() {
    let n = 16;
    let mut rng = StdRng::seed_from_u64(3);
    let a = random_well_conditioned(n, &mut rng);
    let sigma = 1e-3;
    let mut map = AffineMap::new(a.clone(), vec![0.0; n], sigma);
    let u = vec![0.5; n];
    let v: Vec<f64> = (0..n).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.4).collect();
    let want = mat_vec(&a, &v);
    let mut err_at = |eps: f64| -> f64 {
        let mut acc = 0.0;
        for _ in 0..40 {
            let mut base = vec![0.0; n];
            map.eval(&u, &mut base).unwrap();
            let mut out = vec![0.0; n];
            fd_jvp(&mut map, &u, &base, &v, eps, &mut out).unwrap();
            acc += rms(&out.iter().zip(&want).map(|(x, y)| x - y).collect::<Vec<_>>());
        }
        acc / 40.0
    };
    let tiny = err_at(1e-8);
    let coarse = err_at(1e-1);
    assert!(
        tiny >= 1e3 * coarse,
        "noise amplification missing: err(1e-8)={tiny} err(1e-1)={coarse}"
    );
}

#[test]
fn jvp_tracks_analytic_jacobians_of_polynomials() {
    // psi_i = 0.1 u_i^3 - 2 u_i + 0.2 u_{i+1}^2 (cyclic), mild curvature so
    // the eps-order bias stays inside the documented tolerance.
    let n = 12;
    let mut map = FnMap {
        n,
        f: |u: &[f64], out: &mut [f64]| {
            let n = u.len();
            for i in 0..n {
                let z = u[(i + 1) % n];
                out[i] = 0.1 * u[i] * u[i] * u[i] - 2.0 * u[i] + 0.2 * z * z;
            }
        },
    };
    let u: Vec<f64> = (0..n).map(|i| 0.3 * ((i as f64) * 1.3).sin()).collect();
    let mut base = vec![0.0; n];
    map.eval(&u, &mut base).unwrap();
    let v: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.9).cos()).collect();
    let mut want = vec![0.0; n];
    for i in 0..n {
        let j = (i + 1) % n;
        want[i] = (0.3 * u[i] * u[i] - 2.0) * v[i] + 0.4 * u[j] * v[j];
    }
    let mut out = vec![0.0; n];
    fd_jvp(&mut map, &u, &base, &v, 1e-6, &mut out).unwrap();
    let err = rms(&out.iter().zip(&want).map(|(x, y)| x - y).collect::<Vec<_>>());
    let rel = err / rms(&want);
    assert!(rel <= 1e-6, "relative error {rel}");
}

#[test]
fn gmres_solves_the_identity_in_one_matvec() {
    let b = vec![1.0, -2.0, 3.0];
    let out = gmres(|v, out| { out.copy_from_slice(v); Ok(()) }, &b, 1e-10, 10, 100).unwrap();
    assert!(out.converged);
    assert_eq!(out.matvecs, 1);
    for i in 0..3 {
        assert!((out.x[i] - b[i]).abs() <= 1e-10);
    }
}

#[test]
fn gmres_solves_diagonal_systems() {
    let b = vec![1.0, 2.0];
    let out = gmres(
        |v, out| {
            out[0] = v[0];
            out[1] = 2.0 * v[1];
            Ok(())
        },
        &b,
        1e-12,
        10,
        100,
    )
    .unwrap();
    assert!(out.converged);
    assert!((out.x[0] - 1.0).abs() <= 1e-10 && (out.x[1] - 1.0).abs() <= 1e-10);
}

#[test]
fn gmres_agrees_with_dense_elimination() {
    let mut rng = StdRng::seed_from_u64(17);
    for trial in 0..25 {
        let n = 20;
        let a = random_well_conditioned(n, &mut rng);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eta = [1e-2, 1e-6, 1e-10][trial % 3];
        let out = gmres(|v, out| { out.copy_from_slice(&mat_vec(&a, v)); Ok(()) }, &b, eta, 30, 400).unwrap();
        assert!(out.converged, "trial {trial} did not converge");
        // The convergence contract: true residual within eta * |b|.
        let r: Vec<f64> = mat_vec(&a, &out.x).iter().zip(&b).map(|(x, y)| x - y).collect();
        let bn = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(rn <= eta * bn * (1.0 + 1e-8), "trial {trial}: residual {rn} vs allowance {}", eta * bn);
        // And the answer is the dense solution up to that same allowance.
        let exact = solve_dense(&a, &b);
        let dn = out.x.iter().zip(&exact).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        assert!(dn <= 2.0 * eta * bn, "trial {trial}: distance to dense solve {dn}");
    }
}

#[test]
fn gmres_flags_exhausted_budgets() {
    let mut rng = StdRng::seed_from_u64(18);
    let n = 20;
    let a = random_well_conditioned(n, &mut rng);
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let out = gmres(|v, out| { out.copy_from_slice(&mat_vec(&a, v)); Ok(()) }, &b, 1e-14, 30, 3).unwrap();
    assert!(!out.converged);
    assert!(out.matvecs <= 3);
}

#[test]
fn newton_contracts_linear_residuals_immediately() {
    let mut map = FnMap {
        n: 1,
        f: |u: &[f64], out: &mut [f64]| out[0] = 0.5 * u[0],
    };
    let mut opts = NewtonKrylovOptions::new(1.0);
    opts.stop = 1e-9;
    let report = newton_krylov(&mut map, &[4.0], &opts).unwrap();
    assert!(report.converged);
    assert!(report.iterations() <= 2, "took {} iterations", report.iterations());
    assert!(report.final_iterate[0].abs() <= 1e-8);
    assert!(report.evaluations >= report.iterations());
}

#[test]
fn newton_finds_the_tanh_crossing() {
    let mut map = FnMap {
        n: 1,
        f: |u: &[f64], out: &mut [f64]| out[0] = u[0] - (2.0 * u[0]).tanh(),
    };
    let mut opts = NewtonKrylovOptions::new(1.0);
    opts.stop = 1e-12;
    let report = newton_krylov(&mut map, &[1.5], &opts).unwrap();
    assert!(report.converged);
    // Frozen root of u = tanh(2u), computed once by bisection.
    let root = 0.9575040240772688;
    assert!(
        (report.final_iterate[0] - root).abs() <= 1e-6,
        "iterate {} vs root {root}",
        report.final_iterate[0]
    );
    // Smooth scalar problems should need only a handful of iterations.
    assert!(report.iterations() <= 8, "took {}", report.iterations());
}

#[test]
fn noisy_residual_plateaus_scale_with_the_noise() {
    // Plateau height for a linear map should follow the sigma/eps variance
    // term; calibrate the constant on the middle sigma and demand the
    // others stay within a factor of ten.
    let n = 8;
    let mut rng = StdRng::seed_from_u64(5);
    let a = random_well_conditioned(n, &mut rng);
    let eps = 0.1;
    let plateau = |sigma: f64| -> f64 {
        let mut map = AffineMap::new(a.clone(), vec![0.0; n], sigma);
        let mut opts = NewtonKrylovOptions::new(1.0);
        opts.eps = Some(eps);
        opts.eta = 0.5;
        opts.stop = 0.0;
        opts.max_iters = 25;
        opts.eval_budget = 2000;
        let report = newton_krylov(&mut map, &vec![1.0; n], &opts).unwrap();
        let tail = &report.residual_norms[report.residual_norms.len().saturating_sub(10)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    let mid = plateau(1e-3);
    let c = mid / (1e-3 / eps);
    for &sigma in &[1e-4, 1e-2] {
        let p = plateau(sigma);
        let predicted = c * sigma / eps;
        assert!(
            p <= 10.0 * predicted && p >= predicted / 10.0,
            "sigma {sigma}: plateau {p} vs predicted {predicted}"
        );
    }
}

#[test]
fn recommended_steps_follow_the_quarter_power_rule() {
    assert_eq!(recommend_eps(1.0, 10_000), 0.1);
    assert_eq!(recommend_eps(0.0, 10_000), f64::EPSILON.sqrt());
    assert!((recommend_eps(0.0, 1) - 1.4901161193847656e-8).abs() < 1e-22);
    assert!((recommend_eps(2.5, 100_000_000) - 1e-2).abs() < 1e-15);
}

#[test]
fn horizon_rule_separates_spectral_gaps() {
    assert!((min_horizon(-1.0, -2.0, 0.1).unwrap() - 2.302585092994046).abs() < 1e-12);
    assert!((min_horizon(-1.0, -11.0, 0.1).unwrap() - 0.2302585092994046).abs() < 1e-12);
    assert_eq!(min_horizon(-1.0, -2.0, 1.0).unwrap(), 0.0);
    assert!(min_horizon(-2.0, -1.0, 0.1).is_err());
    assert_eq!(DEFAULT_ETA_SNR, 0.1);
}

#[test]
fn linear_flow_spectra_match_closed_forms() {
    assert!(residual_spectrum_check(&[-1.0], 1.0, 1e-7).unwrap() <= 1e-6);
    assert!(residual_spectrum_check(&[0.0], 1.0, 1e-7).unwrap() <= 1e-9);
    assert!(residual_spectrum_check(&[-1.0, -2.0, -5.0], 0.5, 1e-7).unwrap() <= 1e-6);
    // The propagator's own eigenvalues follow the exponential directly.
    assert!(flow_spectrum_check(&[-1.0, -2.0, -5.0], 0.5, 1e-7).unwrap() <= 1e-6);
}
