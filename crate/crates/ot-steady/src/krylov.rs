//! Matrix-free Newton-Krylov machinery: finite-difference Jacobian-vector
//! products against a cached base residual, restarted GMRES, the Newton
//! outer loop, the noise-aware difference step, and two spectral utilities
//! (minimal horizon from a spectral gap, eigenvalue checks of the residual
//! of an exactly solvable linear flow).
//!
//! Residual norms are root-mean-square over components throughout, so
//! tolerances carry across grid resolutions.

use crate::error::{invalid, Error, Result};

/// A residual u -> psi(u) on flat vectors. Stochastic maps draw fresh,
/// independent noise on every evaluation; `noise_scale` advertises the
/// resulting standard deviation of one evaluation (sigma/sqrt(N)), zero for
/// deterministic maps.
pub trait ResidualMap {
    fn dim(&self) -> usize;

    /// Writes psi(u) into `out` (same length as `u`).
    fn eval(&mut self, u: &[f64], out: &mut [f64]) -> Result<()>;

    /// Noise standard deviation of a single evaluation; 0 when deterministic.
    fn noise_scale(&self) -> f64 {
        0.0
    }

    /// Finite-difference step suited to this map's noise level. Deterministic
    /// maps get sqrt of machine epsilon; stochastic implementations override
    /// with the noise-aware rule.
    fn recommended_eps(&self) -> f64 {
        f64::EPSILON.sqrt()
    }
}

pub fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Finite-difference step to use when nothing problem-specific is known:
/// sqrt of machine epsilon for noiseless residuals, N^(-1/4) when the
/// residual carries sampling noise (total FD error, noise amplification plus
/// truncation, is minimized at that scaling).
pub fn recommend_eps(sigma: f64, n: usize) -> f64 {
    if sigma <= 0.0 {
        f64::EPSILON.sqrt()
    } else {
        (n.max(1) as f64).powf(-0.25)
    }
}

/// Directional derivative of psi at u along v by one-sided differencing:
/// (psi(u + eps * v/|v|) - base) * |v|/eps, where `base` is psi(u) computed
/// once per Newton iteration and shared by every JVP of that iteration.
/// The perturbation direction is normalized so eps is an absolute step.
pub fn fd_jvp(map: &mut dyn ResidualMap, u: &[f64], base: &[f64], v: &[f64], eps: f64, out: &mut [f64]) -> Result<()> {
    let n = map.dim();
    if u.len() != n || base.len() != n || v.len() != n || out.len() != n {
        return Err(invalid("vector lengths do not match the residual dimension"));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid("fd step must be positive"));
    }
    let norm = l2(v);
    if !(norm > 0.0) {
        return Err(invalid("cannot difference along a zero direction"));
    }
    let scale = eps / norm;
    let up: Vec<f64> = u.iter().zip(v).map(|(ui, vi)| ui + scale * vi).collect();
    map.eval(&up, out)?;
    if !all_finite(out) {
        return Err(Error::Evaluation("residual is not finite at the perturbed point".into()));
    }
    let back = norm / eps;
    for i in 0..n {
        out[i] = (out[i] - base[i]) * back;
    }
    Ok(())
}

/// What GMRES came back with. `rel_residual` is from the Givens recurrence,
/// exact for exactly linear operators up to rounding.
#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub matvecs: usize,
    pub rel_residual: f64,
    pub converged: bool,
    /// A full restart cycle made no progress.
    pub stagnated: bool,
}

/// Restarted GMRES (Arnoldi with modified Gram-Schmidt and Givens
/// rotations) for A x = b given only v -> A v. Returns once the recurrence
/// residual satisfies |A x - b| <= eta |b|, or the best iterate at the
/// matvec budget, flagged unconverged. A restart cycle that fails to reduce
/// the residual sets the stagnation flag and stops.
pub fn gmres<F>(mut apply: F, b: &[f64], eta: f64, restart: usize, max_matvecs: usize) -> Result<GmresOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    if !(eta > 0.0 && eta < 1.0) {
        return Err(invalid("gmres tolerance must lie in (0, 1)"));
    }
    if restart == 0 || max_matvecs == 0 {
        return Err(invalid("restart length and matvec budget must be positive"));
    }
    let n = b.len();
    if !all_finite(b) {
        return Err(invalid("right-hand side is not finite"));
    }
    let bnorm = l2(b);
    let mut x = vec![0.0f64; n];
    if bnorm == 0.0 {
        return Ok(GmresOutcome { x, matvecs: 0, rel_residual: 0.0, converged: true, stagnated: false });
    }
    let target = eta * bnorm;
    let mut matvecs = 0usize;
    let mut scratch = vec![0.0f64; n];
    let mut best_rel = f64::INFINITY;
    let mut first_cycle = true;
    loop {
        // residual of the current x; the first cycle starts from x = 0 where
        // it is b itself
        let mut r = if first_cycle {
            b.to_vec()
        } else {
            if matvecs >= max_matvecs {
                return Ok(GmresOutcome { x, matvecs, rel_residual: best_rel, converged: false, stagnated: false });
            }
            apply(&x, &mut scratch)?;
            matvecs += 1;
            b.iter().zip(&scratch).map(|(bi, ai)| bi - ai).collect()
        };
        let beta = l2(&r);
        if beta <= target {
            return Ok(GmresOutcome { x, matvecs, rel_residual: beta / bnorm, converged: true, stagnated: false });
        }
        let cycle_start_rel = beta / bnorm;
        for ri in r.iter_mut() {
            *ri /= beta;
        }
        let m = restart;
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r);
        // column-major Hessenberg, already rotated
        let mut hcols: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<f64> = Vec::with_capacity(m);
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;
        let mut k_done = 0usize;
        let mut happy = false;
        let mut res = beta;
        let mut out_of_budget = false;
        for j in 0..m {
            if matvecs >= max_matvecs {
                out_of_budget = true;
                break;
            }
            apply(&basis[j], &mut scratch)?;
            matvecs += 1;
            if !all_finite(&scratch) {
                return Err(Error::Evaluation("operator output is not finite".into()));
            }
            let mut h = vec![0.0f64; j + 2];
            let mut w = scratch.clone();
            for (i, q) in basis.iter().enumerate().take(j + 1) {
                let hij = dot(&w, q);
                h[i] = hij;
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= hij * qi;
                }
            }
            let wnorm = l2(&w);
            h[j + 1] = wnorm;
            // rotate the new column by the accumulated Givens rotations
            for i in 0..j {
                let t = cs[i] * h[i] + sn[i] * h[i + 1];
                h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1];
                h[i] = t;
            }
            let denom = (h[j] * h[j] + h[j + 1] * h[j + 1]).sqrt();
            let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (h[j] / denom, h[j + 1] / denom) };
            cs.push(c);
            sn.push(s);
            h[j] = c * h[j] + s * h[j + 1];
            h[j + 1] = 0.0;
            g[j + 1] = -s * g[j];
            g[j] *= c;
            hcols.push(h);
            k_done = j + 1;
            res = g[j + 1].abs();
            if wnorm > 0.0 && res > target {
                for wi in w.iter_mut() {
                    *wi /= wnorm;
                }
                basis.push(w);
            } else {
                // happy breakdown (exact solution in this subspace) or
                // converged by the recurrence
                happy = wnorm == 0.0;
                break;
            }
        }
        if k_done > 0 {
            // back-substitute the k x k triangular system and expand
            let mut y = vec![0.0f64; k_done];
            for i in (0..k_done).rev() {
                let mut s = g[i];
                for (l, yl) in y.iter().enumerate().take(k_done).skip(i + 1) {
                    s -= hcols[l][i] * yl;
                }
                y[i] = s / hcols[i][i];
            }
            for (l, yl) in y.iter().enumerate() {
                for (xi, qi) in x.iter_mut().zip(&basis[l]) {
                    *xi += yl * qi;
                }
            }
        }
        let rel = res / bnorm;
        best_rel = best_rel.min(rel);
        if res <= target || happy {
            return Ok(GmresOutcome { x, matvecs, rel_residual: rel, converged: true, stagnated: false });
        }
        if out_of_budget || matvecs >= max_matvecs {
            return Ok(GmresOutcome { x, matvecs, rel_residual: rel, converged: false, stagnated: false });
        }
        if rel >= cycle_start_rel * (1.0 - 1e-12) {
            return Ok(GmresOutcome { x, matvecs, rel_residual: rel, converged: false, stagnated: true });
        }
        first_cycle = false;
    }
}

/// Knobs of the Newton-Krylov outer loop.
#[derive(Clone, Copy, Debug)]
pub struct NewtonKrylovOptions {
    /// Finite-difference step; None asks the residual map for its
    /// recommendation.
    pub eps: Option<f64>,
    /// GMRES relative tolerance, constant across Newton iterations.
    pub eta: f64,
    pub restart: usize,
    pub max_iters: usize,
    /// Stop when the RMS residual falls to or below this.
    pub stop: f64,
    /// Cap on total residual evaluations (initial + per-iteration base +
    /// one per JVP).
    pub eval_budget: usize,
    /// Coarse horizon of one evaluation; only used to report in-simulation
    /// time.
    pub horizon: f64,
}

impl NewtonKrylovOptions {
    pub fn new(horizon: f64) -> Self {
        NewtonKrylovOptions { eps: None, eta: 1e-3, restart: 30, max_iters: 50, stop: 1e-9, eval_budget: 10_000, horizon }
    }

    fn validate(&self) -> Result<()> {
        if let Some(e) = self.eps {
            if !(e > 0.0 && e.is_finite()) {
                return Err(invalid("fd step must be positive"));
            }
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(invalid("gmres tolerance must lie in (0, 1)"));
        }
        if self.restart == 0 || self.max_iters == 0 || self.eval_budget == 0 {
            return Err(invalid("restart, iteration and evaluation budgets must be positive"));
        }
        if !(self.stop >= 0.0) {
            return Err(invalid("stop tolerance must be nonnegative"));
        }
        if !(self.horizon > 0.0) {
            return Err(invalid("horizon must be positive"));
        }
        Ok(())
    }
}

/// What a Newton-Krylov run did: RMS residual per iterate (starting with
/// u0), evaluation count, the equivalent simulated time, and the last
/// iterate.
#[derive(Clone, Debug)]
pub struct SolverReport {
    pub residual_norms: Vec<f64>,
    /// Cumulative residual evaluations at the time each norm was recorded.
    pub evals_by_iteration: Vec<usize>,
    pub evaluations: usize,
    pub sim_time: f64,
    pub converged: bool,
    pub final_iterate: Vec<f64>,
}

impl SolverReport {
    pub fn iterations(&self) -> usize {
        self.residual_norms.len().saturating_sub(1)
    }

    pub fn final_residual(&self) -> f64 {
        *self.residual_norms.last().expect("report always holds the initial residual")
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,residual,evals")?;
        for (i, (r, e)) in self.residual_norms.iter().zip(&self.evals_by_iteration).enumerate() {
            writeln!(w, "{i},{r},{e}")?;
        }
        Ok(())
    }
}

/// Plain inexact Newton: u_{k+1} = u_k + s_k where GMRES solves the
/// finite-difference Jacobian system to relative tolerance eta with right
/// hand side -psi(u_k). No line search. Stops on the absolute RMS residual,
/// the iteration cap, or the evaluation budget; a non-finite residual
/// mid-run aborts with the partial report.
pub fn newton_krylov(map: &mut dyn ResidualMap, u0: &[f64], opts: &NewtonKrylovOptions) -> Result<SolverReport> {
    opts.validate()?;
    let n = map.dim();
    if u0.len() != n {
        return Err(invalid("initial iterate length does not match the residual dimension"));
    }
    let eps = opts.eps.unwrap_or_else(|| map.recommended_eps());
    let mut u = u0.to_vec();
    let mut psi = vec![0.0f64; n];
    map.eval(&u, &mut psi)?;
    let mut evals = 1usize;
    if !all_finite(&psi) {
        return Err(Error::Evaluation("residual is not finite at the initial iterate".into()));
    }
    let mut norms = vec![rms(&psi)];
    let mut evals_by_iter = vec![evals];
    let mut converged = norms[0] <= opts.stop;
    while !converged && norms.len() <= opts.max_iters && evals < opts.eval_budget {
        let b: Vec<f64> = psi.iter().map(|p| -p).collect();
        let budget_left = opts.eval_budget - evals;
        let outcome = {
            let mut jvp_evals = 0usize;
            let res = gmres(
                |v: &[f64], out: &mut [f64]| {
                    jvp_evals += 1;
                    fd_jvp(map, &u, &psi, v, eps, out)
                },
                &b,
                opts.eta,
                opts.restart,
                budget_left,
            );
            evals += jvp_evals;
            res
        };
        let step = match outcome {
            Ok(o) => o.x,
            Err(Error::Evaluation(msg)) => {
                log::error!("aborting Newton loop: {msg}");
                break;
            }
            Err(e) => return Err(e),
        };
        if evals >= opts.eval_budget {
            // the step's residual can no longer be evaluated; keep the last
            // assessed iterate instead of an unmeasured one
            break;
        }
        for (ui, si) in u.iter_mut().zip(&step) {
            *ui += si;
        }
        map.eval(&u, &mut psi)?;
        evals += 1;
        if !all_finite(&psi) {
            log::error!("aborting Newton loop: residual is not finite at the new iterate");
            break;
        }
        let r = rms(&psi);
        norms.push(r);
        evals_by_iter.push(evals);
        converged = r <= opts.stop;
    }
    Ok(SolverReport {
        residual_norms: norms,
        evals_by_iteration: evals_by_iter,
        evaluations: evals,
        sim_time: evals as f64 * opts.horizon,
        converged,
        final_iterate: u,
    })
}

/// Default signal-to-noise factor for [`min_horizon`] (demand a ratio of at
/// least 10 between the slow mode and the rest).
pub const DEFAULT_ETA_SNR: f64 = 0.1;

/// Smallest coarse horizon that damps the second-slowest linear mode to
/// eta_snr relative to the slowest: h = ln(eta_snr) / (lambda2 - lambda1)
/// for real parts lambda2 < lambda1 < 0. eta_snr = 1 demands nothing and
/// gives 0.
pub fn min_horizon(lambda1: f64, lambda2: f64, eta_snr: f64) -> Result<f64> {
    if !(lambda2 < lambda1 && lambda1 < 0.0) {
        return Err(invalid("need lambda2 < lambda1 < 0"));
    }
    if !(eta_snr > 0.0 && eta_snr <= 1.0) {
        return Err(invalid("eta_snr must lie in (0, 1]"));
    }
    Ok(eta_snr.ln() / (lambda2 - lambda1))
}

struct DiagResidual {
    /// Multipliers e^(h lambda_i) of the exact flow; psi(u) = u - flow(u).
    decay: Vec<f64>,
    residual_form: bool,
}

impl ResidualMap for DiagResidual {
    fn dim(&self) -> usize {
        self.decay.len()
    }

    fn eval(&mut self, u: &[f64], out: &mut [f64]) -> Result<()> {
        for i in 0..u.len() {
            out[i] = if self.residual_form { u[i] - self.decay[i] * u[i] } else { self.decay[i] * u[i] };
        }
        Ok(())
    }
}

fn diag_spectrum_deviation(lambdas: &[f64], h: f64, eps: f64, residual_form: bool) -> Result<f64> {
    if lambdas.is_empty() {
        return Err(invalid("need at least one eigenvalue"));
    }
    if !(h >= 0.0 && h.is_finite()) {
        return Err(invalid("horizon must be nonnegative"));
    }
    let n = lambdas.len();
    let mut map = DiagResidual { decay: lambdas.iter().map(|l| (h * l).exp()).collect(), residual_form };
    let u = vec![0.0f64; n];
    let mut base = vec![0.0f64; n];
    map.eval(&u, &mut base)?;
    let mut out = vec![0.0f64; n];
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut v = vec![0.0f64; n];
        v[i] = 1.0;
        fd_jvp(&mut map, &u, &base, &v, eps, &mut out)?;
        let expected = if residual_form { 1.0 - (h * lambdas[i]).exp() } else { (h * lambdas[i]).exp() };
        worst = worst.max((out[i] - expected).abs());
    }
    Ok(worst)
}

/// Builds the residual u - flow_h(u) of the exact linear flow
/// du/dt = diag(lambda) u, estimates the Jacobian eigenvalues by
/// finite-difference JVPs on basis vectors, and returns the largest absolute
/// deviation from 1 - e^(h lambda_i).
pub fn residual_spectrum_check(lambdas: &[f64], h: f64, eps: f64) -> Result<f64> {
    diag_spectrum_deviation(lambdas, h, eps, true)
}

/// Same estimate for the flow map itself, whose eigenvalues are e^(h
/// lambda_i). Together with [`residual_spectrum_check`] this pins down both
/// sides of the relation mu(residual) = 1 - mu(flow).
pub fn flow_spectrum_check(lambdas: &[f64], h: f64, eps: f64) -> Result<f64> {
    diag_spectrum_deviation(lambdas, h, eps, false)
}
