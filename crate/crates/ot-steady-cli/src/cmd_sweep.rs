//! The `eps-sweep` subcommand: accuracy of the finite-difference JVP across
//! a list of step sizes, against an analytic Jacobian for the synthetic
//! targets or an averaged JVP for the stochastic one. Deterministic targets
//! show a monotone truncation ramp; noisy ones a U curve whose bottom sits
//! near the quarter-power of the sample count.

use crate::config::{preset_entries, CommonArgs, Settings};
use crate::output::{self, start_params};
use crate::{Failure, EXIT_OK};
use ot_steady::krylov::{fd_jvp, recommend_eps, rms, ResidualMap};
use ot_steady::models::{gaussian, icdf_from_density, StepperConfig};
use ot_steady::smoothers::IcdfResidual;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use std::io::Write;

// Small on purpose: the one-sided FD truncation term scales like 1/dim for
// this map, and a large dim would push the noisy target's best step a full
// decade above the quarter-power rule it is meant to illustrate.
const SYNTH_DIM: usize = 4;
const REF_REPEATS: usize = 100;

#[derive(clap::Args)]
pub(crate) struct SweepArgs {
    /// quadratic (deterministic), noisy (quadratic plus Gaussian noise), or
    /// icdf (a real stochastic timestepper residual)
    #[arg(long)]
    target: Option<String>,
    /// Comma-separated step sizes, e.g. 1e-6,1e-4,1e-2
    #[arg(long)]
    eps_list: Option<String>,
    /// Independent JVP draws per step size
    #[arg(long)]
    repeats: Option<usize>,
    /// Sample count: sets the noise scale 1/sqrt(n) of the noisy target and
    /// the particle count of the icdf target
    #[arg(long)]
    n: Option<usize>,
    /// 1D model for the icdf target
    #[arg(long)]
    model: Option<String>,
    /// Percentile nodes for the icdf target
    #[arg(long)]
    k: Option<usize>,
    /// Coarse horizon for the icdf target
    #[arg(long)]
    h: Option<f64>,
    /// Inner Euler-Maruyama step for the icdf target
    #[arg(long)]
    dt: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

struct Quadratic;

impl ResidualMap for Quadratic {
    fn dim(&self) -> usize {
        SYNTH_DIM
    }

    fn eval(&mut self, u: &[f64], out: &mut [f64]) -> ot_steady::error::Result<()> {
        for (o, &x) in out.iter_mut().zip(u) {
            *o = x + x * x;
        }
        Ok(())
    }
}

struct NoisyQuadratic {
    sigma: f64,
    n: usize,
    rng: StdRng,
}

impl ResidualMap for NoisyQuadratic {
    fn dim(&self) -> usize {
        SYNTH_DIM
    }

    fn eval(&mut self, u: &[f64], out: &mut [f64]) -> ot_steady::error::Result<()> {
        for (o, &x) in out.iter_mut().zip(u) {
            let xi: f64 = self.rng.sample(StandardNormal);
            *o = x + x * x + self.sigma * xi;
        }
        Ok(())
    }

    fn noise_scale(&self) -> f64 {
        self.sigma
    }

    fn recommended_eps(&self) -> f64 {
        recommend_eps(self.sigma, self.n)
    }
}

/// Ramp through (0.3, 0.7) so the quadratic term has visible curvature.
fn synth_state() -> (Vec<f64>, Vec<f64>) {
    let u0 = (0..SYNTH_DIM).map(|i| 0.3 + 0.4 * i as f64 / (SYNTH_DIM - 1) as f64).collect();
    let v = (0..SYNTH_DIM).map(|i| 1.0 + 0.5 * (i as f64).sin()).collect();
    (u0, v)
}

fn synth_reference(u0: &[f64], v: &[f64]) -> Vec<f64> {
    u0.iter().zip(v).map(|(&x, &d)| (1.0 + 2.0 * x) * d).collect()
}

pub(crate) fn run(args: SweepArgs) -> Result<u8, Failure> {
    let preset = preset_entries(&args.common.preset, &[])?;
    let mut s = Settings::new("eps-sweep", args.common.config.as_deref(), preset)?;
    let target: String = s.get("target", args.target, "quadratic".to_string())?;
    let eps_raw: String = s.get("eps_list", args.eps_list, "1e-6,1e-5,1e-4,1e-3,1e-2,1e-1".to_string())?;
    let repeats = s.get("repeats", args.repeats, 10)?;
    let seed = s.get("seed", args.common.seed, 0)?;

    let eps_list = parse_eps_list(&eps_raw)?;
    if eps_list.len() < 2 {
        return Err(Failure::Run("need at least two eps values".to_string()));
    }
    if repeats < 2 {
        return Err(Failure::Run("repeats must be at least 2".to_string()));
    }

    let (mut map, u0, v, reference): (Box<dyn ResidualMap>, Vec<f64>, Vec<f64>, Vec<f64>) = match target.as_str() {
        "quadratic" => {
            let (u0, v) = synth_state();
            let reference = synth_reference(&u0, &v);
            (Box::new(Quadratic), u0, v, reference)
        }
        "noisy" => {
            let n = s.get("n", args.n, 10_000)?;
            if n == 0 {
                return Err(Failure::Run("sample count must be positive".to_string()));
            }
            let (u0, v) = synth_state();
            let reference = synth_reference(&u0, &v);
            let map = NoisyQuadratic { sigma: 1.0 / (n as f64).sqrt(), n, rng: StdRng::seed_from_u64(seed) };
            (Box::new(map), u0, v, reference)
        }
        "icdf" => {
            let model_name: String = s.get("model", args.model, "doublewell".to_string())?;
            let model = output::model_by_name(&model_name, &["chemotaxis", "doublewell"])?;
            let k = s.get("k", args.k, 100)?;
            let n = s.get("n", args.n, 10_000)?;
            let h = s.get("h", args.h, 0.1)?;
            let dt = s.get("dt", args.dt, 0.01)?;
            let cfg = StepperConfig::new(dt, h, seed)?;
            let mut residual = IcdfResidual::new(model.clone(), cfg, k, n)?;
            let (mean, sd) = start_params(&model);
            let (lo, hi) = model.domain_1d();
            let u0 = icdf_from_density(gaussian(mean, sd), lo, hi, 4096, k)?.into_values();
            // direction vanishing at the tails, where the curve is stiffest
            let grid = ot_steady::measures::PercentileGrid::new(k)?;
            let v: Vec<f64> = (0..k).map(|i| 4.0 * grid.p(i) * (1.0 - grid.p(i))).collect();
            let reference = averaged_reference(&mut residual, &u0, &v)?;
            (Box::new(residual), u0, v, reference)
        }
        other => {
            return Err(Failure::Usage(format!("unknown target '{other}' (expected quadratic, noisy, or icdf)")));
        }
    };
    let resolved = s.finish()?;

    let dim = map.dim();
    let mut base = vec![0.0; dim];
    map.eval(&u0, &mut base)?;
    let mut rows = Vec::with_capacity(eps_list.len());
    let mut jvp = vec![0.0; dim];
    let mut diff = vec![0.0; dim];
    for &eps in &eps_list {
        let mut errs = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            fd_jvp(&mut *map, &u0, &base, &v, eps, &mut jvp)?;
            for i in 0..dim {
                diff[i] = jvp[i] - reference[i];
            }
            errs.push(rms(&diff));
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (errs.len() - 1) as f64;
        rows.push((eps, mean, var.sqrt()));
    }

    let out = &args.common.out;
    output::write_manifest(out, &resolved)?;
    let mut w = output::create(out, "sweep.csv")?;
    writeln!(w, "eps,err_mean,err_std")?;
    for (eps, mean, std) in &rows {
        writeln!(w, "{},{},{}", eps, mean, std)?;
    }
    w.flush()?;

    let best = rows.iter().min_by(|a, b| a.1.total_cmp(&b.1)).expect("eps list is nonempty");
    println!("eps-sweep: target={} best_eps={:e} err_mean={:e} repeats={}", target, best.0, best.1, repeats);
    Ok(EXIT_OK)
}

/// Estimate of the true Jacobian action of a stochastic residual: JVPs at
/// the recommended step averaged over independent draws, each with a fresh
/// base so its noise washes out too.
fn averaged_reference(map: &mut IcdfResidual, u0: &[f64], v: &[f64]) -> Result<Vec<f64>, Failure> {
    let eps_ref = map.recommended_eps();
    let dim = map.dim();
    let mut base = vec![0.0; dim];
    let mut jvp = vec![0.0; dim];
    let mut acc = vec![0.0; dim];
    for _ in 0..REF_REPEATS {
        map.eval(u0, &mut base)?;
        fd_jvp(map, u0, &base, v, eps_ref, &mut jvp)?;
        for i in 0..dim {
            acc[i] += jvp[i];
        }
    }
    for a in acc.iter_mut() {
        *a /= REF_REPEATS as f64;
    }
    Ok(acc)
}

fn parse_eps_list(raw: &str) -> Result<Vec<f64>, Failure> {
    let mut out = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let eps: f64 = part
            .parse()
            .map_err(|_| Failure::Usage(format!("eps_list: cannot parse '{part}'")))?;
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Failure::Run(format!("eps values must be positive and finite, got {eps}")));
        }
        out.push(eps);
    }
    Ok(out)
}
