//! The `wadam` subcommand: Wasserstein gradient descent with Adam on a raw
//! particle ensemble, from a truncated-Gaussian start.

use crate::config::{preset_entries, CommonArgs, Settings};
use crate::output::{self, start_params};
use crate::{Failure, EXIT_OK};
use ot_steady::measures::ParticleEnsemble;
use ot_steady::models::{gaussian, samples_from_density, RngStream, SdeModel, StepperConfig};
use ot_steady::wadam::{run_wasserstein_adam, AdamParams, LrSchedule, WadamOptions};
use std::io::Write;

/// The chemotaxis benchmark run: 1e5 particles, 300 epochs, learning rate
/// 1e-1 decades down every 100 epochs, exact 1D couplings.
const PAPER: &[(&str, &str)] = &[
    ("model", "chemotaxis"),
    ("n", "100000"),
    ("epochs", "300"),
    ("lr", "0.1"),
    ("decay_factor", "10"),
    ("decay_every", "100"),
    ("h", "1"),
    ("dt", "0.01"),
];

#[derive(clap::Args)]
pub(crate) struct WadamArgs {
    /// chemotaxis, doublewell, or halfmoon
    #[arg(long)]
    model: Option<String>,
    /// Ensemble size (2D models round down to a square)
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Learning rate divisor applied every `decay-every` epochs
    #[arg(long)]
    decay_factor: Option<f64>,
    #[arg(long)]
    decay_every: Option<usize>,
    /// Block size for batched couplings; omit for the exact plan
    #[arg(long)]
    batch: Option<usize>,
    /// Propagations averaged into each epoch's gradient
    #[arg(long)]
    averaging: Option<usize>,
    /// Coarse horizon of one descent step
    #[arg(long)]
    h: Option<f64>,
    /// Inner Euler-Maruyama step
    #[arg(long)]
    dt: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

pub(crate) fn run(args: WadamArgs) -> Result<u8, Failure> {
    let preset = preset_entries(&args.common.preset, PAPER)?;
    let mut s = Settings::new("wadam", args.common.config.as_deref(), preset)?;
    let model_name: String = s.get_required("model", args.model)?;
    let model = output::model_by_name(&model_name, &["chemotaxis", "doublewell", "halfmoon"])?;
    let n = s.get("n", args.n, 10_000)?;
    let epochs = s.get("epochs", args.epochs, 100)?;
    let lr = s.get("lr", args.lr, 0.01)?;
    let decay_factor = s.get("decay_factor", args.decay_factor, 1.0)?;
    let decay_every = s.get("decay_every", args.decay_every, 100)?;
    let batch = s.get_optional("batch", args.batch)?;
    let averaging = s.get("averaging", args.averaging, 1)?;
    let h = s.get("h", args.h, 1.0)?;
    let dt = s.get("dt", args.dt, 0.01)?;
    let seed = s.get("seed", args.common.seed, 0)?;
    let resolved = s.finish()?;

    let cfg = StepperConfig::new(dt, h, seed)?;
    let x0 = initial_ensemble(&model, n)?;
    let schedule = LrSchedule::new(lr, decay_factor, decay_every)?;
    let mut opts = WadamOptions::new(epochs, AdamParams::new(schedule));
    opts.batch = batch;
    opts.averaging = averaging;
    let mut stream = RngStream::new(seed);
    let (ensemble, trace) = run_wasserstein_adam(&model, &cfg, &x0, &opts, &mut stream)?;

    let out = &args.common.out;
    output::write_manifest(out, &resolved)?;
    let mut w = output::create(out, "trace.csv")?;
    trace.write_csv(&mut w)?;
    w.flush()?;
    match model.dim() {
        1 => {
            let (lo, hi) = model.domain_1d();
            output::write_hist_1d(out, "hist.csv", &ensemble, lo, hi, 200)?;
        }
        _ => {
            let lo = [model.domain(0).0, model.domain(1).0];
            let hi = [model.domain(0).1, model.domain(1).1];
            output::write_hist_2d(out, "hist.csv", ensemble.as_2d()?, lo, hi, 64)?;
        }
    }

    let last = trace.records.last().expect("at least one epoch ran");
    println!(
        "wadam: model={} epochs={} final_loss={:e} grad_norm={:e} sim_time={}",
        model_name, epochs, last.loss, last.grad_norm, last.sim_time
    );
    Ok(EXIT_OK)
}

/// Truncated-Gaussian start: quantile midpoints in 1D, the product-quantile
/// lattice in 2D (so `n` is rounded down to a square).
fn initial_ensemble(model: &SdeModel, n: usize) -> Result<ParticleEnsemble, Failure> {
    let (mean, sd) = start_params(model);
    if model.dim() == 1 {
        let (lo, hi) = model.domain_1d();
        let xs = samples_from_density(gaussian(mean, sd), lo, hi, 4096, n)?;
        return Ok(ParticleEnsemble::from_1d(xs)?);
    }
    let side = (n as f64).sqrt().floor() as usize;
    if side * side != n {
        log::warn!("2d start uses {} particles, the largest square within {}", side * side, n);
    }
    let (lo0, hi0) = model.domain(0);
    let (lo1, hi1) = model.domain(1);
    let xs = samples_from_density(gaussian(mean, sd), lo0, hi0, 4096, side)?;
    let ys = samples_from_density(gaussian(mean, sd), lo1, hi1, 4096, side)?;
    let mut pts = Vec::with_capacity(side * side);
    for &x in &xs {
        for &y in &ys {
            pts.push([x, y]);
        }
    }
    Ok(ParticleEnsemble::from_2d(pts)?)
}
