//! The `oracle` subcommand: analytic steady-state references for models
//! whose stationary density is known in closed form.

use crate::config::Settings;
use crate::output;
use crate::{Failure, EXIT_OK};
use ot_steady::measures::{write_cdf2_csv, write_icdf_csv};
use std::io::Write;
use std::path::PathBuf;

#[derive(clap::Args)]
pub(crate) struct OracleArgs {
    /// chemotaxis, doublewell, or halfmoon
    #[arg(long)]
    model: Option<String>,
    /// Percentile nodes of the 1D inverse-CDF reference
    #[arg(long)]
    k: Option<usize>,
    /// Density grid nodes per axis
    #[arg(long)]
    nodes: Option<usize>,
    /// Flat `key = value` config file, overridden by explicit flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for CSV outputs and the run manifest
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

pub(crate) fn run(args: OracleArgs) -> Result<u8, Failure> {
    let mut s = Settings::new("oracle", args.config.as_deref(), &[])?;
    let model_name: String = s.get_required("model", args.model)?;
    let model = output::model_by_name(&model_name, &["chemotaxis", "doublewell", "halfmoon"])?;
    let k = s.get("k", args.k, 1000)?;
    let default_nodes = if model.dim() == 1 { 1001 } else { 101 };
    let nodes = s.get("nodes", args.nodes, default_nodes)?;
    let resolved = s.finish()?;

    let out = &args.out;
    output::write_manifest(out, &resolved)?;
    if model.dim() == 1 {
        let (lo, hi) = model.domain_1d();
        let xs = output::grid(lo, hi, nodes);
        let mut w = output::create(out, "density.csv")?;
        writeln!(w, "x,density")?;
        for &x in &xs {
            writeln!(w, "{},{}", x, model.analytic_density_1d(x)?)?;
        }
        w.flush()?;
        let curve = model.analytic_icdf(k)?;
        let mut w = output::create(out, "icdf.csv")?;
        write_icdf_csv(&mut w, &curve)?;
        w.flush()?;
    } else {
        let (lo0, hi0) = model.domain(0);
        let (lo1, hi1) = model.domain(1);
        let xs = output::grid(lo0, hi0, nodes);
        let ys = output::grid(lo1, hi1, nodes);
        let mut w = output::create(out, "density.csv")?;
        writeln!(w, "x,y,density")?;
        for &x in &xs {
            for &y in &ys {
                writeln!(w, "{},{},{}", x, y, model.analytic_density_2d(x, y)?)?;
            }
        }
        w.flush()?;
        let cdf = model.analytic_cdf2(&xs, &ys)?;
        let mut w = output::create(out, "cdf.csv")?;
        write_cdf2_csv(&mut w, &cdf)?;
        w.flush()?;
    }
    println!("oracle: model={} dim={} nodes={}", model_name, model.dim(), nodes);
    Ok(EXIT_OK)
}
