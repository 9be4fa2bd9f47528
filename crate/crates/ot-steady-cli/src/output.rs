//! Output directory plumbing shared by the subcommands: the manifest, CSV
//! file handles, and the couple of helpers the library does not provide.

use crate::Failure;
use ot_steady::measures::ParticleEnsemble;
use ot_steady::models::SdeModel;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Resolved configuration, seed included, plus code versions. No
/// timestamps, so identical runs write identical manifests.
pub(crate) fn write_manifest(dir: &Path, resolved: &BTreeMap<String, String>) -> Result<(), Failure> {
    let mut all = resolved.clone();
    all.insert("cli_version".to_string(), env!("CARGO_PKG_VERSION").to_string());
    all.insert("lib_version".to_string(), ot_steady::VERSION.to_string());
    let mut text = String::new();
    for (k, v) in &all {
        text.push_str(k);
        text.push_str(" = ");
        text.push_str(v);
        text.push('\n');
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("manifest.txt"), text)?;
    Ok(())
}

pub(crate) fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub(crate) fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let step = (hi - lo) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|i| lo + i as f64 * step).collect();
    v[n - 1] = hi;
    v
}

pub(crate) fn write_hist_1d(dir: &Path, name: &str, ensemble: &ParticleEnsemble, lo: f64, hi: f64, bins: usize) -> Result<(), Failure> {
    let edges = grid(lo, hi, bins + 1);
    let counts = ot_steady::measures::histogram(ensemble, &edges)?;
    let mut w = create(dir, name)?;
    ot_steady::measures::write_histogram_csv(&mut w, &edges, &counts)?;
    w.flush()?;
    Ok(())
}

/// 2D counts on a `bins x bins` lattice, rows `x_center,y_center,count`.
/// Points are clamped into the box so boundary values land in edge bins.
pub(crate) fn write_hist_2d(dir: &Path, name: &str, pts: &[[f64; 2]], lo: [f64; 2], hi: [f64; 2], bins: usize) -> Result<(), Failure> {
    assert!(bins >= 1);
    let dx = (hi[0] - lo[0]) / bins as f64;
    let dy = (hi[1] - lo[1]) / bins as f64;
    let mut counts = vec![0u64; bins * bins];
    for p in pts {
        let ix = (((p[0] - lo[0]) / dx) as usize).min(bins - 1);
        let iy = (((p[1] - lo[1]) / dy) as usize).min(bins - 1);
        counts[ix * bins + iy] += 1;
    }
    let mut w = create(dir, name)?;
    writeln!(w, "x_center,y_center,count")?;
    for ix in 0..bins {
        let x = lo[0] + (ix as f64 + 0.5) * dx;
        for iy in 0..bins {
            let y = lo[1] + (iy as f64 + 0.5) * dy;
            writeln!(w, "{},{},{}", x, y, counts[ix * bins + iy])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Model lookup restricted to what a command supports; anything else is a
/// usage error so the exit code matches an unknown flag value.
pub(crate) fn model_by_name(name: &str, allowed: &[&str]) -> Result<SdeModel, Failure> {
    if !allowed.contains(&name) {
        return Err(Failure::Usage(format!("unknown model '{name}' (expected one of: {})", allowed.join(", "))));
    }
    Ok(match name {
        "chemotaxis" => SdeModel::chemotaxis(),
        "doublewell" => SdeModel::double_well(),
        "halfmoon" => SdeModel::half_moon(),
        other => unreachable!("model '{other}' passed the allow list"),
    })
}

/// Mean and standard deviation of the canonical truncated-Gaussian start
/// for a model: centered for the symmetric potentials, off-center for
/// chemotaxis so the descent has somewhere to go.
pub(crate) fn start_params(model: &SdeModel) -> (f64, f64) {
    match model.kind() {
        ot_steady::models::ModelKind::Chemotaxis => (5.0, 2.0),
        _ => (0.0, 1.0),
    }
}
