//! 2D CDF-to-CDF smoother. Sampling follows the Knothe-Rosenblatt
//! rearrangement: invert the x-marginal at midpoint percentiles, then invert
//! the conditional y-CDF of the containing cell at midpoint percentiles,
//! giving a deterministic n_x by n_y point set. One coarse step propagates
//! that set and re-bins the joint CDF on the same grid.

use crate::error::{invalid, Error, Result};
use crate::krylov::{recommend_eps, ResidualMap};
use crate::measures::{bin_cdf2, conditional_cdf_y_at_cell, invert_monotone, marginal_cdf_x, Cdf2Grid};
use crate::models::{RngStream, SdeModel, StepperConfig};

use super::{all_finite, nearest_valid, propagate_points};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Degenerate {
    /// Drop the affected column and renormalize the particle count.
    Skip,
    /// Substitute the nearest valid column's conditional, keeping the
    /// particle count fixed (what the Newton-Krylov residual needs).
    Reconstruct,
}

/// Marginal along x, made monotone and clamped so inversion stays meaningful
/// on mildly invalid Newton iterates; a no-op for valid grids.
fn repaired_marginal(cdf: &Cdf2Grid) -> Result<Vec<f64>> {
    let mut m = marginal_cdf_x(cdf)?;
    let mut run: f64 = 0.0;
    for v in m.iter_mut() {
        run = run.max(v.clamp(0.0, 1.0));
        *v = run;
    }
    Ok(m)
}

pub(crate) fn sample_with(cdf: &Cdf2Grid, n_x: usize, n_y: usize, policy: Degenerate) -> Result<Vec<[f64; 2]>> {
    if n_x == 0 || n_y == 0 {
        return Err(invalid("need positive sample counts per axis"));
    }
    let nx = cdf.nx();
    let marg = repaired_marginal(cdf)?;
    let guard = 1e-8 / cdf.source_n() as f64;
    // column validity from the top row alone; cheap enough to precompute
    let ny = cdf.ny();
    let valid: Vec<bool> = (0..nx - 1).map(|c| cdf.at(c + 1, ny - 1) - cdf.at(c, ny - 1) > guard).collect();
    let mut cond_cache: Vec<Option<Vec<f64>>> = vec![None; nx - 1];
    let mut pts = Vec::with_capacity(n_x * n_y);
    let mut skipped = 0usize;
    for i in 0..n_x {
        let p = (i as f64 + 0.5) / n_x as f64;
        let x = invert_monotone(cdf.xgrid(), &marg, p)?;
        let cell = cdf.xgrid().partition_point(|&g| g <= x).clamp(1, nx - 1) - 1;
        let use_cell = if valid[cell] {
            Some(cell)
        } else {
            match policy {
                Degenerate::Skip => {
                    skipped += 1;
                    None
                }
                Degenerate::Reconstruct => nearest_valid(&valid, cell),
            }
        };
        let Some(c) = use_cell else { continue };
        if cond_cache[c].is_none() {
            cond_cache[c] = Some(conditional_cdf_y_at_cell(cdf, c)?);
        }
        let cond = cond_cache[c].as_ref().expect("filled above");
        for j in 0..n_y {
            let q = (j as f64 + 0.5) / n_y as f64;
            let y = invert_monotone(cdf.ygrid(), cond, q)?;
            pts.push([x, y]);
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} of {n_x} marginal columns carried no conditional mass; sample renormalized to {} particles", pts.len());
    }
    if pts.is_empty() {
        return Err(Error::Evaluation("every marginal column is degenerate; nothing to sample".into()));
    }
    Ok(pts)
}

/// Deterministic Knothe-Rosenblatt sample of a joint CDF: n_x marginal
/// inversions times n_y conditional inversions, all at midpoint
/// percentiles. Columns without conditional mass are skipped with a warning
/// and the particle count shrinks accordingly.
pub fn cdf2_sample(cdf: &Cdf2Grid, n_x: usize, n_y: usize) -> Result<crate::measures::ParticleEnsemble> {
    let pts = sample_with(cdf, n_x, n_y, Degenerate::Skip)?;
    crate::measures::ParticleEnsemble::from_2d(pts)
}

fn check_2d(model: &SdeModel) -> Result<()> {
    if model.dim() != 2 {
        return Err(invalid("the CDF smoother needs a two-dimensional model"));
    }
    Ok(())
}

/// One coarse step of the distribution in joint-CDF form: sample, propagate,
/// re-bin on the same grid.
pub fn cdf2_timestepper(
    cdf: &Cdf2Grid,
    model: &SdeModel,
    cfg: &StepperConfig,
    n_x: usize,
    n_y: usize,
    stream: &mut RngStream,
) -> Result<Cdf2Grid> {
    check_2d(model)?;
    let mut pts = sample_with(cdf, n_x, n_y, Degenerate::Skip)?;
    propagate_points(&mut pts, model, cfg, stream)?;
    let mut values = vec![0.0f64; cdf.nx() * cdf.ny()];
    bin_cdf2(&pts, cdf.xgrid(), cdf.ygrid(), &mut values);
    Cdf2Grid::new(cdf.xgrid().to_vec(), cdf.ygrid().to_vec(), values, pts.len())
}

/// Residual of one coarse step, flattened row-major over grid nodes.
/// Degenerate columns are reconstructed from their nearest valid neighbor so
/// the length is always n_X times n_Y.
pub fn cdf2_residual(
    cdf: &Cdf2Grid,
    model: &SdeModel,
    cfg: &StepperConfig,
    n_x: usize,
    n_y: usize,
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    check_2d(model)?;
    let mut pts = sample_with(cdf, n_x, n_y, Degenerate::Reconstruct)?;
    propagate_points(&mut pts, model, cfg, stream)?;
    let mut values = vec![0.0f64; cdf.nx() * cdf.ny()];
    bin_cdf2(&pts, cdf.xgrid(), cdf.ygrid(), &mut values);
    Ok(cdf.values().iter().zip(&values).map(|(u, s)| u - s).collect())
}

/// The joint-CDF residual packaged for Newton-Krylov: state vectors are F
/// values on the fixed grid, row-major.
pub struct Cdf2Residual {
    model: SdeModel,
    cfg: StepperConfig,
    xgrid: Vec<f64>,
    ygrid: Vec<f64>,
    n_x: usize,
    n_y: usize,
    stream: RngStream,
}

impl Cdf2Residual {
    pub fn new(model: SdeModel, cfg: StepperConfig, xgrid: Vec<f64>, ygrid: Vec<f64>, n_x: usize, n_y: usize) -> Result<Self> {
        check_2d(&model)?;
        if xgrid.len() < 2 || ygrid.len() < 2 {
            return Err(invalid("need at least a 2x2 grid"));
        }
        if n_x == 0 || n_y == 0 {
            return Err(invalid("need positive sample counts per axis"));
        }
        let stream = RngStream::new(cfg.seed);
        Ok(Cdf2Residual { model, cfg, xgrid, ygrid, n_x, n_y, stream })
    }

    pub fn particle_count(&self) -> usize {
        self.n_x * self.n_y
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.xgrid.len(), self.ygrid.len())
    }

    /// Wraps a flat state vector back into a (repair-free) grid view.
    pub fn grid_from(&self, u: &[f64]) -> Result<Cdf2Grid> {
        if u.len() != self.dim() {
            return Err(invalid("state length does not match the grid"));
        }
        Ok(Cdf2Grid::new_unchecked(self.xgrid.clone(), self.ygrid.clone(), u.to_vec(), self.particle_count()))
    }
}

impl ResidualMap for Cdf2Residual {
    fn dim(&self) -> usize {
        self.xgrid.len() * self.ygrid.len()
    }

    fn eval(&mut self, u: &[f64], out: &mut [f64]) -> Result<()> {
        if u.len() != self.dim() || out.len() != self.dim() {
            return Err(invalid("state length does not match the grid"));
        }
        if !all_finite(u) {
            return Err(Error::Evaluation("CDF values are not finite".into()));
        }
        let grid = Cdf2Grid::new_unchecked(self.xgrid.clone(), self.ygrid.clone(), u.to_vec(), self.particle_count());
        let mut pts = sample_with(&grid, self.n_x, self.n_y, Degenerate::Reconstruct)?;
        propagate_points(&mut pts, &self.model, &self.cfg, &mut self.stream)?;
        let mut values = vec![0.0f64; u.len()];
        bin_cdf2(&pts, &self.xgrid, &self.ygrid, &mut values);
        for i in 0..u.len() {
            out[i] = u[i] - values[i];
        }
        Ok(())
    }

    fn noise_scale(&self) -> f64 {
        if self.model.diffusion() > 0.0 {
            // binomial noise of an empirical CDF value at worst-case p = 1/2
            0.5 / (self.particle_count() as f64).sqrt()
        } else {
            0.0
        }
    }

    fn recommended_eps(&self) -> f64 {
        recommend_eps(self.noise_scale(), self.particle_count())
    }
}
