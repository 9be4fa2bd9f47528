//! Sliced (polar) smoother. The joint CDF is differentiated into a cell
//! density, integrated in polar coordinates into an angular marginal CDF and
//! per-angle radial conditional CDFs, and sampled by inverting both at
//! midpoint percentiles. Also hosts the sliced squared Wasserstein distance
//! used to compare 2D ensembles through 1D projections.

use std::f64::consts::TAU;

use crate::error::{invalid, Error, Result};
use crate::krylov::{recommend_eps, ResidualMap};
use crate::measures::{bin_cdf2, interp_clamped, invert_monotone, Cdf2Grid, ParticleEnsemble};
use crate::models::{linspace, RngStream, SdeModel, StepperConfig};

use super::{all_finite, nearest_valid, propagate_points};
use super::cdf2::Degenerate;

/// Polar quadrature resolution: radial nodes per ray and angular table
/// resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolarConfig {
    pub n_r: usize,
    pub n_phi: usize,
}

impl Default for PolarConfig {
    fn default() -> Self {
        PolarConfig { n_r: 256, n_phi: 512 }
    }
}

impl PolarConfig {
    fn validate(&self) -> Result<()> {
        if self.n_r < 2 || self.n_phi < 4 {
            return Err(invalid("polar quadrature needs at least 2 radial and 4 angular nodes"));
        }
        Ok(())
    }
}

/// Piecewise-constant cell density derived from a joint CDF by mixed second
/// differences, clamped at zero. Lookups interpolate bilinearly between
/// cell centers and vanish outside the grid box.
#[derive(Clone, Debug)]
pub struct DensityGrid {
    xgrid: Vec<f64>,
    ygrid: Vec<f64>,
    xcenters: Vec<f64>,
    ycenters: Vec<f64>,
    /// Cell densities, row-major (nxc * nyc).
    values: Vec<f64>,
}

impl DensityGrid {
    /// Cells per axis.
    pub fn shape(&self) -> (usize, usize) {
        (self.xcenters.len(), self.ycenters.len())
    }

    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[ix * self.ycenters.len() + iy]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [self.xcenters[ix], self.ycenters[iy]]
    }

    fn cell_area(&self, ix: usize, iy: usize) -> f64 {
        (self.xgrid[ix + 1] - self.xgrid[ix]) * (self.ygrid[iy + 1] - self.ygrid[iy])
    }

    /// Total mass; telescopes to the CDF's top corner when no clamping was
    /// needed.
    pub fn total_mass(&self) -> f64 {
        let nyc = self.ycenters.len();
        self.values
            .iter()
            .enumerate()
            .map(|(idx, &d)| d * self.cell_area(idx / nyc, idx % nyc))
            .sum()
    }

    /// Half-diagonal of the grid box, the radial extent of any ray from the
    /// center.
    pub fn half_diagonal(&self) -> f64 {
        let w = self.xgrid[self.xgrid.len() - 1] - self.xgrid[0];
        let h = self.ygrid[self.ygrid.len() - 1] - self.ygrid[0];
        0.5 * (w * w + h * h).sqrt()
    }

    /// Center of the grid box, the pole of the polar parametrization.
    pub fn box_center(&self) -> [f64; 2] {
        [
            0.5 * (self.xgrid[0] + self.xgrid[self.xgrid.len() - 1]),
            0.5 * (self.ygrid[0] + self.ygrid[self.ygrid.len() - 1]),
        ]
    }

    fn axis_segment(centers: &[f64], x: f64) -> (usize, f64) {
        if centers.len() == 1 {
            return (0, 0.0);
        }
        let j = centers.partition_point(|&c| c <= x).clamp(1, centers.len() - 1);
        let seg = j - 1;
        let t = ((x - centers[seg]) / (centers[seg + 1] - centers[seg])).clamp(0.0, 1.0);
        (seg, t)
    }

    /// Bilinear density at (x, y): zero outside the grid box, clamped onto
    /// the center lattice inside it.
    pub fn lookup(&self, x: f64, y: f64) -> f64 {
        let (x0, x1) = (self.xgrid[0], self.xgrid[self.xgrid.len() - 1]);
        let (y0, y1) = (self.ygrid[0], self.ygrid[self.ygrid.len() - 1]);
        if x < x0 || x > x1 || y < y0 || y > y1 {
            return 0.0;
        }
        let (sx, tx) = Self::axis_segment(&self.xcenters, x);
        let (sy, ty) = Self::axis_segment(&self.ycenters, y);
        let nyc = self.ycenters.len();
        let at = |ix: usize, iy: usize| self.values[ix * nyc + iy];
        let (sx1, sy1) = ((sx + 1).min(self.xcenters.len() - 1), (sy + 1).min(nyc - 1));
        (1.0 - tx) * ((1.0 - ty) * at(sx, sy) + ty * at(sx, sy1)) + tx * ((1.0 - ty) * at(sx1, sy) + ty * at(sx1, sy1))
    }
}

/// Differentiates a joint CDF into its cell density: the mixed second
/// difference per cell over the cell area, clamped at zero.
pub fn density_from_cdf2(cdf: &Cdf2Grid) -> DensityGrid {
    let nx = cdf.nx();
    let ny = cdf.ny();
    let xgrid = cdf.xgrid().to_vec();
    let ygrid = cdf.ygrid().to_vec();
    let xcenters: Vec<f64> = xgrid.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let ycenters: Vec<f64> = ygrid.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mut values = vec![0.0f64; (nx - 1) * (ny - 1)];
    for ix in 0..nx - 1 {
        for iy in 0..ny - 1 {
            let mass = cdf.at(ix + 1, iy + 1) - cdf.at(ix + 1, iy) - cdf.at(ix, iy + 1) + cdf.at(ix, iy);
            let area = (xgrid[ix + 1] - xgrid[ix]) * (ygrid[iy + 1] - ygrid[iy]);
            values[ix * (ny - 1) + iy] = (mass / area).max(0.0);
        }
    }
    DensityGrid { xgrid, ygrid, xcenters, ycenters, values }
}

/// Mass along the ray at `theta` from the box center out to the
/// half-diagonal, by trapezoid quadrature of density times radius.
fn ray_mass_profile(dens: &DensityGrid, theta: f64, n_r: usize) -> (Vec<f64>, Vec<f64>) {
    let r_max = dens.half_diagonal();
    let pole = dens.box_center();
    let rs = linspace(0.0, r_max, n_r + 1);
    let (ct, st) = (theta.cos(), theta.sin());
    let g: Vec<f64> = rs.iter().map(|&r| dens.lookup(pole[0] + r * ct, pole[1] + r * st) * r).collect();
    let mut cum = Vec::with_capacity(rs.len());
    cum.push(0.0);
    let mut acc = 0.0;
    for i in 1..rs.len() {
        acc += 0.5 * (g[i - 1] + g[i]) * (rs[i] - rs[i - 1]);
        cum.push(acc);
    }
    (rs, cum)
}

/// Angular marginal CDF of the density around the box center, tabulated on
/// `n_nodes` uniform angles spanning [0, 2 pi] and normalized to end at 1.
pub fn angular_marginal_cdf(dens: &DensityGrid, n_nodes: usize, polar: &PolarConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    polar.validate()?;
    if n_nodes < 4 {
        return Err(invalid("need at least four angular nodes"));
    }
    let thetas = linspace(0.0, TAU, n_nodes);
    let masses: Vec<f64> = thetas.iter().map(|&t| *ray_mass_profile(dens, t, polar.n_r).1.last().expect("nonempty")).collect();
    let mut f = Vec::with_capacity(n_nodes);
    f.push(0.0);
    let mut acc = 0.0;
    for i in 1..n_nodes {
        acc += 0.5 * (masses[i - 1] + masses[i]) * (thetas[i] - thetas[i - 1]);
        f.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::Evaluation("density carries no mass; angular CDF is degenerate".into()));
    }
    for v in f.iter_mut() {
        *v /= acc;
    }
    f[n_nodes - 1] = 1.0;
    Ok((thetas, f))
}

/// Radial conditional CDF along the ray at `theta`, normalized by the mass
/// at the half-diagonal. Errors when the ray carries no mass.
pub fn radial_conditional_cdf(dens: &DensityGrid, theta: f64, polar: &PolarConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    polar.validate()?;
    let (rs, mut cum) = ray_mass_profile(dens, theta, polar.n_r);
    let total = *cum.last().expect("nonempty");
    if !(total > 0.0) {
        return Err(Error::Evaluation(format!("ray at angle {theta} carries no mass")));
    }
    for v in cum.iter_mut() {
        *v /= total;
    }
    let last = cum.len() - 1;
    cum[last] = 1.0;
    Ok((rs, cum))
}

/// Inverse of a piecewise-linear monotone table by bisection, to absolute
/// tolerance `tol` in the abscissa.
fn bisect_pl(xs: &[f64], ys: &[f64], target: f64, tol: f64) -> f64 {
    let mut lo = xs[0];
    let mut hi = xs[xs.len() - 1];
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if interp_clamped(xs, ys, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

const RADIAL_BISECT_TOL: f64 = 1e-8;

pub(crate) fn sw_sample_with(
    cdf: &Cdf2Grid,
    n_theta: usize,
    n_r: usize,
    polar: &PolarConfig,
    policy: Degenerate,
) -> Result<Vec<[f64; 2]>> {
    polar.validate()?;
    if n_theta == 0 || n_r == 0 {
        return Err(invalid("need positive angle and radius counts"));
    }
    let dens = density_from_cdf2(cdf);
    let (thetas, fth) = angular_marginal_cdf(&dens, polar.n_phi + 1, polar)?;
    let pole = dens.box_center();
    let r_max = dens.half_diagonal();
    let tol = RADIAL_BISECT_TOL * r_max;
    let mut angles = Vec::with_capacity(n_theta);
    for i in 0..n_theta {
        let p = (i as f64 + 0.5) / n_theta as f64;
        angles.push(invert_monotone(&thetas, &fth, p)?);
    }
    let mut tables: Vec<Option<(Vec<f64>, Vec<f64>)>> = Vec::with_capacity(n_theta);
    for &theta in &angles {
        match radial_conditional_cdf(&dens, theta, polar) {
            Ok(t) => tables.push(Some(t)),
            Err(Error::Evaluation(_)) => tables.push(None),
            Err(e) => return Err(e),
        }
    }
    let valid: Vec<bool> = tables.iter().map(Option::is_some).collect();
    let mut pts = Vec::with_capacity(n_theta * n_r);
    let mut skipped = 0usize;
    for (i, &theta) in angles.iter().enumerate() {
        let ti = if valid[i] {
            Some(i)
        } else {
            match policy {
                Degenerate::Skip => {
                    skipped += 1;
                    None
                }
                Degenerate::Reconstruct => nearest_valid(&valid, i),
            }
        };
        let Some(ti) = ti else { continue };
        let (rs, f) = tables[ti].as_ref().expect("validity checked");
        let (ct, st) = (theta.cos(), theta.sin());
        for j in 0..n_r {
            let q = (j as f64 + 0.5) / n_r as f64;
            let rho = bisect_pl(rs, f, q, tol);
            pts.push([pole[0] + rho * ct, pole[1] + rho * st]);
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} of {n_theta} rays carried no mass; sample renormalized to {} particles", pts.len());
    }
    if pts.is_empty() {
        return Err(Error::Evaluation("every ray is degenerate; nothing to sample".into()));
    }
    Ok(pts)
}

/// Deterministic polar sample of a joint CDF: angles from inverting the
/// angular marginal at midpoints, radii from inverting each ray's
/// conditional at midpoints. Rays without mass are skipped with a warning.
pub fn sw_sample(cdf: &Cdf2Grid, n_theta: usize, n_r: usize, polar: &PolarConfig) -> Result<ParticleEnsemble> {
    let pts = sw_sample_with(cdf, n_theta, n_r, polar, Degenerate::Skip)?;
    ParticleEnsemble::from_2d(pts)
}

fn check_2d(model: &SdeModel) -> Result<()> {
    if model.dim() != 2 {
        return Err(invalid("the sliced smoother needs a two-dimensional model"));
    }
    Ok(())
}

/// One coarse step of the distribution through the polar sampler: sample,
/// propagate, re-bin on the same grid.
pub fn sw_timestepper(
    cdf: &Cdf2Grid,
    model: &SdeModel,
    cfg: &StepperConfig,
    n_theta: usize,
    n_r: usize,
    polar: &PolarConfig,
    stream: &mut RngStream,
) -> Result<Cdf2Grid> {
    check_2d(model)?;
    let mut pts = sw_sample_with(cdf, n_theta, n_r, polar, Degenerate::Skip)?;
    propagate_points(&mut pts, model, cfg, stream)?;
    let mut values = vec![0.0f64; cdf.nx() * cdf.ny()];
    bin_cdf2(&pts, cdf.xgrid(), cdf.ygrid(), &mut values);
    Cdf2Grid::new(cdf.xgrid().to_vec(), cdf.ygrid().to_vec(), values, pts.len())
}

/// The polar-sampled residual packaged for Newton-Krylov; degenerate rays
/// are reconstructed from the nearest valid ray so the dimension stays
/// fixed.
pub struct SwResidual {
    model: SdeModel,
    cfg: StepperConfig,
    xgrid: Vec<f64>,
    ygrid: Vec<f64>,
    n_theta: usize,
    n_r: usize,
    polar: PolarConfig,
    stream: RngStream,
}

impl SwResidual {
    pub fn new(
        model: SdeModel,
        cfg: StepperConfig,
        xgrid: Vec<f64>,
        ygrid: Vec<f64>,
        n_theta: usize,
        n_r: usize,
        polar: PolarConfig,
    ) -> Result<Self> {
        check_2d(&model)?;
        polar.validate()?;
        if xgrid.len() < 2 || ygrid.len() < 2 {
            return Err(invalid("need at least a 2x2 grid"));
        }
        if n_theta == 0 || n_r == 0 {
            return Err(invalid("need positive angle and radius counts"));
        }
        let stream = RngStream::new(cfg.seed);
        Ok(SwResidual { model, cfg, xgrid, ygrid, n_theta, n_r, polar, stream })
    }

    pub fn particle_count(&self) -> usize {
        self.n_theta * self.n_r
    }

    /// Wraps a flat state vector back into a grid view.
    pub fn grid_from(&self, u: &[f64]) -> Result<Cdf2Grid> {
        if u.len() != self.dim() {
            return Err(invalid("state length does not match the grid"));
        }
        Ok(Cdf2Grid::new_unchecked(self.xgrid.clone(), self.ygrid.clone(), u.to_vec(), self.particle_count()))
    }
}

impl ResidualMap for SwResidual {
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
        let mut pts = sw_sample_with(&grid, self.n_theta, self.n_r, &self.polar, Degenerate::Reconstruct)?;
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
            0.5 / (self.particle_count() as f64).sqrt()
        } else {
            0.0
        }
    }

    fn recommended_eps(&self) -> f64 {
        recommend_eps(self.noise_scale(), self.particle_count())
    }
}

/// Mean over the given angles of the 1D squared Wasserstein distance
/// between the projections of X and Y onto (cos theta, sin theta). Lower
/// bounds the exact squared distance.
pub fn sliced_w2_sq(x: &[[f64; 2]], y: &[[f64; 2]], angles: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(invalid("particle counts differ"));
    }
    if x.is_empty() {
        return Err(invalid("empty ensembles"));
    }
    if angles.is_empty() {
        return Err(invalid("need at least one projection angle"));
    }
    let n = x.len();
    let mut px = vec![0.0f64; n];
    let mut py = vec![0.0f64; n];
    let mut acc = 0.0;
    for &theta in angles {
        let (ct, st) = (theta.cos(), theta.sin());
        for i in 0..n {
            px[i] = ct * x[i][0] + st * x[i][1];
            py[i] = ct * y[i][0] + st * y[i][1];
        }
        px.sort_unstable_by(f64::total_cmp);
        py.sort_unstable_by(f64::total_cmp);
        let w: f64 = px.iter().zip(&py).map(|(a, b)| (a - b) * (a - b)).sum();
        acc += w / n as f64;
    }
    Ok(acc / angles.len() as f64)
}
