//! Smooth distribution-level timesteppers wrapping the particle models.
//!
//! Each smoother turns a compact representation (1D inverse CDF on a
//! percentile grid, 2D joint CDF on a rectangular grid) into particles,
//! propagates them one coarse step, and re-extracts the representation. The
//! residual u - step(u) of each is exposed as a [`crate::krylov::ResidualMap`]
//! so the Newton-Krylov solver can drive it to a steady state.
//!
//! Degenerate conditionals and rays (no mass to condition on) are skipped
//! with a warning by the public sampling operations; the residual wrappers
//! instead reconstruct them from the nearest valid neighbor so the residual
//! dimension never changes between evaluations.

mod cdf2;
mod icdf;
mod sliced;

pub use cdf2::{cdf2_residual, cdf2_sample, cdf2_timestepper, Cdf2Residual};
pub use icdf::{icdf_residual, icdf_timestepper, IcdfResidual};
pub use sliced::{
    angular_marginal_cdf, density_from_cdf2, radial_conditional_cdf, sliced_w2_sq, sw_sample, sw_timestepper,
    DensityGrid, PolarConfig, SwResidual,
};

/// Index of the valid entry nearest to i (ties prefer the left neighbor).
pub(crate) fn nearest_valid(valid: &[bool], i: usize) -> Option<usize> {
    if valid.get(i).copied().unwrap_or(false) {
        return Some(i);
    }
    for d in 1..valid.len() {
        if i >= d && valid[i - d] {
            return Some(i - d);
        }
        if i + d < valid.len() && valid[i + d] {
            return Some(i + d);
        }
    }
    None
}

pub(crate) fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Reflect freshly sampled points into the model box, then run the coarse
/// step. Sampling grids may poke slightly outside the domain; reflection
/// makes the propagation precondition unconditional.
pub(crate) fn propagate_points(
    pts: &mut [[f64; 2]],
    model: &crate::models::SdeModel,
    cfg: &crate::models::StepperConfig,
    stream: &mut crate::models::RngStream,
) -> crate::error::Result<()> {
    let (lo0, hi0) = model.domain(0);
    let (lo1, hi1) = model.domain(1);
    for p in pts.iter_mut() {
        p[0] = crate::models::reflect(p[0], lo0, hi0);
        p[1] = crate::models::reflect(p[1], lo1, hi1);
    }
    crate::models::propagate_raw_2d(pts, model, cfg, stream)
}
