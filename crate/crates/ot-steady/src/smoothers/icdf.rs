//! 1D ICDF-to-ICDF smoother: interpolate the inverse CDF at N midpoint
//! percentiles, propagate the resulting particles one coarse step, sort, and
//! re-extract K percentile values.

use crate::error::{invalid, Error, Result};
use crate::krylov::{recommend_eps, ResidualMap};
use crate::measures::{sample_icdf_values, subsample_sorted, MonotoneCurve, PercentileGrid};
use crate::models::{propagate_raw_1d, reflect, RngStream, SdeModel, StepperConfig};

use super::all_finite;

fn check_1d(model: &SdeModel) -> Result<()> {
    if model.dim() != 1 {
        return Err(invalid("the ICDF smoother needs a one-dimensional model"));
    }
    Ok(())
}

/// Core step on raw percentile values (monotonicity not required, so Newton
/// iterates can pass through): sample N particles, reflect into the domain,
/// propagate, sort, subsample K back out.
fn step_values(values: &[f64], model: &SdeModel, cfg: &StepperConfig, n: usize, stream: &mut RngStream, out: &mut Vec<f64>) -> Result<()> {
    let k = values.len();
    if n < k {
        return Err(invalid(format!("need at least as many particles ({n}) as percentiles ({k})")));
    }
    let (lo, hi) = model.domain_1d();
    let mut xs = Vec::new();
    sample_icdf_values(values, n, &mut xs);
    for x in xs.iter_mut() {
        *x = reflect(*x, lo, hi);
    }
    propagate_raw_1d(&mut xs, model, cfg, stream)?;
    xs.sort_unstable_by(f64::total_cmp);
    out.clear();
    out.extend_from_slice(&subsample_sorted(&xs, k));
    Ok(())
}

/// One coarse step of the distribution in ICDF form.
pub fn icdf_timestepper(
    curve: &MonotoneCurve,
    model: &SdeModel,
    cfg: &StepperConfig,
    n: usize,
    stream: &mut RngStream,
) -> Result<MonotoneCurve> {
    check_1d(model)?;
    let mut out = Vec::new();
    step_values(curve.values(), model, cfg, n, stream, &mut out)?;
    MonotoneCurve::new(PercentileGrid::new(curve.len())?, out)
}

/// Residual of one coarse step on the percentile grid: curve - step(curve).
/// Zero in expectation exactly at stationarity.
pub fn icdf_residual(
    curve: &MonotoneCurve,
    model: &SdeModel,
    cfg: &StepperConfig,
    n: usize,
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    check_1d(model)?;
    let mut stepped = Vec::new();
    step_values(curve.values(), model, cfg, n, stream, &mut stepped)?;
    Ok(curve.values().iter().zip(&stepped).map(|(u, s)| u - s).collect())
}

/// The same residual packaged for the Newton-Krylov solver; carries its own
/// noise stream so every evaluation sees fresh, independent noise.
pub struct IcdfResidual {
    model: SdeModel,
    cfg: StepperConfig,
    k: usize,
    n: usize,
    stream: RngStream,
    scratch: Vec<f64>,
}

impl IcdfResidual {
    pub fn new(model: SdeModel, cfg: StepperConfig, k: usize, n: usize) -> Result<Self> {
        check_1d(&model)?;
        if k < 2 {
            return Err(invalid("need at least two percentiles"));
        }
        if n < k {
            return Err(invalid("need at least as many particles as percentiles"));
        }
        let stream = RngStream::new(cfg.seed);
        Ok(IcdfResidual { model, cfg, k, n, stream, scratch: Vec::new() })
    }

    pub fn particle_count(&self) -> usize {
        self.n
    }
}

impl ResidualMap for IcdfResidual {
    fn dim(&self) -> usize {
        self.k
    }

    fn eval(&mut self, u: &[f64], out: &mut [f64]) -> Result<()> {
        if u.len() != self.k || out.len() != self.k {
            return Err(invalid("vector length does not match the percentile grid"));
        }
        if !all_finite(u) {
            return Err(Error::Evaluation("percentile values are not finite".into()));
        }
        let mut stepped = std::mem::take(&mut self.scratch);
        step_values(u, &self.model, &self.cfg, self.n, &mut self.stream, &mut stepped)?;
        for i in 0..self.k {
            out[i] = u[i] - stepped[i];
        }
        self.scratch = stepped;
        Ok(())
    }

    fn noise_scale(&self) -> f64 {
        if self.model.diffusion() > 0.0 {
            (2.0 * self.model.diffusion() * self.cfg.h).sqrt() / (self.n as f64).sqrt()
        } else {
            0.0
        }
    }

    fn recommended_eps(&self) -> f64 {
        recommend_eps(self.noise_scale(), self.n)
    }
}
