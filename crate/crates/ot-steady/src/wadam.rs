//! First-order steady-state search: drive an ensemble toward the fixed
//! point of its own coarse timestepper by descending the squared transport
//! cost between X and its propagated image with Adam.

use std::time::Instant;

use crate::error::{invalid, Result};
use crate::measures::ParticleEnsemble;
use crate::models::{propagate_raw_1d, propagate_raw_2d, reflect, RngStream, SdeModel, StepperConfig};
use crate::transport::{
    assignment_2d, batched_coupling_1d, batched_coupling_2d, ot_map_1d, w2_sq_1d, w2_sq_2d, wasserstein_gradient_1d,
    wasserstein_gradient_2d,
};

/// Step-decay learning rate: lr0 / factor^floor((t-1)/every) at step t.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
}

impl LrSchedule {
    pub fn constant(lr0: f64) -> Self {
        LrSchedule { lr0, decay_factor: 1.0, decay_every: usize::MAX }
    }

    pub fn new(lr0: f64, decay_factor: f64, decay_every: usize) -> Result<Self> {
        if !(lr0 > 0.0 && lr0.is_finite()) {
            return Err(invalid("initial learning rate must be positive"));
        }
        if !(decay_factor >= 1.0) {
            return Err(invalid("decay factor must be at least 1"));
        }
        if decay_every == 0 {
            return Err(invalid("decay period must be positive"));
        }
        Ok(LrSchedule { lr0, decay_factor, decay_every })
    }

    /// Learning rate at 1-based step t.
    pub fn at(&self, t: u64) -> f64 {
        let k = (t.saturating_sub(1)) / self.decay_every as u64;
        self.lr0 / self.decay_factor.powi(k.min(i32::MAX as u64) as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    /// Additive constant in the denominator, for stability near zero
    /// curvature.
    pub stability: f64,
    pub schedule: LrSchedule,
}

impl AdamParams {
    pub fn new(schedule: LrSchedule) -> Self {
        AdamParams { beta1: 0.9, beta2: 0.99, stability: 1e-8, schedule }
    }
}

/// Per-coordinate Adam accumulators plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    params: AdamParams,
}

impl AdamState {
    pub fn new(n_coords: usize, params: AdamParams) -> Result<Self> {
        if n_coords == 0 {
            return Err(invalid("need at least one coordinate"));
        }
        for b in [params.beta1, params.beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid("Adam betas must lie in [0, 1)"));
            }
        }
        if !(params.stability > 0.0) {
            return Err(invalid("stability constant must be positive"));
        }
        LrSchedule::new(params.schedule.lr0, params.schedule.decay_factor, params.schedule.decay_every)?;
        Ok(AdamState { m: vec![0.0; n_coords], v: vec![0.0; n_coords], t: 0, params })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn params(&self) -> &AdamParams {
        &self.params
    }

    /// One bias-corrected Adam step. Returns the update; the caller applies
    /// it as X <- X - update (and then re-imposes any domain constraint).
    pub fn step(&mut self, grad: &[f64]) -> Result<Vec<f64>> {
        if grad.len() != self.m.len() {
            return Err(invalid("gradient shape does not match state"));
        }
        self.t += 1;
        let lr = self.params.schedule.at(self.t);
        let b1 = self.params.beta1;
        let b2 = self.params.beta2;
        let c1 = 1.0 - b1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - b2.powi(self.t.min(i32::MAX as u64) as i32);
        let mut out = Vec::with_capacity(grad.len());
        for i in 0..grad.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            out.push(lr * mh / (vh.sqrt() + self.params.stability));
        }
        Ok(out)
    }
}

/// One row of a descent log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per-particle half squared transport cost between X and its
    /// propagated image.
    pub loss: f64,
    /// RMS of the gradient over coordinates.
    pub grad_norm: f64,
    /// Seconds since the run started; excluded from CSV so identical runs
    /// produce identical files.
    pub wall_s: f64,
    /// Physical time simulated so far: h per propagation.
    pub sim_time: f64,
}

/// Full descent log, one record per epoch.
#[derive(Clone, Debug, Default)]
pub struct FlowTrace {
    pub records: Vec<EpochRecord>,
}

impl FlowTrace {
    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    /// Wall time is deliberately left out so identical runs produce
    /// byte-identical files.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,loss,grad_norm")?;
        for r in &self.records {
            writeln!(w, "{},{},{}", r.epoch, r.loss, r.grad_norm)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct WadamOptions {
    pub epochs: usize,
    pub adam: AdamParams,
    /// Block size for batched couplings; None solves the exact plan (which
    /// caps 2D ensembles at the assignment limit).
    pub batch: Option<usize>,
    /// Independent propagations averaged into each epoch's gradient.
    pub averaging: usize,
}

impl WadamOptions {
    pub fn new(epochs: usize, adam: AdamParams) -> Self {
        WadamOptions { epochs, adam, batch: None, averaging: 1 }
    }
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Runs the descent: per epoch, propagate the ensemble one coarse step,
/// couple X to the image by an optimal (or batched) plan, take the truncated
/// gradient X - plan(Y), apply Adam, reflect back into the domain.
pub fn run_wasserstein_adam(
    model: &SdeModel,
    cfg: &StepperConfig,
    x0: &ParticleEnsemble,
    opts: &WadamOptions,
    stream: &mut RngStream,
) -> Result<(ParticleEnsemble, FlowTrace)> {
    if opts.epochs == 0 {
        return Err(invalid("need at least one epoch"));
    }
    if opts.averaging == 0 {
        return Err(invalid("averaging count must be at least 1"));
    }
    match x0 {
        ParticleEnsemble::Dim1(xs) => {
            if model.dim() != 1 {
                return Err(invalid("ensemble dimension does not match model"));
            }
            if !xs.iter().all(|&x| model.contains_1d(x)) {
                return Err(invalid("initial ensemble leaves the model domain"));
            }
            let (x, trace) = run_1d(model, cfg, xs.clone(), opts, stream)?;
            Ok((ParticleEnsemble::Dim1(x), trace))
        }
        ParticleEnsemble::Dim2(ps) => {
            if model.dim() != 2 {
                return Err(invalid("ensemble dimension does not match model"));
            }
            if !ps.iter().all(|&p| model.contains_2d(p)) {
                return Err(invalid("initial ensemble leaves the model domain"));
            }
            let (x, trace) = run_2d(model, cfg, ps.clone(), opts, stream)?;
            Ok((ParticleEnsemble::Dim2(x), trace))
        }
    }
}

fn run_1d(
    model: &SdeModel,
    cfg: &StepperConfig,
    mut x: Vec<f64>,
    opts: &WadamOptions,
    stream: &mut RngStream,
) -> Result<(Vec<f64>, FlowTrace)> {
    let n = x.len();
    let (lo, hi) = model.domain_1d();
    let mut state = AdamState::new(n, opts.adam)?;
    let mut trace = FlowTrace::default();
    let start = Instant::now();
    let mut sim_time = 0.0;
    for epoch in 1..=opts.epochs {
        let mut grad = vec![0.0f64; n];
        let mut loss = 0.0;
        for _ in 0..opts.averaging {
            let mut y = x.clone();
            propagate_raw_1d(&mut y, model, cfg, stream)?;
            let plan = match opts.batch {
                Some(b) => batched_coupling_1d(&x, &y, b, stream)?,
                None => ot_map_1d(&x, &y)?,
            };
            loss += 0.5 * w2_sq_1d(&x, &y, &plan)?.mean_sq;
            let g = wasserstein_gradient_1d(&x, &y, &plan)?;
            for i in 0..n {
                grad[i] += g[i];
            }
            sim_time += cfg.h;
        }
        let inv_a = 1.0 / opts.averaging as f64;
        loss *= inv_a;
        for g in grad.iter_mut() {
            *g *= inv_a;
        }
        let grad_norm = rms(&grad);
        let update = state.step(&grad)?;
        for i in 0..n {
            x[i] = reflect(x[i] - update[i], lo, hi);
        }
        trace.records.push(EpochRecord { epoch, loss, grad_norm, wall_s: start.elapsed().as_secs_f64(), sim_time });
    }
    Ok((x, trace))
}

fn run_2d(
    model: &SdeModel,
    cfg: &StepperConfig,
    mut x: Vec<[f64; 2]>,
    opts: &WadamOptions,
    stream: &mut RngStream,
) -> Result<(Vec<[f64; 2]>, FlowTrace)> {
    let n = x.len();
    let (lo0, hi0) = model.domain(0);
    let (lo1, hi1) = model.domain(1);
    let mut state = AdamState::new(2 * n, opts.adam)?;
    let mut trace = FlowTrace::default();
    let start = Instant::now();
    let mut sim_time = 0.0;
    for epoch in 1..=opts.epochs {
        let mut grad = vec![0.0f64; 2 * n];
        let mut loss = 0.0;
        for _ in 0..opts.averaging {
            let mut y = x.clone();
            propagate_raw_2d(&mut y, model, cfg, stream)?;
            let plan = match opts.batch {
                Some(b) => batched_coupling_2d(&x, &y, b, stream)?,
                None => assignment_2d(&x, &y)?,
            };
            loss += 0.5 * w2_sq_2d(&x, &y, &plan)?.mean_sq;
            let g = wasserstein_gradient_2d(&x, &y, &plan)?;
            for i in 0..n {
                grad[2 * i] += g[i][0];
                grad[2 * i + 1] += g[i][1];
            }
            sim_time += cfg.h;
        }
        let inv_a = 1.0 / opts.averaging as f64;
        loss *= inv_a;
        for g in grad.iter_mut() {
            *g *= inv_a;
        }
        let grad_norm = rms(&grad);
        let update = state.step(&grad)?;
        for i in 0..n {
            x[i][0] = reflect(x[i][0] - update[2 * i], lo0, hi0);
            x[i][1] = reflect(x[i][1] - update[2 * i + 1], lo1, hi1);
        }
        trace.records.push(EpochRecord { epoch, loss, grad_norm, wall_s: start.elapsed().as_secs_f64(), sim_time });
    }
    Ok((x, trace))
}
