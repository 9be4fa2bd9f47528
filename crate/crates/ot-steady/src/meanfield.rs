//! Finite-volume discretization of the drift-diffusion mean-field equation
//! matching the 1D particle models (Keller-Segel form for the chemotaxis
//! drift), an explicit-Euler timestepper for it, and the deterministic
//! residual map that lets Newton-Krylov find the PDE steady state.

use crate::error::{invalid, Error, Result};
use crate::krylov::{newton_krylov, NewtonKrylovOptions, ResidualMap, SolverReport};
use crate::models::SdeModel;

/// Cell-centered densities on [-L, L] split into equal cells.
#[derive(Clone, Debug, PartialEq)]
pub struct FvGrid {
    l: f64,
    density: Vec<f64>,
}

impl FvGrid {
    pub fn new(l: f64, density: Vec<f64>) -> Result<Self> {
        if !(l > 0.0 && l.is_finite()) {
            return Err(invalid("half-width must be positive"));
        }
        if density.is_empty() {
            return Err(invalid("need at least one cell"));
        }
        if !density.iter().all(|d| d.is_finite()) {
            return Err(invalid("densities must be finite"));
        }
        Ok(FvGrid { l, density })
    }

    /// Densities sampled from a function of the cell center, normalized to
    /// unit mass.
    pub fn from_density_fn<F: Fn(f64) -> f64>(l: f64, n_cells: usize, f: F) -> Result<Self> {
        if n_cells == 0 {
            return Err(invalid("need at least one cell"));
        }
        let dx = 2.0 * l / n_cells as f64;
        let density: Vec<f64> = (0..n_cells).map(|i| f(-l + (i as f64 + 0.5) * dx)).collect();
        let grid = Self::new(l, density)?;
        let mass = grid.mass();
        if !(mass > 0.0) {
            return Err(invalid("density integrates to zero"));
        }
        let mut g = grid;
        for d in g.density.iter_mut() {
            *d /= mass;
        }
        Ok(g)
    }

    pub fn n_cells(&self) -> usize {
        self.density.len()
    }

    pub fn half_width(&self) -> f64 {
        self.l
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.l / self.density.len() as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        -self.l + (i as f64 + 0.5) * self.dx()
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.dx()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,density")?;
        for (i, d) in self.density.iter().enumerate() {
            writeln!(w, "{},{}", self.center(i), d)?;
        }
        Ok(())
    }
}

/// Advection coefficients at the inner interfaces plus the diffusion and
/// spacing constants; built once, applied every Euler step.
struct FluxOp {
    /// a(x) at interfaces 1..n-1 (length n-1); boundary fluxes are pinned
    /// to zero and never computed.
    a_inner: Vec<f64>,
    d: f64,
    dx: f64,
}

impl FluxOp {
    fn build(grid: &FvGrid, model: &SdeModel) -> Result<Self> {
        if model.dim() != 1 {
            return Err(invalid("mean-field stepping needs a one-dimensional model"));
        }
        let n = grid.n_cells();
        let dx = grid.dx();
        let a_inner: Vec<f64> = (1..n).map(|k| model.drift_1d(-grid.l + k as f64 * dx)).collect();
        Ok(FluxOp { a_inner, d: model.diffusion(), dx })
    }

    /// rhs_i = -(J_{i+1/2} - J_{i-1/2})/dx with
    /// J = a * (mu_left + mu_right)/2 - D (mu_right - mu_left)/dx at inner
    /// interfaces and J = 0 at both walls.
    fn rhs(&self, mu: &[f64], out: &mut [f64]) {
        let n = mu.len();
        let inv_dx = 1.0 / self.dx;
        let mut j_left = 0.0;
        for i in 0..n {
            let j_right = if i + 1 < n {
                self.a_inner[i] * 0.5 * (mu[i] + mu[i + 1]) - self.d * (mu[i + 1] - mu[i]) * inv_dx
            } else {
                0.0
            };
            out[i] = -(j_right - j_left) * inv_dx;
            j_left = j_right;
        }
    }
}

/// Time derivative of the cell densities under the conservative
/// flux-difference scheme; total mass rate is exactly a telescoping sum and
/// vanishes.
pub fn keller_segel_rhs(grid: &FvGrid, model: &SdeModel) -> Result<Vec<f64>> {
    let op = FluxOp::build(grid, model)?;
    let mut out = vec![0.0f64; grid.n_cells()];
    op.rhs(grid.density(), &mut out);
    Ok(out)
}

/// Largest explicit-Euler step the diffusion term tolerates.
pub fn cfl_bound(grid: &FvGrid, model: &SdeModel) -> f64 {
    let d = model.diffusion();
    if d > 0.0 {
        grid.dx() * grid.dx() / (2.0 * d)
    } else {
        f64::INFINITY
    }
}

fn check_dt(grid: &FvGrid, model: &SdeModel, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt must be positive"));
    }
    let bound = cfl_bound(grid, model);
    if dt > bound {
        return Err(invalid(format!("dt {dt} violates the diffusion stability bound dx^2/(2 D) = {bound}")));
    }
    Ok(())
}

fn euler_steps(op: &FluxOp, mu: &mut Vec<f64>, dt: f64, n_steps: usize) {
    let mut rate = vec![0.0f64; mu.len()];
    for _ in 0..n_steps {
        op.rhs(mu, &mut rate);
        for (m, r) in mu.iter_mut().zip(&rate) {
            *m += dt * r;
        }
    }
}

fn n_steps_for(h: f64, dt: f64) -> Result<usize> {
    if !(h > 0.0 && h.is_finite() && dt <= h) {
        return Err(invalid("need 0 < dt <= h"));
    }
    let n = (h / dt).round().max(1.0);
    if (n * dt - h).abs() > 1e-12 * h {
        log::warn!("h/dt = {} not an integer; stepping {} steps covers {} instead of {}", h / dt, n, n * dt, h);
    }
    Ok(n as usize)
}

/// Integrates the density over a window of length h with explicit Euler
/// steps of size dt (CFL-checked). Mass is conserved to rounding.
pub fn pde_timestepper(grid: &FvGrid, model: &SdeModel, dt: f64, h: f64) -> Result<FvGrid> {
    check_dt(grid, model, dt)?;
    let n_steps = n_steps_for(h, dt)?;
    let op = FluxOp::build(grid, model)?;
    let mut mu = grid.density().to_vec();
    euler_steps(&op, &mut mu, dt, n_steps);
    FvGrid::new(grid.half_width(), mu)
}

/// Deterministic residual mu - step_h(mu) over cell densities.
pub struct PdeResidual {
    op: FluxOp,
    dt: f64,
    n_steps: usize,
    n_cells: usize,
    scratch: Vec<f64>,
}

impl PdeResidual {
    pub fn new(grid: &FvGrid, model: &SdeModel, dt: f64, h: f64) -> Result<Self> {
        check_dt(grid, model, dt)?;
        let n_steps = n_steps_for(h, dt)?;
        let op = FluxOp::build(grid, model)?;
        Ok(PdeResidual { op, dt, n_steps, n_cells: grid.n_cells(), scratch: Vec::new() })
    }
}

impl ResidualMap for PdeResidual {
    fn dim(&self) -> usize {
        self.n_cells
    }

    fn eval(&mut self, u: &[f64], out: &mut [f64]) -> Result<()> {
        if u.len() != self.n_cells || out.len() != self.n_cells {
            return Err(invalid("state length does not match the grid"));
        }
        if !u.iter().all(|x| x.is_finite()) {
            return Err(Error::Evaluation("densities are not finite".into()));
        }
        let mut mu = std::mem::take(&mut self.scratch);
        mu.clear();
        mu.extend_from_slice(u);
        euler_steps(&self.op, &mut mu, self.dt, self.n_steps);
        for i in 0..u.len() {
            out[i] = u[i] - mu[i];
        }
        self.scratch = mu;
        Ok(())
    }
}

/// Newton-Krylov on the PDE residual, starting from `grid0`. Iterates are
/// not clipped to nonnegative densities; the converged answer is checked and
/// only warned about, since small negative undershoots are discretization
/// artifacts.
pub fn pde_steady_state(grid0: &FvGrid, model: &SdeModel, dt: f64, opts: &NewtonKrylovOptions) -> Result<(SolverReport, FvGrid)> {
    let mut residual = PdeResidual::new(grid0, model, dt, opts.horizon)?;
    let report = newton_krylov(&mut residual, grid0.density(), opts)?;
    let grid = FvGrid::new(grid0.half_width(), report.final_iterate.clone())?;
    if report.converged {
        let worst = grid.density().iter().cloned().fold(0.0f64, |w, d| w.min(d));
        if worst < -1e-10 {
            log::warn!("converged steady state has negative cells down to {worst:.3e}");
        }
    }
    Ok((report, grid))
}
