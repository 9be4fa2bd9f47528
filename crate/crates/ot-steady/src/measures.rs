//! Particle ensembles and their empirical distribution-function forms:
//! inverse CDFs on midpoint percentile grids, 2D CDF grids with
//! marginal/conditional extraction, monotone interpolation and inversion,
//! and histogram export.
//!
//! Percentile convention, used everywhere in this crate: the k-th of K
//! percentiles is (k - 0.5)/K, so neither 0 nor 1 is ever probed.

use std::io::{self, Write};

use crate::error::{invalid, Error, Result};

/// N equal-weight particles in one or two dimensions; the empirical measure
/// every other representation in this crate is built from.
#[derive(Clone, Debug, PartialEq)]
pub enum ParticleEnsemble {
    Dim1(Vec<f64>),
    Dim2(Vec<[f64; 2]>),
}

impl ParticleEnsemble {
    pub fn from_1d(positions: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(invalid("ensemble needs at least one particle"));
        }
        if !positions.iter().all(|x| x.is_finite()) {
            return Err(invalid("non-finite particle position"));
        }
        Ok(Self::Dim1(positions))
    }

    pub fn from_2d(positions: Vec<[f64; 2]>) -> Result<Self> {
        if positions.is_empty() {
            return Err(invalid("ensemble needs at least one particle"));
        }
        if !positions.iter().all(|p| p[0].is_finite() && p[1].is_finite()) {
            return Err(invalid("non-finite particle position"));
        }
        Ok(Self::Dim2(positions))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Dim1(_) => 1,
            Self::Dim2(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Dim1(v) => v.len(),
            Self::Dim2(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_1d(&self) -> Result<&[f64]> {
        match self {
            Self::Dim1(v) => Ok(v),
            Self::Dim2(_) => Err(invalid("expected a 1D ensemble")),
        }
    }

    pub fn as_2d(&self) -> Result<&[[f64; 2]]> {
        match self {
            Self::Dim2(v) => Ok(v),
            Self::Dim1(_) => Err(invalid("expected a 2D ensemble")),
        }
    }
}

/// The fixed midpoint grid p_k = (k - 0.5)/K, k = 1..K.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PercentileGrid {
    k: usize,
}

impl PercentileGrid {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(invalid("percentile grid needs at least one point"));
        }
        Ok(Self { k })
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// p at 0-based index i, i.e. (i + 0.5)/K.
    pub fn p(&self, i: usize) -> f64 {
        debug_assert!(i < self.k);
        (i as f64 + 0.5) / self.k as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.k).map(|i| self.p(i)).collect()
    }
}

/// ICDF samples on a percentile grid; the smooth 1D state handed to the
/// Newton-Krylov solver. Values are nondecreasing and finite by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneCurve {
    grid: PercentileGrid,
    values: Vec<f64>,
}

impl MonotoneCurve {
    pub fn new(grid: PercentileGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid("value count does not match percentile grid"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(invalid("non-finite curve value"));
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid("curve values must be nondecreasing"));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> PercentileGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Joint CDF values on a rectangular grid, stored row-major over x then y:
/// `values[ix * ny + iy] = F(xgrid[ix], ygrid[iy])`. `source_n` is the size
/// of the generating ensemble; it scales the degeneracy guard used by
/// conditional extraction.
#[derive(Clone, Debug, PartialEq)]
pub struct Cdf2Grid {
    xgrid: Vec<f64>,
    ygrid: Vec<f64>,
    values: Vec<f64>,
    source_n: usize,
}

fn check_grid(grid: &[f64], name: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid(format!("{name} grid is empty")));
    }
    if !grid.iter().all(|g| g.is_finite()) {
        return Err(invalid(format!("{name} grid has a non-finite node")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid(format!("{name} grid must be strictly ascending")));
    }
    Ok(())
}

impl Cdf2Grid {
    /// Validating constructor. Monotonicity along both axes is checked with a
    /// 1e-12 slack so quadrature-built grids are not rejected for roundoff.
    pub fn new(xgrid: Vec<f64>, ygrid: Vec<f64>, values: Vec<f64>, source_n: usize) -> Result<Self> {
        check_grid(&xgrid, "x")?;
        check_grid(&ygrid, "y")?;
        if source_n == 0 {
            return Err(invalid("source ensemble size must be positive"));
        }
        let (nx, ny) = (xgrid.len(), ygrid.len());
        if values.len() != nx * ny {
            return Err(invalid("value count does not match grid shape"));
        }
        const SLACK: f64 = 1e-12;
        for v in &values {
            if !(*v >= -SLACK && *v <= 1.0 + SLACK) {
                return Err(invalid("CDF value outside [0, 1]"));
            }
        }
        for ix in 0..nx {
            for iy in 1..ny {
                if values[ix * ny + iy] + SLACK < values[ix * ny + iy - 1] {
                    return Err(invalid("CDF not nondecreasing along y"));
                }
            }
        }
        for ix in 1..nx {
            for iy in 0..ny {
                if values[ix * ny + iy] + SLACK < values[(ix - 1) * ny + iy] {
                    return Err(invalid("CDF not nondecreasing along x"));
                }
            }
        }
        Ok(Self { xgrid, ygrid, values, source_n })
    }

    /// Constructor that skips the invariant checks. Newton-Krylov iterates are
    /// perturbed grids that need not be valid CDFs; downstream extraction
    /// (marginal, conditional, sampling) tolerates that.
    pub fn new_unchecked(xgrid: Vec<f64>, ygrid: Vec<f64>, values: Vec<f64>, source_n: usize) -> Self {
        debug_assert_eq!(values.len(), xgrid.len() * ygrid.len());
        Self { xgrid, ygrid, values, source_n }
    }

    pub fn nx(&self) -> usize {
        self.xgrid.len()
    }

    pub fn ny(&self) -> usize {
        self.ygrid.len()
    }

    pub fn xgrid(&self) -> &[f64] {
        &self.xgrid
    }

    pub fn ygrid(&self) -> &[f64] {
        &self.ygrid
    }

    /// Flat values, row-major over x then y.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[ix * self.ygrid.len() + iy]
    }

    pub fn source_n(&self) -> usize {
        self.source_n
    }

    /// Value at the top-right corner, i.e. the total captured mass.
    pub fn top_corner(&self) -> f64 {
        self.at(self.nx() - 1, self.ny() - 1)
    }
}

/// Sorted-order subsample: entry k (1-based) is sorted[ceil((k - 0.5)*N/K)],
/// again 1-based. Exact integer arithmetic so cell boundaries never depend on
/// float rounding.
pub(crate) fn subsample_sorted(sorted: &[f64], k: usize) -> Vec<f64> {
    let n = sorted.len();
    (1..=k)
        .map(|j| {
            let idx1 = ((2 * j - 1) * n).div_ceil(2 * k);
            sorted[idx1 - 1]
        })
        .collect()
}

/// ICDF of the empirical measure on the K-point midpoint percentile grid,
/// i.e. a rank-based subsample of the sorted positions.
pub fn empirical_icdf(ensemble: &ParticleEnsemble, k: usize) -> Result<MonotoneCurve> {
    let xs = ensemble.as_1d()?;
    let n = xs.len();
    if k < 2 {
        return Err(invalid("need at least two percentiles"));
    }
    if n < k {
        return Err(invalid(format!("need at least {k} particles for {k} percentiles, got {n}")));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let values = subsample_sorted(&sorted, k);
    Ok(MonotoneCurve { grid: PercentileGrid { k }, values })
}

/// Evaluates the piecewise-linear interpolant of `values` on the K-point
/// midpoint percentile grid at the N midpoint percentiles (i + 0.5)/N,
/// clamping to the end values outside [p_1, p_K]. Works on arbitrary finite
/// value vectors; monotone input gives sorted output.
pub(crate) fn sample_icdf_values(values: &[f64], n: usize, out: &mut Vec<f64>) {
    let k = values.len();
    let kf = k as f64;
    let nf = n as f64;
    out.clear();
    out.reserve(n);
    let mut seg = 0usize;
    for i in 0..n {
        let t = (i as f64 + 0.5) / nf;
        let v = if t <= 0.5 / kf {
            values[0]
        } else if t >= (kf - 0.5) / kf {
            values[k - 1]
        } else {
            while (seg as f64 + 1.5) / kf < t {
                seg += 1;
            }
            let p_lo = (seg as f64 + 0.5) / kf;
            values[seg] + (t - p_lo) * kf * (values[seg + 1] - values[seg])
        };
        out.push(v);
    }
}

/// N particles at the curve's piecewise-linear interpolant of the midpoint
/// percentiles (n - 0.5)/N; output is sorted.
pub fn sample_from_icdf(curve: &MonotoneCurve, n: usize) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(invalid("need at least one sample"));
    }
    let mut out = Vec::new();
    sample_icdf_values(&curve.values, n, &mut out);
    Ok(ParticleEnsemble::Dim1(out))
}

/// Piecewise-linear interpolation on a strictly ascending grid, constant
/// clamping outside the grid range.
pub fn interp_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    debug_assert!(!xs.is_empty());
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let j = xs.partition_point(|&g| g < x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let (y0, y1) = (ys[j - 1], ys[j]);
    y0 + (x - x0) / (x1 - x0) * (y1 - y0)
}

/// Piecewise-linear inverse of a nondecreasing table: the x where the table
/// reaches `p`. Clamps to the end nodes outside the table's value range; on a
/// flat segment at exactly `p`, returns the segment's left edge.
pub fn invert_monotone(xs: &[f64], ys: &[f64], p: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(invalid("cannot invert an empty table"));
    }
    if xs.len() != ys.len() {
        return Err(invalid("table grid and values differ in length"));
    }
    if !p.is_finite() {
        return Err(invalid("probe must be finite"));
    }
    let n = xs.len();
    let j = ys.partition_point(|&y| y < p);
    if j == 0 {
        return Ok(xs[0]);
    }
    if j == n {
        return Ok(xs[n - 1]);
    }
    if ys[j] <= p {
        // exact hit; partition_point already picked the left edge of the run
        return Ok(xs[j]);
    }
    let d = ys[j] - ys[j - 1];
    if !(d > 0.0) {
        return Ok(xs[j]);
    }
    Ok(xs[j - 1] + (p - ys[j - 1]) / d * (xs[j] - xs[j - 1]))
}

/// Bins points and takes 2D prefix sums; O(N + grid) rather than the naive
/// O(N * grid) double count. `values` must have length nx*ny.
pub(crate) fn bin_cdf2(pts: &[[f64; 2]], xgrid: &[f64], ygrid: &[f64], values: &mut [f64]) {
    let (nx, ny) = (xgrid.len(), ygrid.len());
    debug_assert_eq!(values.len(), nx * ny);
    values.fill(0.0);
    for &[x, y] in pts {
        let ix = xgrid.partition_point(|&g| g < x);
        let iy = ygrid.partition_point(|&g| g < y);
        if ix < nx && iy < ny {
            values[ix * ny + iy] += 1.0;
        }
    }
    for row in values.chunks_exact_mut(ny) {
        for iy in 1..ny {
            row[iy] += row[iy - 1];
        }
    }
    for ix in 1..nx {
        let (prev, cur) = values.split_at_mut(ix * ny);
        let prev = &prev[(ix - 1) * ny..];
        for iy in 0..ny {
            cur[iy] += prev[iy];
        }
    }
    let inv_n = 1.0 / pts.len() as f64;
    for v in values.iter_mut() {
        *v *= inv_n;
    }
}

/// Empirical joint CDF on the given grids:
/// values[i,j] = #{X <= xgrid[i] and Y <= ygrid[j]} / N.
pub fn empirical_cdf2(ensemble: &ParticleEnsemble, xgrid: &[f64], ygrid: &[f64]) -> Result<Cdf2Grid> {
    let pts = ensemble.as_2d()?;
    check_grid(xgrid, "x")?;
    check_grid(ygrid, "y")?;
    let mut values = vec![0.0; xgrid.len() * ygrid.len()];
    bin_cdf2(pts, xgrid, ygrid, &mut values);
    Ok(Cdf2Grid {
        xgrid: xgrid.to_vec(),
        ygrid: ygrid.to_vec(),
        values,
        source_n: pts.len(),
    })
}

/// Marginal CDF of x: the grid's top row, renormalized so the last entry is
/// exactly 1. Aligned with `cdf.xgrid()`.
pub fn marginal_cdf_x(cdf: &Cdf2Grid) -> Result<Vec<f64>> {
    let (nx, ny) = (cdf.nx(), cdf.ny());
    let top = cdf.at(nx - 1, ny - 1);
    if !(top > 0.0) {
        return Err(invalid("CDF grid carries no mass"));
    }
    let mut out = Vec::with_capacity(nx);
    for ix in 0..nx {
        out.push(cdf.at(ix, ny - 1) / top);
    }
    out[nx - 1] = 1.0;
    Ok(out)
}

/// Conditional CDF of y given x, from the finite difference of the grid
/// across the cell containing x, normalized by its own top entry and clamped
/// nondecreasing into [0, 1]. Aligned with `cdf.ygrid()`.
///
/// Errors with [`Error::DegenerateConditional`] when the cell's marginal mass
/// is at or below the guard 1e-8 / source_n; there is no density to condition
/// on there.
pub fn conditional_cdf_y(cdf: &Cdf2Grid, x: f64) -> Result<Vec<f64>> {
    let nx = cdf.nx();
    if nx < 2 {
        return Err(invalid("need at least two x nodes for a conditional"));
    }
    let (lo, hi) = (cdf.xgrid[0], cdf.xgrid[nx - 1]);
    if !(x >= lo && x <= hi) {
        return Err(invalid(format!("conditioning point {x} outside grid range [{lo}, {hi}]")));
    }
    let cell = cdf.xgrid.partition_point(|&g| g <= x).clamp(1, nx - 1) - 1;
    conditional_cdf_y_at_cell(cdf, cell)
}

/// Same extraction, addressed by cell index; the sampler walks cells directly.
pub(crate) fn conditional_cdf_y_at_cell(cdf: &Cdf2Grid, cell: usize) -> Result<Vec<f64>> {
    let ny = cdf.ny();
    let guard = 1e-8 / cdf.source_n as f64;
    let top = cdf.at(cell + 1, ny - 1) - cdf.at(cell, ny - 1);
    if !(top > guard) {
        return Err(Error::DegenerateConditional { column: cell, mass: top, guard });
    }
    let mut out = Vec::with_capacity(ny);
    let mut run: f64 = 0.0;
    for iy in 0..ny {
        let d = (cdf.at(cell + 1, iy) - cdf.at(cell, iy)) / top;
        run = run.max(d.clamp(0.0, 1.0));
        out.push(run);
    }
    Ok(out)
}

/// Counts per bin [e_i, e_{i+1}), last bin closed; out-of-range particles are
/// dropped, so the counts sum to the number of in-range particles.
pub fn histogram(ensemble: &ParticleEnsemble, edges: &[f64]) -> Result<Vec<u64>> {
    let xs = ensemble.as_1d()?;
    check_grid(edges, "bin-edge")?;
    if edges.len() < 2 {
        return Err(invalid("need at least two bin edges"));
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0u64; bins];
    for &x in xs {
        if x < edges[0] || x > edges[bins] {
            continue;
        }
        let idx = (edges.partition_point(|&e| e <= x) - 1).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(counts)
}

pub fn write_icdf_csv<W: Write>(w: &mut W, curve: &MonotoneCurve) -> io::Result<()> {
    writeln!(w, "percentile,value")?;
    for (i, v) in curve.values().iter().enumerate() {
        writeln!(w, "{},{}", curve.grid().p(i), v)?;
    }
    Ok(())
}

pub fn write_cdf2_csv<W: Write>(w: &mut W, cdf: &Cdf2Grid) -> io::Result<()> {
    writeln!(w, "x,y,value")?;
    for (ix, x) in cdf.xgrid().iter().enumerate() {
        for (iy, y) in cdf.ygrid().iter().enumerate() {
            writeln!(w, "{},{},{}", x, y, cdf.at(ix, iy))?;
        }
    }
    Ok(())
}

pub fn write_histogram_csv<W: Write>(w: &mut W, edges: &[f64], counts: &[u64]) -> io::Result<()> {
    debug_assert_eq!(edges.len(), counts.len() + 1);
    writeln!(w, "bin_left,bin_right,count")?;
    for (i, c) in counts.iter().enumerate() {
        writeln!(w, "{},{},{}", edges[i], edges[i + 1], c)?;
    }
    Ok(())
}
