//! Discrete optimal transport between equal-size particle sets: sort-based
//! maps in 1D, exact linear assignment in 2D, batched block-diagonal
//! couplings for large ensembles, and the squared-Wasserstein objective with
//! its truncated gradient and velocity field.

use rand::seq::SliceRandom;
use std::io::Write;

use crate::error::{invalid, Result};
use crate::models::RngStream;

/// Upper bound on exact assignment size; beyond it the cubic solver is not
/// worth running and callers should batch.
pub const ASSIGNMENT_CAP: usize = 4096;

/// A pairing of two N-particle sets: particle i of the source goes to
/// particle `perm[i]` of the target. Batched plans also record which block
/// each source particle landed in.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransportPlan {
    perm: Vec<usize>,
    batch: Option<Vec<usize>>,
}

impl TransportPlan {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        Self::check_bijection(&perm)?;
        Ok(TransportPlan { perm, batch: None })
    }

    pub fn with_blocks(perm: Vec<usize>, batch: Vec<usize>) -> Result<Self> {
        Self::check_bijection(&perm)?;
        if batch.len() != perm.len() {
            return Err(invalid("batch labels must cover every particle"));
        }
        Ok(TransportPlan { perm, batch: Some(batch) })
    }

    fn check_bijection(perm: &[usize]) -> Result<()> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &j in perm {
            if j >= n || seen[j] {
                return Err(invalid("permutation is not a bijection"));
            }
            seen[j] = true;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Target index paired with source index i.
    pub fn target(&self, i: usize) -> usize {
        self.perm[i]
    }

    pub fn perm(&self) -> &[usize] {
        self.perm.as_slice()
    }

    /// Batch label per source particle, when the plan came from a batched
    /// coupling.
    pub fn batch_labels(&self) -> Option<&[usize]> {
        self.batch.as_deref()
    }

    /// Debug export, one `i,j` row per pairing.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "i,j")?;
        for (i, &j) in self.perm.iter().enumerate() {
            writeln!(w, "{i},{j}")?;
        }
        Ok(())
    }
}

fn check_sizes(nx: usize, ny: usize) -> Result<()> {
    if nx != ny {
        return Err(invalid(format!("particle counts differ: {nx} vs {ny}")));
    }
    if nx == 0 {
        return Err(invalid("empty ensembles have no transport plan"));
    }
    Ok(())
}

/// Indices of `v` in ascending value order; ties keep original order, so the
/// map is deterministic on duplicates.
fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    idx
}

/// The 1D optimal map: rank r of X pairs with rank r of Y. O(N log N).
pub fn ot_map_1d(x: &[f64], y: &[f64]) -> Result<TransportPlan> {
    check_sizes(x.len(), y.len())?;
    let xi = argsort(x);
    let yi = argsort(y);
    let mut perm = vec![0usize; x.len()];
    for (r, &i) in xi.iter().enumerate() {
        perm[i] = yi[r];
    }
    TransportPlan::new(perm)
}

#[inline]
fn sqdist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Shortest-augmenting-path assignment with dual potentials; costs are
/// produced on the fly so no N x N matrix is materialized. O(n^3) worst
/// case. Returns row -> column.
fn solve_assignment<C: Fn(usize, usize) -> f64>(n: usize, cost: C) -> Vec<usize> {
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    // p[j] = row assigned to column j, n meaning free; column n is the
    // virtual start of each augmentation
    let mut p = vec![n; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];
    for i in 0..n {
        p[n] = i;
        let mut j0 = n;
        minv[..n].fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = n;
            for j in 0..n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == n {
                break;
            }
        }
        // augment backwards along the alternating path
        while j0 != n {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        }
    }
    let mut row2col = vec![0usize; n];
    for j in 0..n {
        row2col[p[j]] = j;
    }
    row2col
}

/// Exact minimizer of the total squared distance between two 2D particle
/// sets. Capped at [`ASSIGNMENT_CAP`]; batch larger problems.
pub fn assignment_2d(x: &[[f64; 2]], y: &[[f64; 2]]) -> Result<TransportPlan> {
    check_sizes(x.len(), y.len())?;
    if x.len() > ASSIGNMENT_CAP {
        return Err(invalid(format!(
            "{} particles exceed the exact-assignment cap {ASSIGNMENT_CAP}; use batched_coupling_2d",
            x.len()
        )));
    }
    let perm = solve_assignment(x.len(), |i, j| sqdist(x[i], y[j]));
    TransportPlan::new(perm)
}

fn batched_partition(n: usize, b: usize, stream: &mut RngStream) -> Result<(Vec<usize>, Vec<usize>)> {
    if b == 0 {
        return Err(invalid("batch size must be positive"));
    }
    if b > n {
        return Err(invalid(format!("batch size {b} exceeds particle count {n}")));
    }
    let mut xi: Vec<usize> = (0..n).collect();
    let mut yi: Vec<usize> = (0..n).collect();
    xi.shuffle(&mut stream.derive(0));
    yi.shuffle(&mut stream.derive(1));
    Ok((xi, yi))
}

/// Block-diagonal coupling of 1D sets: both sides are partitioned into
/// uniformly random blocks of size B (last block smaller when B does not
/// divide N), and each block pair is matched by sorting, which is exact at
/// block level.
pub fn batched_coupling_1d(x: &[f64], y: &[f64], b: usize, stream: &mut RngStream) -> Result<TransportPlan> {
    check_sizes(x.len(), y.len())?;
    let (xi, yi) = batched_partition(x.len(), b, stream)?;
    let mut perm = vec![0usize; x.len()];
    let mut batch = vec![0usize; x.len()];
    for (bi, (xb, yb)) in xi.chunks(b).zip(yi.chunks(b)).enumerate() {
        let xs = argsort_of(x, xb);
        let ys = argsort_of(y, yb);
        for (r, &ix_local) in xs.iter().enumerate() {
            perm[xb[ix_local]] = yb[ys[r]];
            batch[xb[ix_local]] = bi;
        }
    }
    TransportPlan::with_blocks(perm, batch)
}

/// Argsort of the subset `sub` of v, as positions into `sub`.
fn argsort_of(v: &[f64], sub: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sub.len()).collect();
    idx.sort_by(|&a, &b| v[sub[a]].total_cmp(&v[sub[b]]).then(sub[a].cmp(&sub[b])));
    idx
}

/// Block-diagonal coupling of 2D sets: random blocks of size B, exact
/// assignment within each block.
pub fn batched_coupling_2d(x: &[[f64; 2]], y: &[[f64; 2]], b: usize, stream: &mut RngStream) -> Result<TransportPlan> {
    check_sizes(x.len(), y.len())?;
    if b > ASSIGNMENT_CAP {
        return Err(invalid(format!("block size {b} exceeds the exact-assignment cap {ASSIGNMENT_CAP}")));
    }
    let (xi, yi) = batched_partition(x.len(), b, stream)?;
    let mut perm = vec![0usize; x.len()];
    let mut batch = vec![0usize; x.len()];
    for (bi, (xb, yb)) in xi.chunks(b).zip(yi.chunks(b)).enumerate() {
        let sub = solve_assignment(xb.len(), |i, j| sqdist(x[xb[i]], y[yb[j]]));
        for (i_local, &gi) in xb.iter().enumerate() {
            perm[gi] = yb[sub[i_local]];
            batch[gi] = bi;
        }
    }
    TransportPlan::with_blocks(perm, batch)
}

/// Both conventions of the squared transport cost under a plan:
/// `mean_sq` is the per-particle average (the squared distance when the plan
/// is optimal), `objective` is the descent objective N/2 times that.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct W2Cost {
    pub mean_sq: f64,
    pub objective: f64,
}

fn plan_fits(plan: &TransportPlan, n: usize) -> Result<()> {
    if plan.len() != n {
        return Err(invalid("plan size does not match ensembles"));
    }
    Ok(())
}

pub fn w2_sq_1d(x: &[f64], y: &[f64], plan: &TransportPlan) -> Result<W2Cost> {
    check_sizes(x.len(), y.len())?;
    plan_fits(plan, x.len())?;
    let sum: f64 = x.iter().enumerate().map(|(i, &xi)| (xi - y[plan.perm[i]]) * (xi - y[plan.perm[i]])).sum();
    let mean_sq = sum / x.len() as f64;
    Ok(W2Cost { mean_sq, objective: 0.5 * sum })
}

pub fn w2_sq_2d(x: &[[f64; 2]], y: &[[f64; 2]], plan: &TransportPlan) -> Result<W2Cost> {
    check_sizes(x.len(), y.len())?;
    plan_fits(plan, x.len())?;
    let sum: f64 = x.iter().enumerate().map(|(i, &xi)| sqdist(xi, y[plan.perm[i]])).sum();
    let mean_sq = sum / x.len() as f64;
    Ok(W2Cost { mean_sq, objective: 0.5 * sum })
}

/// Gradient of the half squared cost in the source positions: X - plan(Y).
/// The dependence of the plan itself on X is deliberately dropped (envelope
/// argument); at an optimal plan it contributes nothing.
pub fn wasserstein_gradient_1d(x: &[f64], y: &[f64], plan: &TransportPlan) -> Result<Vec<f64>> {
    check_sizes(x.len(), y.len())?;
    plan_fits(plan, x.len())?;
    Ok(x.iter().enumerate().map(|(i, &xi)| xi - y[plan.perm[i]]).collect())
}

pub fn wasserstein_gradient_2d(x: &[[f64; 2]], y: &[[f64; 2]], plan: &TransportPlan) -> Result<Vec<[f64; 2]>> {
    check_sizes(x.len(), y.len())?;
    plan_fits(plan, x.len())?;
    Ok(x.iter()
        .enumerate()
        .map(|(i, &xi)| {
            let yi = y[plan.perm[i]];
            [xi[0] - yi[0], xi[1] - yi[1]]
        })
        .collect())
}

/// Finite-difference velocity of the coarse step: (plan(Y) - X) / h.
pub fn velocity_field_1d(x: &[f64], y: &[f64], plan: &TransportPlan, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(invalid("horizon h must be positive"));
    }
    check_sizes(x.len(), y.len())?;
    plan_fits(plan, x.len())?;
    Ok(x.iter().enumerate().map(|(i, &xi)| (y[plan.perm[i]] - xi) / h).collect())
}

pub fn velocity_field_2d(x: &[[f64; 2]], y: &[[f64; 2]], plan: &TransportPlan, h: f64) -> Result<Vec<[f64; 2]>> {
    if !(h > 0.0) {
        return Err(invalid("horizon h must be positive"));
    }
    check_sizes(x.len(), y.len())?;
    plan_fits(plan, x.len())?;
    Ok(x.iter()
        .enumerate()
        .map(|(i, &xi)| {
            let yi = y[plan.perm[i]];
            [(yi[0] - xi[0]) / h, (yi[1] - xi[1]) / h]
        })
        .collect())
}
