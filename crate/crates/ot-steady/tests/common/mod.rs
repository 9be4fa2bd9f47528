//! Oracles and helpers shared by the integration tests. Everything here is
//! deliberately naive (exhaustive search, dense elimination) so it can serve
//! as an independent reference for the optimized library code.

#![allow(dead_code)]

/// Visits every permutation of 0..n (Heap's algorithm) and returns the
/// minimal value of `cost` over them. n is expected to stay tiny.
pub fn exhaustive_min_cost<F: FnMut(&[usize]) -> f64>(n: usize, mut cost: F) -> f64 {
    assert!(n >= 1 && n <= 8, "exhaustive search is for toy sizes");
    let mut idx: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    let mut best = cost(&idx);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                idx.swap(0, i);
            } else {
                idx.swap(c[i], i);
            }
            let v = cost(&idx);
            if v < best {
                best = v;
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

pub fn pair_cost_1d(x: &[f64], y: &[f64], perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| (x[i] - y[j]) * (x[i] - y[j])).sum::<f64>() / x.len() as f64
}

pub fn pair_cost_2d(x: &[[f64; 2]], y: &[[f64; 2]], perm: &[usize]) -> f64 {
    perm.iter()
        .enumerate()
        .map(|(i, &j)| {
            let dx = x[i][0] - y[j][0];
            let dy = x[i][1] - y[j][1];
            dx * dx + dy * dy
        })
        .sum::<f64>()
        / x.len() as f64
}

/// Dense linear solve by Gaussian elimination with partial pivoting.
/// Panics on a (numerically) singular matrix; callers feed well-conditioned
/// systems only.
pub fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    assert!(a.len() == n && a.iter().all(|r| r.len() == n));
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        assert!(m[piv][col].abs() > 1e-12, "singular test matrix");
        m.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = rhs[row];
        for k in row + 1..n {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    x
}

pub fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(r, x)| r * x).sum()).collect()
}

/// W2 distance between two equal-size 1D samples: RMS of sorted differences.
pub fn w2_sorted_1d(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let ms = sa.iter().zip(&sb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64;
    ms.sqrt()
}

/// Sliced W2 between 2D samples: RMS over angles of the 1D W2 of projections.
pub fn sliced_w2_samples(a: &[[f64; 2]], b: &[[f64; 2]], n_angles: usize) -> f64 {
    let mut acc = 0.0;
    for k in 0..n_angles {
        let th = std::f64::consts::PI * k as f64 / n_angles as f64;
        let (c, s) = (th.cos(), th.sin());
        let pa: Vec<f64> = a.iter().map(|p| c * p[0] + s * p[1]).collect();
        let pb: Vec<f64> = b.iter().map(|p| c * p[0] + s * p[1]).collect();
        let d = w2_sorted_1d(&pa, &pb);
        acc += d * d;
    }
    (acc / n_angles as f64).sqrt()
}

pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1);
    if xs.len() < window {
        return Vec::new();
    }
    (0..=xs.len() - window).map(|i| xs[i..i + window].iter().sum::<f64>() / window as f64).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}
