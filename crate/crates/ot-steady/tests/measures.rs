mod common;

use ot_steady::measures::{
    conditional_cdf_y, empirical_cdf2, empirical_icdf, histogram, invert_monotone, marginal_cdf_x, sample_from_icdf,
    MonotoneCurve, ParticleEnsemble, PercentileGrid,
};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn curve(values: Vec<f64>) -> MonotoneCurve {
    MonotoneCurve::new(PercentileGrid::new(values.len()).unwrap(), values).unwrap()
}

#[test]
fn percentile_grid_uses_midpoints() {
    let g = PercentileGrid::new(4).unwrap();
    let pts = g.points();
    assert_eq!(pts, vec![0.125, 0.375, 0.625, 0.875]);
}

#[test]
fn icdf_subsamples_sorted_positions() {
    let e = ParticleEnsemble::from_1d(vec![3.0, 1.0, 4.0, 2.0]).unwrap();
    let c = empirical_icdf(&e, 2).unwrap();
    assert_eq!(c.values(), &[1.0, 3.0]);
}

#[test]
fn icdf_with_k_equal_n_returns_sorted_input() {
    let e = ParticleEnsemble::from_1d(vec![0.3, -1.0, 2.5, 0.0, 1.1]).unwrap();
    let c = empirical_icdf(&e, 5).unwrap();
    assert_eq!(c.values(), &[-1.0, 0.0, 0.3, 1.1, 2.5]);
}

#[test]
fn icdf_rejects_more_nodes_than_particles() {
    let e = ParticleEnsemble::from_1d(vec![5.0]).unwrap();
    assert!(empirical_icdf(&e, 2).is_err());
}

#[test]
fn sampling_a_constant_curve_repeats_the_constant() {
    let c = curve(vec![2.5; 10]);
    let s = sample_from_icdf(&c, 7).unwrap();
    assert!(s.as_1d().unwrap().iter().all(|&x| x == 2.5));
}

#[test]
fn sampling_the_identity_curve_hits_midpoints() {
    // Curve nodes sit at the percentile midpoints with value = percentile,
    // so interpolation reproduces the identity and N=2 samples at {1/4, 3/4}.
    let g = PercentileGrid::new(99).unwrap();
    let vals = g.points();
    let c = MonotoneCurve::new(g, vals).unwrap();
    let s = sample_from_icdf(&c, 2).unwrap();
    let xs = s.as_1d().unwrap();
    assert!((xs[0] - 0.25).abs() < 1e-12 && (xs[1] - 0.75).abs() < 1e-12);
}

#[test]
fn icdf_round_trip_drift_stays_within_local_curve_modulus() {
    // Re-extracting an ICDF from its own samples may only move each node
    // within the curve's local variation around that percentile.
    let k = 50;
    let n = 10_007;
    let vals: Vec<f64> = (0..k).map(|i| ((i as f64 + 0.5) / k as f64 * 2.0 - 1.0).atanh()).collect();
    let c = curve(vals.clone());
    let back = empirical_icdf(&sample_from_icdf(&c, n).unwrap(), k).unwrap();
    for i in 0..k {
        let lo = if i == 0 { vals[0] } else { vals[i - 1] };
        let hi = if i == k - 1 { vals[k - 1] } else { vals[i + 1] };
        let bound = (hi - lo) + 1e-12;
        assert!(
            (back.values()[i] - vals[i]).abs() <= bound,
            "node {i} drifted {} > {bound}",
            (back.values()[i] - vals[i]).abs()
        );
    }
}

#[test]
fn invert_interpolates_linearly() {
    assert_eq!(invert_monotone(&[0.0, 1.0], &[0.0, 1.0], 0.5).unwrap(), 0.5);
}

#[test]
fn invert_clamps_below_the_table() {
    assert_eq!(invert_monotone(&[2.0, 3.0], &[0.4, 0.9], 0.1).unwrap(), 2.0);
}

#[test]
fn invert_returns_left_edge_of_flat_segments() {
    // Table (0,0),(0,1),(1,2): the abscissa is flat at 0 over the first two
    // nodes; probing the shared value must give the left edge.
    assert_eq!(invert_monotone(&[0.0, 0.0, 1.0], &[0.0, 1.0, 2.0], 0.0).unwrap(), 0.0);
}

#[test]
fn invert_rejects_empty_tables() {
    assert!(invert_monotone(&[], &[], 0.5).is_err());
}

#[test]
fn cdf2_counts_lower_left_quadrant() {
    let e = ParticleEnsemble::from_2d(vec![[0.0, 0.0]]).unwrap();
    let c = empirical_cdf2(&e, &[-1.0, 1.0], &[-1.0, 1.0]).unwrap();
    assert_eq!(c.at(0, 0), 0.0);
    assert_eq!(c.at(1, 1), 1.0);
}

#[test]
fn cdf2_of_unit_square_corners() {
    let pts = vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
    let e = ParticleEnsemble::from_2d(pts).unwrap();
    let c = empirical_cdf2(&e, &[0.5, 1.5], &[0.5, 1.5]).unwrap();
    assert_eq!(c.at(0, 0), 0.25);
    assert_eq!(c.at(1, 1), 1.0);
}

#[test]
fn cdf2_rejects_unsorted_grids() {
    let e = ParticleEnsemble::from_2d(vec![[0.0, 0.0]]).unwrap();
    assert!(empirical_cdf2(&e, &[1.0, 0.0], &[0.0, 1.0]).is_err());
}

#[test]
fn cdf2_of_product_uniforms_matches_product_law() {
    let mut rng = StdRng::seed_from_u64(42);
    let pts: Vec<[f64; 2]> = (0..10_000).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    let e = ParticleEnsemble::from_2d(pts).unwrap();
    let grid: Vec<f64> = (0..21).map(|i| i as f64 / 20.0).collect();
    let c = empirical_cdf2(&e, &grid, &grid).unwrap();
    let mut worst = 0.0f64;
    for (i, &x) in grid.iter().enumerate() {
        for (j, &y) in grid.iter().enumerate() {
            worst = worst.max((c.at(i, j) - x * y).abs());
        }
    }
    assert!(worst <= 0.03, "empirical product CDF off by {worst}");
}

#[test]
fn marginal_is_the_top_row_and_ends_at_one() {
    let mut rng = StdRng::seed_from_u64(7);
    let pts: Vec<[f64; 2]> = (0..2000).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    let e = ParticleEnsemble::from_2d(pts).unwrap();
    let grid: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
    let c = empirical_cdf2(&e, &grid, &grid).unwrap();
    let m = marginal_cdf_x(&c).unwrap();
    assert_eq!(*m.last().unwrap(), 1.0);
    for w in m.windows(2) {
        assert!(w[1] >= w[0]);
    }
    for (i, &x) in grid.iter().enumerate() {
        assert!((m[i] - x).abs() <= 0.05, "marginal at {x} was {}", m[i]);
    }
}

#[test]
fn marginal_of_single_particle_is_a_step() {
    let e = ParticleEnsemble::from_2d(vec![[0.0, 0.0]]).unwrap();
    let c = empirical_cdf2(&e, &[-1.0, 0.0, 1.0], &[-1.0, 0.0, 1.0]).unwrap();
    assert_eq!(marginal_cdf_x(&c).unwrap(), vec![0.0, 1.0, 1.0]);
}

#[test]
fn conditional_of_a_product_cdf_is_the_y_marginal() {
    // Analytic product grid: F(x,y) = x * y^2 on [0,1]^2. Conditioning on any
    // interior x must return y^2 regardless of x.
    let n = 41;
    let xg: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let yg = xg.clone();
    let mut vals = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            vals[i * n + j] = xg[i] * yg[j] * yg[j];
        }
    }
    let c = ot_steady::measures::Cdf2Grid::new(xg.clone(), yg.clone(), vals, 1000).unwrap();
    for &x in &[0.25, 0.5, 0.8] {
        let cond = conditional_cdf_y(&c, x).unwrap();
        for j in 0..n {
            assert!(
                (cond[j] - yg[j] * yg[j]).abs() <= 1e-6,
                "conditional at x={x}, y={} was {}, want {}",
                yg[j],
                cond[j],
                yg[j] * yg[j]
            );
        }
    }
}

#[test]
fn conditional_fails_where_the_cdf_is_flat_in_x() {
    // All mass at x < 0: the CDF does not vary across the x >= 1 nodes, so the
    // conditional there is undefined.
    let e = ParticleEnsemble::from_2d(vec![[-2.0, 0.0], [-2.5, 0.5]]).unwrap();
    let c = empirical_cdf2(&e, &[-3.0, 1.0, 2.0, 3.0], &[-1.0, 0.25, 1.0]).unwrap();
    assert!(conditional_cdf_y(&c, 2.0).is_err());
}

#[test]
fn histogram_counts_and_sums() {
    let e = ParticleEnsemble::from_1d(vec![0.5]).unwrap();
    assert_eq!(histogram(&e, &[0.0, 1.0]).unwrap(), vec![1]);
    let e2 = ParticleEnsemble::from_1d(vec![5.0, 6.0]).unwrap();
    assert_eq!(histogram(&e2, &[0.0, 0.5, 1.0]).unwrap(), vec![0, 0]);
}

#[test]
fn histogram_of_uniforms_is_flat_within_binomial_bands() {
    let mut rng = StdRng::seed_from_u64(3);
    let xs: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
    let e = ParticleEnsemble::from_1d(xs).unwrap();
    let edges: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
    let counts = histogram(&e, &edges).unwrap();
    assert_eq!(counts.iter().sum::<u64>(), 10_000);
    let sigma = (10_000.0f64 * 0.1 * 0.9).sqrt();
    for &c in &counts {
        assert!((c as f64 - 1000.0).abs() <= 4.0 * sigma, "bin count {c} outside 4 sigma");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn icdf_output_is_nondecreasing(xs in prop::collection::vec(-1e3f64..1e3, 2..60), k in 2usize..20) {
        prop_assume!(k <= xs.len());
        let e = ParticleEnsemble::from_1d(xs).unwrap();
        let c = empirical_icdf(&e, k).unwrap();
        for w in c.values().windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn icdf_samples_come_out_sorted(vals in prop::collection::vec(-50f64..50.0, 2..30), n in 1usize..40) {
        let mut v = vals;
        v.sort_by(f64::total_cmp);
        let c = curve(v);
        let s = sample_from_icdf(&c, n).unwrap();
        for w in s.as_1d().unwrap().windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn cdf2_is_monotone_and_bounded(pts in prop::collection::vec((-2f64..2.0, -2f64..2.0), 1..40)) {
        let pts: Vec<[f64; 2]> = pts.into_iter().map(|(a, b)| [a, b]).collect();
        let e = ParticleEnsemble::from_2d(pts).unwrap();
        let grid: Vec<f64> = (0..9).map(|i| -2.0 + 0.5 * i as f64).collect();
        let c = empirical_cdf2(&e, &grid, &grid).unwrap();
        for i in 0..grid.len() {
            for j in 0..grid.len() {
                let v = c.at(i, j);
                prop_assert!((0.0..=1.0).contains(&v));
                if i > 0 {
                    prop_assert!(v >= c.at(i - 1, j));
                }
                if j > 0 {
                    prop_assert!(v >= c.at(i, j - 1));
                }
            }
        }
    }

    #[test]
    fn inversion_is_the_identity_at_nodes_of_strict_tables(
        raw in prop::collection::vec(1e-3f64..1.0, 2..20),
        x0 in -5f64..5.0,
    ) {
        // Build a strictly increasing table by cumulating positive gaps.
        let mut xs = Vec::with_capacity(raw.len());
        let mut ys = Vec::with_capacity(raw.len());
        let mut x = x0;
        let mut y = 0.0;
        for (i, g) in raw.iter().enumerate() {
            x += g;
            y += 0.5 + (i as f64 % 3.0) * 0.1;
            xs.push(x);
            ys.push(y);
        }
        for i in 0..xs.len() {
            let back = invert_monotone(&xs, &ys, ys[i]).unwrap();
            prop_assert!((back - xs[i]).abs() <= 1e-12 * xs[i].abs().max(1.0));
        }
    }
}
