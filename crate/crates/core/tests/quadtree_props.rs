mod common;

use common::{random_dense, rng, tree};
use proptest::prelude::*;
use spamm_core::quadtree::DEFAULT_BIN_EDGES;
use spamm_core::{DenseMatrix, Layout, QuadTreeMatrix};

fn matrix_strategy(max_n: usize) -> impl Strategy<Value = (DenseMatrix, usize)> {
    (1..=max_n, prop::sample::select(vec![1usize, 2, 4, 8]), any::<u64>(), 0.0..0.9f64).prop_map(|(n, nb, seed, zeros)| {
        let mut r = rng(seed);
        (random_dense(n, zeros, &mut r), nb)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn build_round_trips_exactly((m, nb) in matrix_strategy(40)) {
        let t = tree(&m, nb);
        prop_assert_eq!(t.to_dense(), m.clone());
        prop_assert!(t.n_padded().is_power_of_two());
        prop_assert!(t.n_padded() >= m.n().max(nb));
        prop_assert!(t.verify_norms().valid);
    }

    #[test]
    fn root_norm_is_frobenius((m, nb) in matrix_strategy(40)) {
        let t = tree(&m, nb);
        let f = m.frobenius_norm();
        prop_assert!((t.root_norm() - f).abs() <= 1e-12 * f.max(1e-300));
    }

    #[test]
    fn tier_norms_combine_upward((m, nb) in matrix_strategy(32)) {
        let t = tree(&m, nb);
        for tier in 0..t.depth() {
            let s = 1usize << tier;
            let parent = t.tier_norms(tier);
            let child = t.tier_norms(tier + 1);
            for i in 0..s {
                for j in 0..s {
                    let sq: f64 = (0..4).map(|q| child[(2 * i + q / 2) * 2 * s + 2 * j + q % 2].powi(2)).sum();
                    prop_assert!((parent[i * s + j] - sq.sqrt()).abs() <= 1e-12 * parent[i * s + j].max(1e-300));
                }
            }
        }
    }

    #[test]
    fn add_scaled_matches_dense((m, nb) in matrix_strategy(30), seed in any::<u64>(), alpha in -2.0..2.0f64, beta in -2.0..2.0f64) {
        let other = random_dense(m.n(), 0.5, &mut rng(seed));
        let s = QuadTreeMatrix::add_scaled(alpha, &tree(&m, nb), beta, &tree(&other, nb)).unwrap();
        let expected = DenseMatrix::from_fn(m.n(), |i, j| alpha * m.get(i, j) + beta * other.get(i, j));
        prop_assert_eq!(s.to_dense(), expected);
        prop_assert!(s.verify_norms().valid);
    }

    #[test]
    fn trace_of_product_matches_triple_loop((m, nb) in matrix_strategy(24), seed in any::<u64>()) {
        let other = random_dense(m.n(), 0.3, &mut rng(seed));
        let expected = common::triple_loop(&m, &other).trace();
        let got = tree(&m, nb).trace_of_product(&tree(&other, nb)).unwrap();
        prop_assert!((got - expected).abs() <= 1e-12 * (1.0 + expected.abs()) * m.n() as f64);
    }

    #[test]
    fn occupancy_counts_every_native_element((m, nb) in matrix_strategy(30)) {
        let occ = tree(&m, nb).occupancy_stats(&DEFAULT_BIN_EDGES).unwrap();
        prop_assert_eq!(occ.total(), (m.n() * m.n()) as u64);
        let zeros = m.as_slice().iter().filter(|v| **v == 0.0).count() as u64;
        prop_assert_eq!(occ.counts[0], zeros);
    }
}

#[test]
fn occupancy_matches_dense_histogram() {
    let mut r = rng(8);
    let m = DenseMatrix::from_fn(50, |i, j| {
        let e = -((i.abs_diff(j) % 13) as f64);
        rand::Rng::gen_range(&mut r, 0.5..1.0) * 10f64.powf(e)
    });
    let edges = DEFAULT_BIN_EDGES;
    let occ = tree(&m, 4).occupancy_stats(&edges).unwrap();
    let mut expected = vec![0u64; edges.len() - 1];
    for &v in m.as_slice() {
        let a = v.abs();
        let bin = (0..edges.len() - 1).find(|&b| a >= edges[b] && (a < edges[b + 1] || (b == edges.len() - 2 && a <= edges[b + 1])));
        if let Some(b) = bin {
            expected[b] += 1;
        }
    }
    assert_eq!(occ.counts, expected);
    let json = serde_json::to_value(occ.records()).unwrap();
    assert_eq!(json[0]["bin_lo"], 0.0);
    assert!(json[0].get("count").is_some());
}

#[test]
fn relayout_preserves_values() {
    let m = random_dense(37, 0.2, &mut rng(1));
    let t = tree(&m, 4);
    let u = t.relayout(Layout::new(8, 16).unwrap()).unwrap();
    assert_eq!(u.to_dense(), m);
    assert_eq!(u.block_size(), 8);
    assert!(u.verify_norms().valid);
}
