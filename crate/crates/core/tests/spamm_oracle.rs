mod common;

use common::{block_sparse, random_dense, rng, tree, triple_loop};
use proptest::prelude::*;
use spamm_core::matgen::{gen_decay_matrix, DecaySpec};
use spamm_core::{convolution_census, multiply, DenseMatrix, MultiplyOptions, SpammTolerance};

fn tol(t: f64) -> SpammTolerance {
    SpammTolerance::new(t).unwrap()
}

fn decay_tree(n: usize, lambda: f64, seed: u64, nb: usize) -> spamm_core::QuadTreeMatrix {
    tree(&gen_decay_matrix(n, &DecaySpec::exponential(1.0, lambda, seed)).unwrap(), nb)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn exact_product_matches_triple_loop(n in 1usize..70, nb in prop::sample::select(vec![1usize, 2, 4, 8, 16]), seed in any::<u64>(), keep in 0.2..1.0f64) {
        let mut r = rng(seed);
        let a = block_sparse(n, nb.max(2), keep, &mut r);
        let b = random_dense(n, 0.3, &mut r);
        let (c, stats) = multiply(&tree(&a, nb), &tree(&b, nb), SpammTolerance::EXACT, &MultiplyOptions::serial()).unwrap();
        let oracle = triple_loop(&a, &b);
        let bound = 1e-13 * a.frobenius_norm() * b.frobenius_norm();
        prop_assert!(c.to_dense().max_abs_diff(&oracle) <= bound.max(1e-300));
        prop_assert!(c.verify_norms().valid);
        prop_assert_eq!(stats.visited().len() as u32, c.depth() + 1);
    }

    #[test]
    fn culling_is_monotone_in_tau(lambda in 0.2..0.95f64, seed in any::<u64>(), exps in prop::collection::vec(-14.0..0.0f64, 4)) {
        let a = decay_tree(60, lambda, seed, 4);
        let mut taus: Vec<f64> = exps.iter().map(|e| 10f64.powf(*e)).collect();
        taus.sort_by(f64::total_cmp);
        let counts: Vec<Vec<u64>> = taus.iter().map(|&t| convolution_census(&a, &a, tol(t)).unwrap().visited()).collect();
        for w in counts.windows(2) {
            for (lo, hi) in w[0].iter().zip(&w[1]) {
                prop_assert!(hi <= lo);
            }
        }
    }

    #[test]
    fn tier_fanout_is_at_most_eight(lambda in 0.1..0.95f64, seed in any::<u64>(), t in -12.0..-1.0f64, nb in prop::sample::select(vec![2usize, 4, 8])) {
        let a = decay_tree(50, lambda, seed, nb);
        let s = convolution_census(&a, &a, tol(10f64.powf(t))).unwrap();
        for tier in &s.tiers {
            let parent = if tier.t == 0 { 1 } else { s.tiers[tier.t as usize - 1].visited };
            if tier.t > 0 {
                prop_assert_eq!(tier.visited + tier.culled, 8 * parent);
            }
        }
        prop_assert_eq!(s.leaf_products, *s.visited().last().unwrap());
    }

    #[test]
    fn census_agrees_with_multiply(lambda in 0.2..0.95f64, seed in any::<u64>(), t in -12.0..-2.0f64) {
        let a = decay_tree(40, lambda, seed, 4);
        let b = decay_tree(40, lambda, seed ^ 1, 4);
        let (_, stats) = multiply(&a, &b, tol(10f64.powf(t)), &MultiplyOptions::serial()).unwrap();
        let census = convolution_census(&a, &b, tol(10f64.powf(t))).unwrap();
        prop_assert!(stats.same_counts(&census));
    }

    #[test]
    fn tasked_deterministic_is_bitwise_serial(lambda in 0.2..0.9f64, seed in any::<u64>(), t in -12.0..-3.0f64, workers in 1usize..5) {
        let a = decay_tree(72, lambda, seed, 4);
        let b = decay_tree(72, lambda, seed ^ 7, 4);
        let (s, ss) = multiply(&a, &b, tol(10f64.powf(t)), &MultiplyOptions::serial()).unwrap();
        let mut opts = MultiplyOptions::tasked(workers, true);
        opts.spawn_cutoff = Some(8);
        let (p, ps) = multiply(&a, &b, tol(10f64.powf(t)), &opts).unwrap();
        prop_assert!(ss.same_counts(&ps));
        let (sd, pd) = (s.to_dense(), p.to_dense());
        prop_assert!(sd.as_slice().iter().zip(pd.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(p.verify_norms().valid);
    }
}

#[test]
fn nondeterministic_tasked_agrees_to_rounding() {
    let a = decay_tree(128, 0.3, 3, 8);
    let mut opts = MultiplyOptions::tasked(3, false);
    opts.spawn_cutoff = Some(16);
    let (s, ss) = multiply(&a, &a, tol(1e-9), &MultiplyOptions::serial()).unwrap();
    let (p, ps) = multiply(&a, &a, tol(1e-9), &opts).unwrap();
    assert!(ss.same_counts(&ps));
    assert!(s.to_dense().max_abs_diff(&p.to_dense()) <= 1e-13 * a.frobenius_norm().powi(2));
    assert!(p.verify_norms().valid);
}

#[test]
fn error_bounded_by_culled_norm_products() {
    let a = decay_tree(96, 0.4, 11, 8);
    let exact = triple_loop(&a.to_dense(), &a.to_dense());
    for t in [1e-10, 1e-8, 1e-6, 1e-4] {
        let (c, stats) = multiply(&a, &a, tol(t), &MultiplyOptions::serial()).unwrap();
        let cd = c.to_dense();
        let diff = DenseMatrix::from_fn(96, |i, j| cd.get(i, j) - exact.get(i, j));
        let err = diff.frobenius_norm();
        // each culled leaf-or-branch product contributes at most tau
        assert!(err <= t * stats.total_culled() as f64 + 1e-12, "tau {t}: {err}");
    }
}

#[test]
fn dense_workload_has_no_culling() {
    let a = tree(&DenseMatrix::from_fn(64, |i, j| 1.0 + (i + j) as f64), 8);
    let s = convolution_census(&a, &a, tol(1e-6)).unwrap();
    assert_eq!(s.total_culled(), 0);
    assert_eq!(s.leaf_products, 8 * 8 * 8);
    assert_eq!(s.flop_estimate, 2 * 8u64.pow(3) * 512);
}

#[test]
fn tau_above_root_product_culls_everything() {
    let a = decay_tree(32, 0.8, 1, 4);
    let big = a.root_norm() * a.root_norm() * 2.0;
    let (c, s) = multiply(&a, &a, tol(big), &MultiplyOptions::serial()).unwrap();
    assert_eq!(s.leaf_products, 0);
    assert_eq!(c.root_norm(), 0.0);
    assert!(c.to_dense().as_slice().iter().all(|v| *v == 0.0));
}
