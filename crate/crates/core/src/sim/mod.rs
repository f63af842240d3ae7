//! Discrete model of tiered over-decomposition: occlusion over task arrays,
//! a three-phase bulk-synchronous multiply, static and persistence-based
//! placement, and scaling fits.

mod amdahl;
mod graph;
mod simulate;

pub use amdahl::{amdahl_fit, AmdahlFit};
pub use graph::{build_chare_graph, ChareGraph, CommEdge, MatrixKind, TaskRecord};
pub use simulate::{
    assign_static, greedy_comm_balance, parallel_efficiency, simulate_iteration, Assignment, CostModel, PhaseBreakdown,
    SimReport, StaticStrategy,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;
    use crate::quadtree::{Layout, QuadTreeMatrix};
    use crate::spamm::{convolution_census, SpammTolerance};

    fn dense_tree(n: usize, nb: usize) -> QuadTreeMatrix {
        let m = DenseMatrix::from_fn(n, |i, j| 1.0 + ((i * 7 + j * 3) % 5) as f64);
        QuadTreeMatrix::build_from_dense(&m, Layout::with_block(nb).unwrap()).unwrap()
    }

    fn banded_tree(n: usize, nb: usize) -> QuadTreeMatrix {
        let m = DenseMatrix::from_fn(n, |i, j| 0.5f64.powi(i.abs_diff(j) as i32));
        QuadTreeMatrix::build_from_dense(&m, Layout::with_block(nb).unwrap()).unwrap()
    }

    #[test]
    fn exact_dense_enables_everything() {
        let a = dense_tree(32, 4);
        let g = build_chare_graph(&a, &a, SpammTolerance::EXACT, 8).unwrap();
        assert_eq!(g.leaf_tier(), 2);
        for t in 0..=2 {
            assert_eq!(g.enabled_count(t), 1 << (3 * t));
        }
        assert_eq!(g.total_leaf_products(), 8u64.pow(3));
    }

    #[test]
    fn huge_tau_disables_all() {
        let a = dense_tree(32, 4);
        let g = build_chare_graph(&a, &a, SpammTolerance::new(1e30).unwrap(), 8).unwrap();
        assert!(!g.task(0, 0, 0, 0).enabled);
        assert_eq!(g.enabled_leaf_count(), 0);
        assert_eq!(g.tiers[1].len(), 8);
    }

    #[test]
    fn census_cross_check() {
        let a = banded_tree(64, 4);
        for tau in [1e-2, 1e-4, 1e-8] {
            let tau = SpammTolerance::new(tau).unwrap();
            let g = build_chare_graph(&a, &a, tau, 16).unwrap();
            let census = convolution_census(&a, &a, tau).unwrap();
            assert_eq!(g.enabled_leaf_count() as u64, census.visited()[g.leaf_tier() as usize]);
            assert_eq!(g.total_leaf_products(), census.leaf_products);
            assert!(g.parent_gating_holds());
        }
    }

    #[test]
    fn chunk_size_validation() {
        let a = dense_tree(16, 4);
        assert!(build_chare_graph(&a, &a, SpammTolerance::EXACT, 32).is_err());
        assert!(build_chare_graph(&a, &a, SpammTolerance::EXACT, 2).is_err());
        assert!(build_chare_graph(&a, &a, SpammTolerance::EXACT, 6).is_err());
    }

    #[test]
    fn id_space_is_contiguous() {
        let a = dense_tree(32, 4);
        let g = build_chare_graph(&a, &a, SpammTolerance::EXACT, 8).unwrap();
        assert_eq!(g.n_tasks(), 1 + 8 + 64);
        assert_eq!(g.n_chares(), 73 + 3 * (1 + 4 + 16));
        assert_eq!(g.task_id(2, 3, 3, 3), 72);
        assert_eq!(g.matrix_id(MatrixKind::A, 0, 0, 0), 73);
        assert_eq!(g.matrix_id(MatrixKind::C, 2, 3, 3), g.n_chares() - 1);
        assert_eq!(g.locate_task(9), Some((2, 0)));
        assert_eq!(g.locate_task(73), None);
    }

    #[test]
    fn single_pe_has_no_cross_traffic() {
        let a = banded_tree(64, 4);
        let g = build_chare_graph(&a, &a, SpammTolerance::new(1e-6).unwrap(), 16).unwrap();
        let model = CostModel { phase_overhead_seconds: 0.25, ..CostModel::default() };
        let asg = assign_static(&g, 1, StaticStrategy::Block).unwrap();
        assert!(asg.pe_of.iter().all(|&q| q == 0));
        let r = simulate_iteration(&g, &asg, &model).unwrap();
        assert_eq!(r.cross_pe_messages, 0);
        let expected = r.per_pe_busy[0] + 0.75;
        assert!((r.makespan - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn round_robin_spreads_evenly() {
        let a = dense_tree(8, 4);
        let g = build_chare_graph(&a, &a, SpammTolerance::EXACT, 4).unwrap();
        let asg = assign_static(&g, 4, StaticStrategy::RoundRobin).unwrap();
        let leaf: Vec<usize> = (0..8).map(|x| asg.pe_of[g.task_id(1, x >> 2, (x >> 1) & 1, x & 1)]).collect();
        for q in 0..4 {
            assert_eq!(leaf.iter().filter(|&&v| v == q).count(), 2);
        }
    }

    #[test]
    fn block_is_monotone() {
        let a = banded_tree(64, 4);
        let g = build_chare_graph(&a, &a, SpammTolerance::EXACT, 8).unwrap();
        let asg = assign_static(&g, 7, StaticStrategy::Block).unwrap();
        assert!(asg.pe_of.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
    }

    #[test]
    fn work_is_conserved_across_assignments() {
        let a = banded_tree(128, 4);
        let g = build_chare_graph(&a, &a, SpammTolerance::new(1e-4).unwrap(), 16).unwrap();
        let model = CostModel::default();
        let base = simulate_iteration(&g, &assign_static(&g, 1, StaticStrategy::Block).unwrap(), &model).unwrap();
        let total: f64 = base.per_pe_busy.iter().sum();
        for p in [2, 5, 8] {
            for asg in [
                assign_static(&g, p, StaticStrategy::Block).unwrap(),
                assign_static(&g, p, StaticStrategy::RoundRobin).unwrap(),
                greedy_comm_balance(&g, &base, p, 1e-9).unwrap(),
            ] {
                let r = simulate_iteration(&g, &asg, &model).unwrap();
                let sum: f64 = r.per_pe_busy.iter().sum();
                assert!((sum - total).abs() <= 1e-9 * total);
            }
        }
    }

    #[test]
    fn uncovered_assignment_rejected() {
        let a = dense_tree(8, 4);
        let g = build_chare_graph(&a, &a, SpammTolerance::EXACT, 4).unwrap();
        let short = Assignment { p: 2, pe_of: vec![0; 3] };
        assert!(matches!(simulate_iteration(&g, &short, &CostModel::default()), Err(crate::Error::UncoveredChare(3))));
        let bad = Assignment { p: 2, pe_of: vec![2; g.n_chares()] };
        assert!(simulate_iteration(&g, &bad, &CostModel::default()).is_err());
    }

    #[test]
    fn efficiency_arithmetic() {
        assert_eq!(parallel_efficiency(100.0, 31.25, 4).unwrap(), 0.8);
        assert_eq!(parallel_efficiency(7.0, 7.0, 1).unwrap(), 1.0);
        assert!(parallel_efficiency(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn amdahl_exact_and_constant() {
        let pts: Vec<(f64, f64)> = (0..=10).map(|m| {
            let p = 24.0 * 2f64.powi(m);
            (p, 1.95 + 1981.0 / p)
        }).collect();
        let fit = amdahl_fit(&pts).unwrap();
        assert!((fit.t_s - 1.95).abs() < 1e-9 && (fit.t_p - 1981.0).abs() < 1e-6);
        let flat = amdahl_fit(&[(1.0, 3.0), (2.0, 3.0), (4.0, 3.0)]).unwrap();
        assert!(flat.t_p.abs() < 1e-12 && flat.p_even.abs() < 1e-12);
        assert!(amdahl_fit(&[(4.0, 1.0), (4.0, 2.0)]).is_err());
    }

    #[test]
    fn amdahl_clamps_negative_serial_part() {
        let fit = amdahl_fit(&[(1.0, 10.0), (2.0, 4.0), (4.0, 1.5)]).unwrap();
        assert!(fit.clamped);
        assert_eq!(fit.t_s, 0.0);
        assert!(fit.p_even.is_infinite());
        assert_eq!(serde_json::to_value(fit).unwrap()["p_even"], serde_json::Value::Null);
    }
}
