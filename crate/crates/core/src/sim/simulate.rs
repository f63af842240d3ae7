use serde::{Deserialize, Serialize};

use super::graph::{ChareGraph, MatrixKind};
use crate::error::{Error, Result};

/// Placement of every chare id on a processing element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub p: usize,
    pub pe_of: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticStrategy {
    Block,
    RoundRobin,
}

/// Deterministic map of all chare ids onto `p` PEs.
pub fn assign_static(graph: &ChareGraph, p: usize, strategy: StaticStrategy) -> Result<Assignment> {
    if p == 0 {
        return Err(Error::InvalidArgument("P must be at least 1".into()));
    }
    let total = graph.n_chares();
    let pe_of = (0..total)
        .map(|id| match strategy {
            StaticStrategy::Block => id * p / total,
            StaticStrategy::RoundRobin => id % p,
        })
        .collect();
    Ok(Assignment { p, pe_of })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub per_flop_seconds: f64,
    pub per_message_seconds: f64,
    pub per_byte_seconds: f64,
    /// Fixed cost added once per phase.
    pub phase_overhead_seconds: f64,
    /// Flops charged to an enabled task for its norm test.
    pub occlude_flops: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            per_flop_seconds: 1e-10,
            per_message_seconds: 1e-6,
            per_byte_seconds: 1e-9,
            phase_overhead_seconds: 0.0,
            occlude_flops: 2.0,
        }
    }
}

impl CostModel {
    /// Default model with `per_flop_seconds` measured from repeated leaf
    /// products of size `block_size`.
    pub fn calibrated(block_size: usize) -> Self {
        use crate::quadtree::LeafBlock;
        use std::time::Instant;
        let n = block_size.max(1);
        let values: Vec<f64> = (0..n * n).map(|x| 1.0 + (x % 7) as f64 * 0.125).collect();
        let a = LeafBlock::from_values(n, values).expect("square block");
        let mut c = LeafBlock::zeros(n);
        let reps = (1usize << 24) / (n * n * n) + 1;
        let started = Instant::now();
        for _ in 0..reps {
            crate::spamm::leaf_gemm(&a, &a, &mut c);
        }
        let seconds = started.elapsed().as_secs_f64();
        let flops = reps as f64 * 2.0 * (n * n * n) as f64;
        Self {
            per_flop_seconds: (seconds / flops).max(f64::MIN_POSITIVE),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseBreakdown {
    pub occlude: f64,
    pub multiply: f64,
    pub store: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub p: usize,
    /// Compute seconds per PE over all phases.
    pub per_pe_busy: Vec<f64>,
    /// Message handling seconds per PE over all phases.
    pub per_pe_comm: Vec<f64>,
    pub makespan: f64,
    pub total_messages: u64,
    pub cross_pe_messages: u64,
    pub phase_breakdown: PhaseBreakdown,
    /// Compute seconds attributed to each chare id.
    pub measured_load: Vec<f64>,
}

impl SimReport {
    /// `max / mean` of `per_pe_busy`.
    pub fn busy_imbalance(&self) -> f64 {
        let max = self.per_pe_busy.iter().copied().fold(0.0, f64::max);
        let mean = self.per_pe_busy.iter().sum::<f64>() / self.p as f64;
        if mean > 0.0 {
            max / mean
        } else {
            1.0
        }
    }
}

struct Phase {
    busy: Vec<f64>,
    comm: Vec<f64>,
}

impl Phase {
    fn new(p: usize) -> Self {
        Self { busy: vec![0.0; p], comm: vec![0.0; p] }
    }

    fn span(&self) -> f64 {
        self.busy.iter().zip(&self.comm).map(|(b, c)| b + c).fold(0.0, f64::max)
    }
}

struct Tally<'a> {
    assignment: &'a Assignment,
    model: &'a CostModel,
    total: u64,
    cross: u64,
}

impl Tally<'_> {
    // A message from `src` to `dst`; cross-PE traffic is charged to the receiver.
    fn send(&mut self, phase: &mut Phase, src: usize, dst: usize, bytes: u64) {
        self.total += 1;
        let (ps, pd) = (self.assignment.pe_of[src], self.assignment.pe_of[dst]);
        if ps != pd {
            self.cross += 1;
            phase.comm[pd] += self.model.per_message_seconds + bytes as f64 * self.model.per_byte_seconds;
        }
    }
}

const NORM_MESSAGE_BYTES: u64 = 8;

/// Bulk-synchronous simulation of one product: occlusion tier by tier,
/// then the chunk multiplies, then accumulation into `C`.
pub fn simulate_iteration(graph: &ChareGraph, assignment: &Assignment, model: &CostModel) -> Result<SimReport> {
    let p = assignment.p;
    if p == 0 {
        return Err(Error::InvalidArgument("P must be at least 1".into()));
    }
    if assignment.pe_of.len() < graph.n_chares() {
        return Err(Error::UncoveredChare(assignment.pe_of.len()));
    }
    if let Some(id) = assignment.pe_of.iter().position(|&pe| pe >= p) {
        return Err(Error::UncoveredChare(id));
    }
    let mut tally = Tally { assignment, model, total: 0, cross: 0 };
    let mut load = vec![0.0; graph.n_chares()];
    let mut busy = vec![0.0; p];
    let mut comm = vec![0.0; p];
    let mut breakdown = PhaseBreakdown::default();
    let absorb = |phase: Phase, busy: &mut Vec<f64>, comm: &mut Vec<f64>| {
        for q in 0..p {
            busy[q] += phase.busy[q];
            comm[q] += phase.comm[q];
        }
        phase.span()
    };

    // occlude: every task hears from its parent, enabled tasks fetch norms
    for t in 0..=graph.leaf_tier() {
        let s = graph.side(t);
        let mut phase = Phase::new(p);
        for i in 0..s {
            for j in 0..s {
                for k in 0..s {
                    let id = graph.task_id(t, i, j, k);
                    if t > 0 {
                        let parent = graph.task_id(t - 1, i / 2, j / 2, k / 2);
                        tally.send(&mut phase, parent, id, NORM_MESSAGE_BYTES);
                    }
                    if graph.task(t, i, j, k).enabled {
                        tally.send(&mut phase, graph.matrix_id(MatrixKind::A, t, i, k), id, NORM_MESSAGE_BYTES);
                        tally.send(&mut phase, graph.matrix_id(MatrixKind::B, t, k, j), id, NORM_MESSAGE_BYTES);
                        let seconds = model.occlude_flops * model.per_flop_seconds;
                        phase.busy[assignment.pe_of[id]] += seconds;
                        load[id] += seconds;
                    }
                }
            }
        }
        breakdown.occlude += absorb(phase, &mut busy, &mut comm);
    }

    // multiply: chunk operands are fetched, then multiplied
    let lt = graph.leaf_tier();
    let s = graph.side(lt);
    let leaf_elems = (graph.block_size * graph.block_size) as f64;
    let mut phase = Phase::new(p);
    for i in 0..s {
        for j in 0..s {
            for k in 0..s {
                let record = graph.task(lt, i, j, k);
                if !record.enabled {
                    continue;
                }
                let id = graph.task_id(lt, i, j, k);
                let a_bytes = graph.matrix_bytes[lt as usize][0][i * s + k];
                let b_bytes = graph.matrix_bytes[lt as usize][1][k * s + j];
                tally.send(&mut phase, graph.matrix_id(MatrixKind::A, lt, i, k), id, a_bytes);
                tally.send(&mut phase, graph.matrix_id(MatrixKind::B, lt, k, j), id, b_bytes);
                let seconds = record.cost * model.per_flop_seconds;
                phase.busy[assignment.pe_of[id]] += seconds;
                load[id] += seconds;
            }
        }
    }
    breakdown.multiply = absorb(phase, &mut busy, &mut comm);

    // store: partial products are accumulated by the owning C chare
    let mut phase = Phase::new(p);
    for i in 0..s {
        for j in 0..s {
            let c_id = graph.matrix_id(MatrixKind::C, lt, i, j);
            for k in 0..s {
                let record = graph.task(lt, i, j, k);
                if !record.enabled {
                    continue;
                }
                let id = graph.task_id(lt, i, j, k);
                let bytes = record.output_leaves as u64 * (leaf_elems as u64) * 8;
                tally.send(&mut phase, id, c_id, bytes);
                let seconds = record.output_leaves as f64 * leaf_elems * model.per_flop_seconds;
                phase.busy[assignment.pe_of[c_id]] += seconds;
                load[c_id] += seconds;
            }
        }
    }
    breakdown.store = absorb(phase, &mut busy, &mut comm);

    let makespan = breakdown.occlude + breakdown.multiply + breakdown.store + 3.0 * model.phase_overhead_seconds;
    Ok(SimReport {
        p,
        per_pe_busy: busy,
        per_pe_comm: comm,
        makespan,
        total_messages: tally.total,
        cross_pe_messages: tally.cross,
        phase_breakdown: breakdown,
        measured_load: load,
    })
}

/// Persistence-based rebalancing: chares in descending order of the load
/// measured in `prior`, each placed on the PE minimizing
/// `busy - comm_weight * bytes_shared_with_chares_already_there`.
pub fn greedy_comm_balance(graph: &ChareGraph, prior: &SimReport, p: usize, comm_weight: f64) -> Result<Assignment> {
    if p == 0 {
        return Err(Error::InvalidArgument("P must be at least 1".into()));
    }
    let n = graph.n_chares();
    if prior.measured_load.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "prior report has {} loads for {} chares",
            prior.measured_load.len(),
            n
        )));
    }
    let mut neighbours: Vec<Vec<(usize, u64)>> = vec![Vec::new(); n];
    if comm_weight != 0.0 {
        for e in &graph.comm_edges {
            neighbours[e.task].push((e.chare, e.bytes));
            neighbours[e.chare].push((e.task, e.bytes));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| prior.measured_load[y].total_cmp(&prior.measured_load[x]).then(x.cmp(&y)));

    const UNPLACED: usize = usize::MAX;
    let mut pe_of = vec![UNPLACED; n];
    let mut projected = vec![0.0; p];
    let mut shared = vec![0.0; p];
    for id in order {
        if comm_weight != 0.0 {
            shared.iter_mut().for_each(|s| *s = 0.0);
            for &(other, bytes) in &neighbours[id] {
                if pe_of[other] != UNPLACED {
                    shared[pe_of[other]] += bytes as f64;
                }
            }
        }
        let mut best = 0;
        let mut best_score = f64::INFINITY;
        for q in 0..p {
            let score = projected[q] - comm_weight * shared[q];
            if score < best_score {
                best = q;
                best_score = score;
            }
        }
        pe_of[id] = best;
        projected[best] += prior.measured_load[id];
    }
    Ok(Assignment { p, pe_of })
}

/// `T(1) / (P * T(P))`.
pub fn parallel_efficiency(t1: f64, tp: f64, p: usize) -> Result<f64> {
    if !(t1 > 0.0 && tp > 0.0) || p == 0 {
        return Err(Error::InvalidArgument("times and P must be positive".into()));
    }
    Ok(t1 / (p as f64 * tp))
}
