use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadtree::{Node, QuadTreeMatrix};
use crate::spamm::SpammTolerance;

/// One `(i, j, k)` convolution task at some tier.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskRecord {
    pub enabled: bool,
    /// Estimated flops; non-zero only for enabled leaf-tier tasks.
    pub cost: f64,
    /// Leaf-block products inside the chunk product (leaf tier only).
    pub leaf_products: u64,
    /// Distinct `C` leaf blocks written (leaf tier only).
    pub output_leaves: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixKind {
    A,
    B,
    C,
}

/// Communication between a leaf task and a matrix chare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommEdge {
    pub task: usize,
    pub chare: usize,
    pub bytes: u64,
}

/// Tiered task decomposition of one product `C = A * B`.
///
/// Chare ids form one flat space: tasks tier by tier (index
/// `(i * s + j) * s + k` within a tier of side `s`), then per tier the `A`,
/// `B` and `C` matrix chares in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChareGraph {
    pub n_padded: usize,
    pub block_size: usize,
    pub chunk_size: usize,
    pub tau: f64,
    /// `tiers[t]` holds `8^t` task records.
    pub tiers: Vec<Vec<TaskRecord>>,
    /// `matrix_bytes[t][kind]` holds `4^t` data sizes.
    pub matrix_bytes: Vec<[Vec<u64>; 3]>,
    pub comm_edges: Vec<CommEdge>,
    task_offsets: Vec<usize>,
    matrix_offsets: Vec<usize>,
    n_chares: usize,
}

const NORM_BYTES: u64 = 8;

impl ChareGraph {
    pub fn leaf_tier(&self) -> u32 {
        (self.tiers.len() - 1) as u32
    }

    pub fn side(&self, tier: u32) -> usize {
        1 << tier
    }

    pub fn n_tasks(&self) -> usize {
        self.task_offsets[self.tiers.len()]
    }

    pub fn n_chares(&self) -> usize {
        self.n_chares
    }

    pub fn task_id(&self, tier: u32, i: usize, j: usize, k: usize) -> usize {
        let s = self.side(tier);
        self.task_offsets[tier as usize] + (i * s + j) * s + k
    }

    pub fn matrix_id(&self, kind: MatrixKind, tier: u32, i: usize, j: usize) -> usize {
        let s = self.side(tier);
        self.matrix_offsets[tier as usize] + kind as usize * s * s + i * s + j
    }

    /// Tier and in-tier index of a task id.
    pub fn locate_task(&self, id: usize) -> Option<(u32, usize)> {
        if id >= self.n_tasks() {
            return None;
        }
        let t = self.task_offsets.partition_point(|&o| o <= id) - 1;
        Some((t as u32, id - self.task_offsets[t]))
    }

    pub fn task(&self, tier: u32, i: usize, j: usize, k: usize) -> &TaskRecord {
        let s = self.side(tier);
        &self.tiers[tier as usize][(i * s + j) * s + k]
    }

    pub fn enabled_count(&self, tier: u32) -> usize {
        self.tiers[tier as usize].iter().filter(|t| t.enabled).count()
    }

    pub fn enabled_leaf_count(&self) -> usize {
        self.enabled_count(self.leaf_tier())
    }

    pub fn total_leaf_products(&self) -> u64 {
        self.tiers[self.leaf_tier() as usize].iter().map(|t| t.leaf_products).sum()
    }

    /// True when no enabled task has a disabled parent.
    pub fn parent_gating_holds(&self) -> bool {
        (1..self.tiers.len() as u32).all(|t| {
            let s = self.side(t);
            (0..s).all(|i| {
                (0..s).all(|j| {
                    (0..s).all(|k| !self.task(t, i, j, k).enabled || self.task(t - 1, i / 2, j / 2, k / 2).enabled)
                })
            })
        })
    }
}

struct SubCensus {
    leaf_products: u64,
    touched: Vec<bool>,
}

// Leaf products under one retained chunk pair; `touched` marks C leaves.
fn sub_census(a: &Node, b: &Node, tau: SpammTolerance, row: usize, col: usize, span: usize, out: &mut SubCensus) {
    if a.is_leaf() {
        out.leaf_products += 1;
        out.touched[row * span + col] = true;
        return;
    }
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                if let (Some(x), Some(y)) = (a.child(i, k), b.child(k, j)) {
                    if tau.retains(x.norm(), y.norm()) {
                        sub_census(x, y, tau, row * 2 + i, col * 2 + j, span, out);
                    }
                }
            }
        }
    }
}

fn leaves_under(node: Option<&Node>) -> u64 {
    match node {
        None => 0,
        Some(n) if n.is_leaf() => 1,
        Some(n) => (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| leaves_under(n.child(i, j))).sum(),
    }
}

/// Breadth-first occlusion sweep down to the chunk tier
/// `log2(n_padded / chunk_size)`. Disabled tasks are kept as records.
pub fn build_chare_graph(a: &QuadTreeMatrix, b: &QuadTreeMatrix, tau: SpammTolerance, chunk_size: usize) -> Result<ChareGraph> {
    if a.n_padded() != b.n_padded() || a.block_size() != b.block_size() || a.n_native() != b.n_native() {
        return Err(Error::ShapeMismatch("chare graph operands differ in shape".into()));
    }
    let n_padded = a.n_padded();
    let nb = a.block_size();
    if !chunk_size.is_power_of_two() {
        return Err(Error::ChunkSizeNotPowerOfTwo(chunk_size));
    }
    if chunk_size < nb {
        return Err(Error::ChunkSmallerThanBlock { chunk: chunk_size, block: nb });
    }
    if chunk_size > n_padded {
        return Err(Error::InvalidArgument(format!("chunk size {chunk_size} exceeds padded size {n_padded}")));
    }
    let leaf_tier = (n_padded / chunk_size).trailing_zeros();
    let leaf_span = chunk_size / nb;
    let leaf_bytes = (nb * nb * 8) as u64;

    let mut tiers: Vec<Vec<TaskRecord>> = Vec::with_capacity(leaf_tier as usize + 1);
    let mut matrix_bytes = Vec::with_capacity(leaf_tier as usize + 1);
    for t in 0..=leaf_tier {
        let s = 1usize << t;
        let na = a.tier_norms(t);
        let nbm = b.tier_norms(t);
        let mut records = vec![TaskRecord::default(); s * s * s];
        for i in 0..s {
            for j in 0..s {
                for k in 0..s {
                    let parent_on = t == 0 || tiers[t as usize - 1][((i / 2) * (s / 2) + j / 2) * (s / 2) + k / 2].enabled;
                    records[(i * s + j) * s + k].enabled = parent_on && tau.retains(na[i * s + k], nbm[k * s + j]);
                }
            }
        }
        let bytes_of = |m: &QuadTreeMatrix, i: usize, j: usize| -> u64 {
            let node = m.node_at(t, i, j);
            if t == leaf_tier {
                leaves_under(node) * leaf_bytes
            } else if node.is_some() {
                NORM_BYTES
            } else {
                0
            }
        };
        let a_bytes: Vec<u64> = (0..s * s).map(|x| bytes_of(a, x / s, x % s)).collect();
        let b_bytes: Vec<u64> = (0..s * s).map(|x| bytes_of(b, x / s, x % s)).collect();
        tiers.push(records);
        matrix_bytes.push([a_bytes, b_bytes, vec![0; s * s]]);
    }

    let mut task_offsets = vec![0usize];
    for t in &tiers {
        task_offsets.push(task_offsets.last().unwrap() + t.len());
    }
    let mut matrix_offsets = Vec::new();
    let mut next = *task_offsets.last().unwrap();
    for t in 0..=leaf_tier {
        matrix_offsets.push(next);
        next += 3 << (2 * t);
    }
    let mut graph = ChareGraph {
        n_padded,
        block_size: nb,
        chunk_size,
        tau: tau.value(),
        tiers,
        matrix_bytes,
        comm_edges: Vec::new(),
        task_offsets,
        matrix_offsets,
        n_chares: next,
    };

    let s = 1usize << leaf_tier;
    let lt = leaf_tier as usize;
    let mut c_touched: Vec<Vec<bool>> = vec![Vec::new(); s * s];
    for i in 0..s {
        for j in 0..s {
            for k in 0..s {
                if !graph.tiers[lt][(i * s + j) * s + k].enabled {
                    continue;
                }
                let (Some(x), Some(y)) = (a.node_at(leaf_tier, i, k), b.node_at(leaf_tier, k, j)) else {
                    continue;
                };
                let mut census = SubCensus { leaf_products: 0, touched: vec![false; leaf_span * leaf_span] };
                sub_census(x, y, tau, 0, 0, leaf_span, &mut census);
                let output = census.touched.iter().filter(|&&v| v).count() as u32;
                let record = &mut graph.tiers[lt][(i * s + j) * s + k];
                record.leaf_products = census.leaf_products;
                record.output_leaves = output;
                record.cost = census.leaf_products as f64 * 2.0 * (nb * nb * nb) as f64;

                let union = &mut c_touched[i * s + j];
                if union.is_empty() {
                    *union = census.touched;
                } else {
                    for (u, v) in union.iter_mut().zip(&census.touched) {
                        *u |= *v;
                    }
                }
                let task = graph.task_id(leaf_tier, i, j, k);
                graph.comm_edges.push(CommEdge {
                    task,
                    chare: graph.matrix_id(MatrixKind::A, leaf_tier, i, k),
                    bytes: graph.matrix_bytes[lt][0][i * s + k],
                });
                graph.comm_edges.push(CommEdge {
                    task,
                    chare: graph.matrix_id(MatrixKind::B, leaf_tier, k, j),
                    bytes: graph.matrix_bytes[lt][1][k * s + j],
                });
                graph.comm_edges.push(CommEdge {
                    task,
                    chare: graph.matrix_id(MatrixKind::C, leaf_tier, i, j),
                    bytes: output as u64 * leaf_bytes,
                });
            }
        }
    }
    for (x, touched) in c_touched.iter().enumerate() {
        graph.matrix_bytes[lt][2][x] = touched.iter().filter(|&&v| v).count() as u64 * leaf_bytes;
    }
    Ok(graph)
}
