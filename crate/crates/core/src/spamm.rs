//! Sparse approximate matrix multiply over quadtrees.
//!
//! The product walks the 3-D convolution space `(i, k, j)` tier by tier and
//! descends into a subproduct only while `||A_ik|| * ||B_kj|| > tau`.
//! Retained leaf pairs are multiplied densely and accumulated into `C`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadtree::{child_norm, LeafBlock, Node, NodeData, QuadTreeMatrix};

/// Culling threshold; non-negative and finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SpammTolerance(f64);

impl SpammTolerance {
    pub const EXACT: SpammTolerance = SpammTolerance(0.0);

    pub fn new(tau: f64) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidArgument(format!("tolerance must be finite and >= 0, got {tau}")));
        }
        Ok(Self(tau))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// The culling predicate: a subproduct is kept iff its norm product
    /// strictly exceeds the tolerance.
    #[inline]
    pub fn retains(self, a_norm: f64, b_norm: f64) -> bool {
        a_norm * b_norm > self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MultiplyMode {
    #[default]
    Serial,
    Tasked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiplyOptions {
    pub mode: MultiplyMode,
    /// Fix the accumulation order into every `C` node (k ascending at each
    /// tier) so results are bit-reproducible across runs, modes and worker
    /// counts.
    pub deterministic: bool,
    /// Size of a dedicated worker pool; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Tasks are spawned while a subproblem edge exceeds this length.
    /// `None` uses the matrix chunk size.
    pub spawn_cutoff: Option<usize>,
}

impl Default for MultiplyOptions {
    fn default() -> Self {
        Self {
            mode: MultiplyMode::Serial,
            deterministic: true,
            workers: None,
            spawn_cutoff: None,
        }
    }
}

impl MultiplyOptions {
    pub fn serial() -> Self {
        Self::default()
    }

    pub fn tasked(workers: usize, deterministic: bool) -> Self {
        Self {
            mode: MultiplyMode::Tasked,
            deterministic,
            workers: Some(workers),
            spawn_cutoff: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierStats {
    pub t: u32,
    pub visited: u64,
    pub culled: u64,
}

/// Convolution-space counters of one product.
///
/// At every tier a candidate `(i, k, j)` triple whose parent was retained is
/// either visited (norm product above tau) or culled. Absent (zero)
/// quadrants count as culled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductStats {
    pub tau: f64,
    pub tiers: Vec<TierStats>,
    pub leaf_products: u64,
    pub flop_estimate: u64,
    pub wall_seconds: f64,
}

impl ProductStats {
    pub fn visited(&self) -> Vec<u64> {
        self.tiers.iter().map(|t| t.visited).collect()
    }

    pub fn culled(&self) -> Vec<u64> {
        self.tiers.iter().map(|t| t.culled).collect()
    }

    pub fn total_culled(&self) -> u64 {
        self.tiers.iter().map(|t| t.culled).sum()
    }

    /// Equality of every counter, ignoring wall time.
    pub fn same_counts(&self, other: &ProductStats) -> bool {
        self.tau == other.tau
            && self.tiers == other.tiers
            && self.leaf_products == other.leaf_products
            && self.flop_estimate == other.flop_estimate
    }
}

struct Counters {
    visited: Vec<AtomicU64>,
    culled: Vec<AtomicU64>,
}

impl Counters {
    fn new(depth: u32) -> Self {
        let n = depth as usize + 1;
        Self {
            visited: (0..n).map(|_| AtomicU64::new(0)).collect(),
            culled: (0..n).map(|_| AtomicU64::new(0)).collect(),
        }
    }

    #[inline]
    fn visit(&self, tier: u32) {
        self.visited[tier as usize].fetch_add(1, Ordering::Relaxed);
    }

    #[inline]
    fn cull(&self, tier: u32) {
        self.culled[tier as usize].fetch_add(1, Ordering::Relaxed);
    }

    fn into_stats(self, tau: f64, block_size: usize, started: Instant) -> ProductStats {
        let tiers: Vec<TierStats> = self
            .visited
            .iter()
            .zip(&self.culled)
            .enumerate()
            .map(|(t, (v, c))| TierStats {
                t: t as u32,
                visited: v.load(Ordering::Relaxed),
                culled: c.load(Ordering::Relaxed),
            })
            .collect();
        let leaf_products = tiers.last().map_or(0, |t| t.visited);
        let nb = block_size as u64;
        ProductStats {
            tau,
            tiers,
            leaf_products,
            flop_estimate: leaf_products * 2 * nb * nb * nb,
            wall_seconds: started.elapsed().as_secs_f64(),
        }
    }
}

/// `c += a * b` with a plain i-k-j triple loop.
///
/// The i-k-j order streams rows of `b` and `c`; each `c[i][j]` receives its
/// `k` contributions in ascending `k`. Wider SIMD paths are picked at run
/// time; they vectorize across `j` only, so every path rounds identically.
pub fn leaf_gemm(a: &LeafBlock, b: &LeafBlock, c: &mut LeafBlock) {
    let n = a.size();
    assert!(b.size() == n && c.size() == n, "leaf block size mismatch");
    let (av, bv) = (a.values(), b.values());
    let cv = c.values_mut();
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: feature presence checked above
            return unsafe { gemm_avx512(n, av, bv, cv) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: feature presence checked above
            return unsafe { gemm_avx2(n, av, bv, cv) };
        }
    }
    gemm_ikj(n, av, bv, cv);
}

#[inline(always)]
fn gemm_ikj(n: usize, av: &[f64], bv: &[f64], cv: &mut [f64]) {
    match n {
        4 => gemm_fixed::<4>(av, bv, cv),
        8 => gemm_fixed::<8>(av, bv, cv),
        16 => gemm_fixed::<16>(av, bv, cv),
        32 => gemm_fixed::<32>(av, bv, cv),
        64 => gemm_fixed::<64>(av, bv, cv),
        _ => gemm_any(n, av, bv, cv),
    }
}

#[inline(always)]
fn gemm_any(n: usize, av: &[f64], bv: &[f64], cv: &mut [f64]) {
    for i in 0..n {
        let c_row = &mut cv[i * n..(i + 1) * n];
        for k in 0..n {
            let aik = av[i * n + k];
            let b_row = &bv[k * n..(k + 1) * n];
            for (cij, bkj) in c_row.iter_mut().zip(b_row) {
                *cij += aik * bkj;
            }
        }
    }
}

// Same arithmetic as `gemm_any`, with the row of `c` held in registers.
#[inline(always)]
fn gemm_fixed<const N: usize>(av: &[f64], bv: &[f64], cv: &mut [f64]) {
    let (a_rows, _) = av.as_chunks::<N>();
    let (b_rows, _) = bv.as_chunks::<N>();
    let (c_rows, _) = cv.as_chunks_mut::<N>();
    for (a_row, c_row) in a_rows.iter().zip(c_rows.iter_mut()) {
        let mut acc = *c_row;
        for (aik, b_row) in a_row.iter().zip(b_rows) {
            for j in 0..N {
                acc[j] += aik * b_row[j];
            }
        }
        *c_row = acc;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn gemm_avx512(n: usize, av: &[f64], bv: &[f64], cv: &mut [f64]) {
    gemm_ikj(n, av, bv, cv)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_avx2(n: usize, av: &[f64], bv: &[f64], cv: &mut [f64]) {
    gemm_ikj(n, av, bv, cv)
}

fn check_operands(a: &QuadTreeMatrix, b: &QuadTreeMatrix) -> Result<()> {
    if a.n_padded() != b.n_padded() || a.block_size() != b.block_size() || a.n_native() != b.n_native() {
        return Err(Error::ShapeMismatch(format!(
            "multiply: ({}, padded {}, N_b {}) x ({}, padded {}, N_b {})",
            a.n_native(),
            a.n_padded(),
            a.block_size(),
            b.n_native(),
            b.n_padded(),
            b.block_size()
        )));
    }
    Ok(())
}

struct Context<'a> {
    tau: SpammTolerance,
    depth: u32,
    n_padded: usize,
    block_size: usize,
    spawn_cutoff: usize,
    counters: &'a Counters,
}

impl Context<'_> {
    #[inline]
    fn spawns_at(&self, tier: u32) -> bool {
        (self.n_padded >> tier) > self.spawn_cutoff
    }
}

/// `C = A * B` under tolerance `tau`.
pub fn multiply(
    a: &QuadTreeMatrix,
    b: &QuadTreeMatrix,
    tau: SpammTolerance,
    options: &MultiplyOptions,
) -> Result<(QuadTreeMatrix, ProductStats)> {
    check_operands(a, b)?;
    let started = Instant::now();
    let counters = Counters::new(a.depth());
    let ctx = Context {
        tau,
        depth: a.depth(),
        n_padded: a.n_padded(),
        block_size: a.block_size(),
        spawn_cutoff: options.spawn_cutoff.unwrap_or(a.chunk_size()).max(a.block_size()),
        counters: &counters,
    };

    let root = match (a.root(), b.root()) {
        (Some(ra), Some(rb)) if tau.retains(ra.norm(), rb.norm()) => {
            counters.visit(0);
            match options.mode {
                MultiplyMode::Serial => {
                    let mut c = None;
                    ordered_product(ra, rb, &mut c, &ctx, false);
                    c.and_then(finalize)
                }
                MultiplyMode::Tasked => run_in_pool(options.workers, || {
                    if options.deterministic {
                        let mut c = None;
                        ordered_product(ra, rb, &mut c, &ctx, true);
                        c.and_then(finalize)
                    } else {
                        let c = SharedNode::new(0, &ctx);
                        locked_product(ra, rb, &c, &ctx);
                        c.into_node()
                    }
                })?,
            }
        }
        _ => {
            counters.cull(0);
            None
        }
    };
    let stats = counters.into_stats(tau.value(), a.block_size(), started);
    Ok((a.with_root(root), stats))
}

fn run_in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| Error::ThreadPool(e.to_string()))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn empty_node(tier: u32, depth: u32, block_size: usize) -> Box<Node> {
    let data = if tier == depth {
        NodeData::Leaf(LeafBlock::zeros(block_size))
    } else {
        NodeData::Internal([None, None, None, None])
    };
    Box::new(Node { tier, norm: 0.0, data })
}

/// Depth-first product with a fixed accumulation order. `a` and `b` are a
/// retained pair at the same tier; `c` is the output slot for their
/// quadrant. With `parallel`, the four output quadrants run as independent
/// tasks (they own disjoint parts of `C`) while the two `k` terms of each
/// quadrant run one after the other.
fn ordered_product(a: &Node, b: &Node, c: &mut Option<Box<Node>>, ctx: &Context<'_>, parallel: bool) {
    let tier = a.tier();
    let c = c.get_or_insert_with(|| empty_node(tier, ctx.depth, ctx.block_size));
    match (&a.data, &b.data, &mut c.data) {
        (NodeData::Leaf(x), NodeData::Leaf(y), NodeData::Leaf(z)) => leaf_gemm(x, y, z),
        (NodeData::Internal(_), NodeData::Internal(_), NodeData::Internal(slots)) => {
            let quadrant = |i: usize, j: usize, slot: &mut Option<Box<Node>>, par: bool| {
                for k in 0..2 {
                    let (x, y) = (a.child(i, k), b.child(k, j));
                    match (x, y) {
                        (Some(x), Some(y)) if ctx.tau.retains(x.norm(), y.norm()) => {
                            ctx.counters.visit(tier + 1);
                            ordered_product(x, y, slot, ctx, par);
                        }
                        _ => ctx.counters.cull(tier + 1),
                    }
                }
            };
            let [c00, c01, c10, c11] = slots;
            if parallel && ctx.spawns_at(tier) {
                rayon::join(
                    || rayon::join(|| quadrant(0, 0, c00, true), || quadrant(0, 1, c01, true)),
                    || rayon::join(|| quadrant(1, 0, c10, true), || quadrant(1, 1, c11, true)),
                );
            } else {
                quadrant(0, 0, c00, false);
                quadrant(0, 1, c01, false);
                quadrant(1, 0, c10, false);
                quadrant(1, 1, c11, false);
            }
        }
        _ => unreachable!("operands and result disagree on tier structure"),
    }
}

/// Recomputes norms bottom-up and prunes exactly-zero nodes.
#[allow(clippy::boxed_local)]
fn finalize(node: Box<Node>) -> Option<Box<Node>> {
    let Node { tier, data, .. } = *node;
    match data {
        NodeData::Leaf(block) => {
            if block.is_zero() {
                None
            } else {
                Some(Box::new(Node::leaf(tier, block)))
            }
        }
        NodeData::Internal(children) => Node::internal(tier, children.map(|c| c.and_then(finalize))).map(Box::new),
    }
}

/// Result node of the unordered tasked product: children are created once
/// on first use and each leaf accumulates under its own lock.
struct SharedNode {
    tier: u32,
    children: [OnceLock<Box<SharedNode>>; 4],
    leaf: Option<Mutex<LeafBlock>>,
}

impl SharedNode {
    fn new(tier: u32, ctx: &Context<'_>) -> Self {
        Self {
            tier,
            children: Default::default(),
            leaf: (tier == ctx.depth).then(|| Mutex::new(LeafBlock::zeros(ctx.block_size))),
        }
    }

    fn child(&self, q: usize, ctx: &Context<'_>) -> &SharedNode {
        self.children[q].get_or_init(|| Box::new(SharedNode::new(self.tier + 1, ctx)))
    }

    fn into_node(self) -> Option<Box<Node>> {
        if let Some(leaf) = self.leaf {
            let block = leaf.into_inner().unwrap_or_else(|e| e.into_inner());
            if block.is_zero() {
                return None;
            }
            return Some(Box::new(Node::leaf(self.tier, block)));
        }
        let children = self.children.map(|c| c.into_inner().and_then(|n| n.into_node()));
        Node::internal(self.tier, children).map(Box::new)
    }
}

fn locked_product(a: &Node, b: &Node, c: &SharedNode, ctx: &Context<'_>) {
    let tier = a.tier();
    if let (Some(x), Some(y), Some(lock)) = (a.as_leaf(), b.as_leaf(), c.leaf.as_ref()) {
        let mut acc = lock.lock().unwrap_or_else(|e| e.into_inner());
        leaf_gemm(x, y, &mut acc);
        return;
    }
    let mut retained: Vec<(usize, &Node, &Node)> = Vec::with_capacity(8);
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                match (a.child(i, k), b.child(k, j)) {
                    (Some(x), Some(y)) if ctx.tau.retains(x.norm(), y.norm()) => {
                        ctx.counters.visit(tier + 1);
                        retained.push((2 * i + j, x, y));
                    }
                    _ => ctx.counters.cull(tier + 1),
                }
            }
        }
    }
    if ctx.spawns_at(tier) {
        rayon::scope(|s| {
            for &(q, x, y) in &retained {
                let target = c.child(q, ctx);
                s.spawn(move |_| locked_product(x, y, target, ctx));
            }
        });
    } else {
        for &(q, x, y) in &retained {
            locked_product(x, y, c.child(q, ctx), ctx);
        }
    }
}

/// Counts the convolution space of `A * B` without any arithmetic.
///
/// The sweep is breadth-first, one tier at a time; the counters equal the
/// ones `multiply` reports because a node's fate depends only on its own
/// two norms and on its parent having been retained.
pub fn convolution_census(a: &QuadTreeMatrix, b: &QuadTreeMatrix, tau: SpammTolerance) -> Result<ProductStats> {
    check_operands(a, b)?;
    let started = Instant::now();
    let depth = a.depth();
    let counters = Counters::new(depth);
    let mut frontier: Vec<(&Node, &Node)> = Vec::new();
    match (a.root(), b.root()) {
        (Some(x), Some(y)) if tau.retains(x.norm(), y.norm()) => {
            counters.visit(0);
            frontier.push((x, y));
        }
        _ => counters.cull(0),
    }
    for tier in 1..=depth {
        let last = tier == depth;
        let mut next = Vec::new();
        for &(pa, pb) in &frontier {
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        let (x, y) = (pa.child(i, k), pb.child(k, j));
                        if tau.retains(child_norm(x), child_norm(y)) {
                            counters.visit(tier);
                            if !last {
                                if let (Some(x), Some(y)) = (x, y) {
                                    next.push((x, y));
                                }
                            }
                        } else {
                            counters.cull(tier);
                        }
                    }
                }
            }
        }
        frontier = next;
    }
    Ok(counters.into_stats(tau.value(), a.block_size(), started))
}
