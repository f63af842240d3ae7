//! Quadtree matrices with hierarchical Frobenius norms.
//!
//! A matrix of native dimension `n` is padded with implicit zeros to
//! `n_padded = 2^d * block_size` and split recursively into 2 x 2 quadrants
//! until the quadrants reach `block_size`. Every node stores the Frobenius
//! norm of the submatrix it spans. A missing child is an exactly-zero
//! submatrix, so padding is never materialized.

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Leaf and chunk edge lengths. Both are powers of two with `block <= chunk`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    block_size: usize,
    chunk_size: usize,
}

impl Layout {
    pub const DEFAULT_BLOCK_SIZE: usize = 16;
    pub const DEFAULT_CHUNK_SIZE: usize = 256;

    pub fn new(block_size: usize, chunk_size: usize) -> Result<Self> {
        if !block_size.is_power_of_two() {
            return Err(Error::BlockSizeNotPowerOfTwo(block_size));
        }
        if !chunk_size.is_power_of_two() {
            return Err(Error::ChunkSizeNotPowerOfTwo(chunk_size));
        }
        if chunk_size < block_size {
            return Err(Error::ChunkSmallerThanBlock {
                chunk: chunk_size,
                block: block_size,
            });
        }
        Ok(Self {
            block_size,
            chunk_size,
        })
    }

    /// Layout whose chunk tier coincides with the leaf tier.
    pub fn with_block(block_size: usize) -> Result<Self> {
        Self::new(block_size, block_size.max(Self::DEFAULT_CHUNK_SIZE))
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            block_size: Self::DEFAULT_BLOCK_SIZE,
            chunk_size: Self::DEFAULT_CHUNK_SIZE,
        }
    }
}

/// Dense `N_b x N_b` leaf payload, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafBlock {
    size: usize,
    values: Vec<f64>,
}

impl LeafBlock {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            values: vec![0.0; size * size],
        }
    }

    pub fn from_values(size: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != size * size {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {size} x {size} block",
                values.len()
            )));
        }
        Ok(Self { size, values })
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        frobenius(&self.values)
    }
}

/// Scaled sum of squares, so tiny values do not underflow to a zero norm.
pub(crate) fn frobenius(values: &[f64]) -> f64 {
    let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let sum: f64 = values
        .iter()
        .map(|v| {
            let x = v / scale;
            x * x
        })
        .sum();
    scale * sum.sqrt()
}

/// Norm of a parent from the norms of its children.
pub(crate) fn combine_norms(children: &[f64]) -> f64 {
    frobenius(children)
}

#[derive(Debug, Clone)]
pub enum NodeData {
    /// Children in row-major quadrant order: (0,0), (0,1), (1,0), (1,1).
    Internal([Option<Box<Node>>; 4]),
    Leaf(LeafBlock),
}

#[derive(Debug, Clone)]
pub struct Node {
    pub(crate) tier: u32,
    pub(crate) norm: f64,
    pub(crate) data: NodeData,
}

impl Node {
    pub(crate) fn leaf(tier: u32, block: LeafBlock) -> Self {
        let norm = block.norm();
        Self {
            tier,
            norm,
            data: NodeData::Leaf(block),
        }
    }

    /// Internal node with its norm computed from the children; `None` when
    /// every child is absent.
    pub(crate) fn internal(tier: u32, children: [Option<Box<Node>>; 4]) -> Option<Self> {
        if children.iter().all(Option::is_none) {
            return None;
        }
        let norms = [0, 1, 2, 3].map(|q| children[q].as_ref().map_or(0.0, |c| c.norm));
        Some(Self {
            tier,
            norm: combine_norms(&norms),
            data: NodeData::Internal(children),
        })
    }

    #[inline]
    pub fn tier(&self) -> u32 {
        self.tier
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn data(&self) -> &NodeData {
        &self.data
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.data, NodeData::Leaf(_))
    }

    pub fn as_leaf(&self) -> Option<&LeafBlock> {
        match &self.data {
            NodeData::Leaf(b) => Some(b),
            NodeData::Internal(_) => None,
        }
    }

    /// Quadrant `(i, j)` with `i, j` in `{0, 1}`.
    #[inline]
    pub fn child(&self, i: usize, j: usize) -> Option<&Node> {
        match &self.data {
            NodeData::Internal(c) => c[2 * i + j].as_deref(),
            NodeData::Leaf(_) => None,
        }
    }
}

#[inline]
pub(crate) fn child_norm(node: Option<&Node>) -> f64 {
    node.map_or(0.0, |n| n.norm)
}

/// Square matrix stored as a quadtree over a zero-padded power-of-two grid.
#[derive(Debug, Clone)]
pub struct QuadTreeMatrix {
    n_native: usize,
    n_padded: usize,
    block_size: usize,
    chunk_size: usize,
    depth: u32,
    root: Option<Box<Node>>,
}

fn padded_dimension(n: usize, block_size: usize) -> usize {
    n.next_power_of_two().max(block_size)
}

impl QuadTreeMatrix {
    /// Empty (all-zero) matrix.
    pub fn zeros(n: usize, layout: Layout) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty);
        }
        let n_padded = padded_dimension(n, layout.block_size);
        Ok(Self {
            n_native: n,
            n_padded,
            block_size: layout.block_size,
            chunk_size: layout.chunk_size.min(n_padded),
            depth: (n_padded / layout.block_size).trailing_zeros(),
            root: None,
        })
    }

    pub(crate) fn with_root(&self, root: Option<Box<Node>>) -> Self {
        Self {
            root,
            ..self.shape_only()
        }
    }

    fn shape_only(&self) -> Self {
        Self {
            n_native: self.n_native,
            n_padded: self.n_padded,
            block_size: self.block_size,
            chunk_size: self.chunk_size,
            depth: self.depth,
            root: None,
        }
    }

    pub fn build_from_dense(dense: &DenseMatrix, layout: Layout) -> Result<Self> {
        let mut m = Self::zeros(dense.n(), layout)?;
        m.root = build_node(dense, &m, 0, 0, 0, m.n_padded).map(Box::new);
        Ok(m)
    }

    /// Row-major builder, rejecting ragged or non-square input.
    pub fn build_from_rows(rows: &[Vec<f64>], layout: Layout) -> Result<Self> {
        let dense = DenseMatrix::from_rows(rows)?;
        Self::build_from_dense(&dense, layout)
    }

    pub fn identity(n: usize, layout: Layout) -> Result<Self> {
        let mut m = Self::zeros(n, layout)?;
        m.root = identity_node(&m, 0, 0, m.n_padded).map(Box::new);
        Ok(m)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n_native);
        self.for_each_leaf(|row0, col0, leaf| {
            let nb = leaf.size();
            for r in 0..nb {
                let i = row0 + r;
                if i >= self.n_native {
                    break;
                }
                for c in 0..nb {
                    let j = col0 + c;
                    if j >= self.n_native {
                        break;
                    }
                    out.set(i, j, leaf.get(r, c));
                }
            }
        });
        out
    }

    /// Re-blocks this matrix under a different layout.
    pub fn relayout(&self, layout: Layout) -> Result<Self> {
        Self::build_from_dense(&self.to_dense(), layout)
    }

    #[inline]
    pub fn n_native(&self) -> usize {
        self.n_native
    }

    #[inline]
    pub fn n_padded(&self) -> usize {
        self.n_padded
    }

    #[inline]
    pub fn block_size(&self) -> usize {
        self.block_size
    }

    #[inline]
    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn layout(&self) -> Layout {
        Layout {
            block_size: self.block_size,
            chunk_size: self.chunk_size,
        }
    }

    /// Tier of the leaves; the root is tier 0.
    #[inline]
    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Tier at which nodes span `chunk_size x chunk_size`.
    pub fn chunk_tier(&self) -> u32 {
        (self.n_padded / self.chunk_size).trailing_zeros()
    }

    pub fn root(&self) -> Option<&Node> {
        self.root.as_deref()
    }

    pub fn root_norm(&self) -> f64 {
        child_norm(self.root())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.root_norm()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i >= self.n_native || j >= self.n_native {
            return 0.0;
        }
        let bi = i / self.block_size;
        let bj = j / self.block_size;
        self.leaf_at(bi, bj)
            .map_or(0.0, |l| l.get(i % self.block_size, j % self.block_size))
    }

    /// Leaf at block coordinates `(bi, bj)`, if materialized.
    pub fn leaf_at(&self, bi: usize, bj: usize) -> Option<&LeafBlock> {
        self.node_at(self.depth, bi, bj).and_then(Node::as_leaf)
    }

    /// Node at `tier` with quadrant coordinates `(i, j)` in `[0, 2^tier)`.
    pub fn node_at(&self, tier: u32, i: usize, j: usize) -> Option<&Node> {
        let mut node = self.root()?;
        for level in (0..tier).rev() {
            let qi = (i >> level) & 1;
            let qj = (j >> level) & 1;
            node = node.child(qi, qj)?;
        }
        Some(node)
    }

    /// Row-major `2^t x 2^t` grid of node norms at tier `t`.
    pub fn tier_norms(&self, tier: u32) -> Vec<f64> {
        let side = 1usize << tier;
        let mut out = vec![0.0; side * side];
        fn walk(node: &Node, tier: u32, i: usize, j: usize, side: usize, out: &mut [f64]) {
            if node.tier == tier {
                out[i * side + j] = node.norm;
                return;
            }
            for qi in 0..2 {
                for qj in 0..2 {
                    if let Some(c) = node.child(qi, qj) {
                        walk(c, tier, 2 * i + qi, 2 * j + qj, side, out);
                    }
                }
            }
        }
        if let Some(r) = self.root() {
            walk(r, tier.min(self.depth), 0, 0, side, &mut out);
        }
        out
    }

    /// Number of materialized leaves.
    pub fn leaf_count(&self) -> usize {
        let mut count = 0;
        self.for_each_leaf(|_, _, _| count += 1);
        count
    }

    /// Visits every materialized leaf with its top-left padded row/column.
    pub fn for_each_leaf(&self, mut f: impl FnMut(usize, usize, &LeafBlock)) {
        fn walk(node: &Node, row: usize, col: usize, size: usize, f: &mut dyn FnMut(usize, usize, &LeafBlock)) {
            match &node.data {
                NodeData::Leaf(b) => f(row, col, b),
                NodeData::Internal(children) => {
                    let half = size / 2;
                    for (q, c) in children.iter().enumerate() {
                        if let Some(c) = c {
                            walk(c, row + (q >> 1) * half, col + (q & 1) * half, half, f);
                        }
                    }
                }
            }
        }
        if let Some(r) = self.root() {
            walk(r, 0, 0, self.n_padded, &mut f);
        }
    }

    fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.n_native != other.n_native
            || self.n_padded != other.n_padded
            || self.block_size != other.block_size
        {
            return Err(Error::ShapeMismatch(format!(
                "{what}: ({}, padded {}, N_b {}) vs ({}, padded {}, N_b {})",
                self.n_native,
                self.n_padded,
                self.block_size,
                other.n_native,
                other.n_padded,
                other.block_size
            )));
        }
        Ok(())
    }

    /// `alpha * a + beta * b`. Exactly-zero result nodes are pruned.
    pub fn add_scaled(alpha: f64, a: &Self, beta: f64, b: &Self) -> Result<Self> {
        a.check_same_shape(b, "add_scaled")?;
        let root = add_nodes(alpha, a.root(), beta, b.root(), a.block_size).map(Box::new);
        Ok(a.with_root(root))
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let root = add_nodes(alpha, self.root(), 0.0, None, self.block_size).map(Box::new);
        self.with_root(root)
    }

    /// Sum of the native diagonal.
    pub fn trace(&self) -> f64 {
        fn walk(node: &Node) -> f64 {
            match &node.data {
                NodeData::Leaf(b) => (0..b.size()).map(|i| b.get(i, i)).sum(),
                NodeData::Internal(c) => {
                    c[0].as_deref().map_or(0.0, walk) + c[3].as_deref().map_or(0.0, walk)
                }
            }
        }
        self.root().map_or(0.0, walk)
    }

    /// `trace(self * other)` without forming the product.
    pub fn trace_of_product(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other, "trace_of_product")?;
        fn walk(a: &Node, b: &Node) -> f64 {
            match (&a.data, &b.data) {
                (NodeData::Leaf(x), NodeData::Leaf(y)) => {
                    let nb = x.size();
                    let mut s = 0.0;
                    for i in 0..nb {
                        for k in 0..nb {
                            s += x.get(i, k) * y.get(k, i);
                        }
                    }
                    s
                }
                _ => {
                    let mut s = 0.0;
                    for i in 0..2 {
                        for k in 0..2 {
                            if let (Some(x), Some(y)) = (a.child(i, k), b.child(k, i)) {
                                s += walk(x, y);
                            }
                        }
                    }
                    s
                }
            }
        }
        Ok(match (self.root(), other.root()) {
            (Some(a), Some(b)) => walk(a, b),
            _ => 0.0,
        })
    }

    /// Checks every stored norm against a bottom-up recomputation from the
    /// leaf data, the parent/child norm identity, leaf placement and
    /// zero padding.
    pub fn verify_norms(&self) -> NormCheck {
        let mut check = NormCheck {
            valid: true,
            worst_relative_deviation: 0.0,
            nodes_checked: 0,
        };
        if let Some(r) = self.root() {
            verify_node(self, r, 0, 0, self.n_padded, &mut check);
        }
        check.valid = check.valid && check.worst_relative_deviation <= NORM_TOLERANCE;
        check
    }

    /// Histogram of native element magnitudes.
    pub fn occupancy_stats(&self, bin_edges: &[f64]) -> Result<OccupancyStats> {
        let mut stats = OccupancyStats::new(bin_edges)?;
        let mut seen = 0u64;
        let n = self.n_native;
        let mut leaves = 0u64;
        self.for_each_leaf(|row0, col0, leaf| {
            leaves += 1;
            let nb = leaf.size();
            for r in 0..nb.min(n.saturating_sub(row0)) {
                for c in 0..nb.min(n.saturating_sub(col0)) {
                    stats.record(leaf.get(r, c).abs());
                    seen += 1;
                }
            }
        });
        let total = (n as u64) * (n as u64);
        stats.record_many(0.0, total - seen);
        let slots = (self.n_padded / self.block_size) as u64;
        stats.leaf_count = leaves;
        stats.null_leaf_count = slots * slots - leaves;
        Ok(stats)
    }
}

/// Relative tolerance for stored norms.
pub const NORM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormCheck {
    pub valid: bool,
    pub worst_relative_deviation: f64,
    pub nodes_checked: usize,
}

fn relative_deviation(stored: f64, expected: f64) -> f64 {
    if stored == expected {
        return 0.0;
    }
    let scale = stored.abs().max(expected.abs());
    if scale == 0.0 || !scale.is_finite() {
        return f64::INFINITY;
    }
    (stored - expected).abs() / scale
}

/// Returns the recomputed norm of `node`.
fn verify_node(m: &QuadTreeMatrix, node: &Node, row: usize, col: usize, size: usize, check: &mut NormCheck) -> f64 {
    check.nodes_checked += 1;
    let expected_tier = (m.n_padded / size).trailing_zeros();
    if node.tier != expected_tier {
        check.valid = false;
    }
    let recomputed = match &node.data {
        NodeData::Leaf(b) => {
            if node.tier != m.depth || b.size() != m.block_size {
                check.valid = false;
            }
            for r in 0..b.size() {
                for c in 0..b.size() {
                    if (row + r >= m.n_native || col + c >= m.n_native) && b.get(r, c) != 0.0 {
                        check.valid = false;
                    }
                }
            }
            b.norm()
        }
        NodeData::Internal(children) => {
            if node.tier >= m.depth {
                check.valid = false;
            }
            let half = size / 2;
            let mut fresh = [0.0; 4];
            let mut stored = [0.0; 4];
            for (q, c) in children.iter().enumerate() {
                if let Some(c) = c {
                    fresh[q] = verify_node(m, c, row + (q >> 1) * half, col + (q & 1) * half, half, check);
                    stored[q] = c.norm;
                }
            }
            let hierarchy = relative_deviation(node.norm, combine_norms(&stored));
            check.worst_relative_deviation = check.worst_relative_deviation.max(hierarchy);
            combine_norms(&fresh)
        }
    };
    let dev = relative_deviation(node.norm, recomputed);
    check.worst_relative_deviation = check.worst_relative_deviation.max(dev);
    recomputed
}

fn build_node(dense: &DenseMatrix, m: &QuadTreeMatrix, tier: u32, row: usize, col: usize, size: usize) -> Option<Node> {
    let n = dense.n();
    if row >= n || col >= n {
        return None;
    }
    if size == m.block_size {
        let mut block = LeafBlock::zeros(size);
        let rows = size.min(n - row);
        let cols = size.min(n - col);
        for r in 0..rows {
            let src = &dense.row(row + r)[col..col + cols];
            block.values[r * size..r * size + cols].copy_from_slice(src);
        }
        if block.is_zero() {
            return None;
        }
        return Some(Node::leaf(tier, block));
    }
    let half = size / 2;
    let children = [0usize, 1, 2, 3].map(|q| {
        build_node(dense, m, tier + 1, row + (q >> 1) * half, col + (q & 1) * half, half).map(Box::new)
    });
    Node::internal(tier, children)
}

fn identity_node(m: &QuadTreeMatrix, tier: u32, offset: usize, size: usize) -> Option<Node> {
    if offset >= m.n_native {
        return None;
    }
    if size == m.block_size {
        let mut block = LeafBlock::zeros(size);
        for d in 0..size.min(m.n_native - offset) {
            block.values[d * size + d] = 1.0;
        }
        return Some(Node::leaf(tier, block));
    }
    let half = size / 2;
    let children = [
        identity_node(m, tier + 1, offset, half).map(Box::new),
        None,
        None,
        identity_node(m, tier + 1, offset + half, half).map(Box::new),
    ];
    Node::internal(tier, children)
}

fn add_nodes(alpha: f64, a: Option<&Node>, beta: f64, b: Option<&Node>, block_size: usize) -> Option<Node> {
    let a = a.filter(|_| alpha != 0.0);
    let b = b.filter(|_| beta != 0.0);
    let tier = a.or(b)?.tier;
    let a_leaf = a.and_then(Node::as_leaf);
    let b_leaf = b.and_then(Node::as_leaf);
    if a_leaf.is_some() || b_leaf.is_some() {
        let mut block = LeafBlock::zeros(block_size);
        if let Some(x) = a_leaf {
            for (o, &v) in block.values.iter_mut().zip(x.values()) {
                *o = alpha * v;
            }
        }
        if let Some(y) = b_leaf {
            if a_leaf.is_some() {
                for (o, &v) in block.values.iter_mut().zip(y.values()) {
                    *o += beta * v;
                }
            } else {
                for (o, &v) in block.values.iter_mut().zip(y.values()) {
                    *o = beta * v;
                }
            }
        }
        if block.is_zero() {
            return None;
        }
        return Some(Node::leaf(tier, block));
    }
    let children = [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(i, j)| {
        add_nodes(
            alpha,
            a.and_then(|n| n.child(i, j)),
            beta,
            b.and_then(|n| n.child(i, j)),
            block_size,
        )
        .map(Box::new)
    });
    Node::internal(tier, children)
}

/// Magnitude classes of a converged projector: `[0,1e-8)`, `[1e-8,1e-6)`,
/// `[1e-6,1e-2)`, `[1e-2,1]`.
pub const DEFAULT_BIN_EDGES: [f64; 5] = [0.0, 1e-8, 1e-6, 1e-2, 1.0];

/// Element-magnitude histogram. Bins are half-open except the last, which
/// includes its upper edge. Magnitudes outside `[first, last]` are counted
/// in `below` / `above` so that every native element is counted once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyStats {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
    pub leaf_count: u64,
    pub null_leaf_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRecord {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: u64,
}

impl OccupancyStats {
    fn new(bin_edges: &[f64]) -> Result<Self> {
        if bin_edges.len() < 2 || bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::UnsortedBinEdges);
        }
        Ok(Self {
            bin_edges: bin_edges.to_vec(),
            counts: vec![0; bin_edges.len() - 1],
            below: 0,
            above: 0,
            leaf_count: 0,
            null_leaf_count: 0,
        })
    }

    fn bin_of(&self, magnitude: f64) -> Option<usize> {
        let edges = &self.bin_edges;
        let last = edges.len() - 1;
        if magnitude < edges[0] || magnitude > edges[last] {
            return None;
        }
        // first edge strictly greater than magnitude
        let idx = edges.partition_point(|&e| e <= magnitude);
        Some(idx.saturating_sub(1).min(last - 1))
    }

    fn record_many(&mut self, magnitude: f64, count: u64) {
        if count == 0 {
            return;
        }
        match self.bin_of(magnitude) {
            Some(b) => self.counts[b] += count,
            None if magnitude < self.bin_edges[0] => self.below += count,
            None => self.above += count,
        }
    }

    fn record(&mut self, magnitude: f64) {
        self.record_many(magnitude, 1);
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.below + self.above
    }

    pub fn records(&self) -> Vec<OccupancyRecord> {
        self.counts
            .iter()
            .enumerate()
            .map(|(b, &count)| OccupancyRecord {
                bin_lo: self.bin_edges[b],
                bin_hi: self.bin_edges[b + 1],
                count,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(nb: usize) -> Layout {
        Layout::new(nb, nb).unwrap()
    }

    fn lcg_matrix(n: usize, seed: u64) -> DenseMatrix {
        let mut s = seed;
        DenseMatrix::from_fn(n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn pads_2250_to_4096() {
        let m = QuadTreeMatrix::zeros(2250, Layout::default()).unwrap();
        assert_eq!(m.n_padded(), 4096);
        assert_eq!(m.depth(), 8);
    }

    #[test]
    fn scalar_root_is_leaf() {
        let m = QuadTreeMatrix::build_from_rows(&[vec![5.0]], layout(1)).unwrap();
        let root = m.root().unwrap();
        assert!(root.is_leaf());
        assert_eq!(root.norm(), 5.0);
        assert_eq!(m.depth(), 0);
    }

    #[test]
    fn three_four_five() {
        let m = QuadTreeMatrix::build_from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]], layout(1)).unwrap();
        let root = m.root().unwrap();
        assert_eq!(root.norm(), 5.0);
        assert!(root.child(1, 0).is_none());
        assert!(root.child(1, 1).is_none());
        assert_eq!(root.child(0, 0).unwrap().norm(), 3.0);
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            QuadTreeMatrix::build_from_rows(&[vec![1.0, 2.0]], layout(1)),
            Err(Error::NotSquare { .. })
        ));
        assert!(matches!(Layout::new(3, 4), Err(Error::BlockSizeNotPowerOfTwo(3))));
        assert!(matches!(Layout::new(8, 4), Err(Error::ChunkSmallerThanBlock { .. })));
        assert!(matches!(
            QuadTreeMatrix::build_from_dense(&DenseMatrix::zeros(0), layout(1)),
            Err(Error::Empty)
        ));
    }

    #[test]
    fn identity_round_trip() {
        let m = QuadTreeMatrix::identity(3, layout(2)).unwrap();
        assert_eq!(m.to_dense(), DenseMatrix::identity(3));
        assert_eq!(QuadTreeMatrix::identity(1, layout(1)).unwrap().to_dense(), DenseMatrix::identity(1));
        assert_eq!(QuadTreeMatrix::identity(5, layout(2)).unwrap().trace(), 5.0);
        assert!((QuadTreeMatrix::identity(4, layout(1)).unwrap().root_norm() - 2.0).abs() < 1e-15);
        let root = QuadTreeMatrix::identity(8, layout(2)).unwrap();
        let r = root.root().unwrap();
        assert!(r.child(0, 1).is_none() && r.child(1, 0).is_none());
    }

    #[test]
    fn empty_tree_to_dense() {
        let m = QuadTreeMatrix::zeros(4, layout(2)).unwrap();
        assert_eq!(m.to_dense(), DenseMatrix::zeros(4));
        assert_eq!(m.root_norm(), 0.0);
    }

    #[test]
    fn random_round_trip_is_exact() {
        let d = lcg_matrix(7, 11);
        for nb in [1, 2, 4, 8, 16] {
            let m = QuadTreeMatrix::build_from_dense(&d, layout(nb)).unwrap();
            assert_eq!(m.to_dense(), d);
            assert!(m.verify_norms().valid);
        }
    }

    #[test]
    fn corrupted_norm_is_detected() {
        let d = lcg_matrix(8, 3);
        let mut m = QuadTreeMatrix::build_from_dense(&d, layout(2)).unwrap();
        assert!(m.verify_norms().valid);
        if let Some(root) = m.root.as_mut() {
            if let NodeData::Internal(c) = &mut root.data {
                c[1].as_mut().unwrap().norm += 1.0;
            }
        }
        let check = m.verify_norms();
        assert!(!check.valid);
        assert!(check.worst_relative_deviation > 1e-3);
    }

    #[test]
    fn add_scaled_cases() {
        let a = QuadTreeMatrix::build_from_dense(&lcg_matrix(8, 1), layout(2)).unwrap();
        let z = QuadTreeMatrix::add_scaled(1.0, &a, -1.0, &a).unwrap();
        assert_eq!(z.root_norm(), 0.0);
        assert!(z.root().is_none());

        let i4 = QuadTreeMatrix::identity(4, layout(1)).unwrap();
        let r = QuadTreeMatrix::add_scaled(2.0, &i4, -1.0, &i4).unwrap();
        assert_eq!(r.to_dense(), DenseMatrix::identity(4));

        let b = QuadTreeMatrix::build_from_dense(&lcg_matrix(8, 2), layout(2)).unwrap();
        let c = QuadTreeMatrix::add_scaled(0.75, &a, -1.5, &b).unwrap();
        let (da, db, dc) = (a.to_dense(), b.to_dense(), c.to_dense());
        for i in 0..8 {
            for j in 0..8 {
                let expect = 0.75 * da.get(i, j) - 1.5 * db.get(i, j);
                assert_eq!(dc.get(i, j), expect);
            }
        }
        assert!(c.verify_norms().valid);

        let other = QuadTreeMatrix::identity(8, layout(4)).unwrap();
        assert!(matches!(
            QuadTreeMatrix::add_scaled(1.0, &a, 1.0, &other),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn trace_cases() {
        assert_eq!(QuadTreeMatrix::identity(8, layout(2)).unwrap().trace(), 8.0);
        let d = QuadTreeMatrix::build_from_dense(&DenseMatrix::from_diagonal(&[1.0, 2.0, 3.0]), layout(2)).unwrap();
        assert_eq!(d.trace(), 6.0);
        let r = lcg_matrix(16, 9);
        let m = QuadTreeMatrix::build_from_dense(&r, layout(4)).unwrap();
        let oracle: f64 = (0..16).map(|i| r.get(i, i)).sum();
        assert!((m.trace() - oracle).abs() <= 1e-14);
    }

    #[test]
    fn trace_of_product_matches_dense() {
        let a = lcg_matrix(10, 4);
        let b = lcg_matrix(10, 5);
        let qa = QuadTreeMatrix::build_from_dense(&a, layout(4)).unwrap();
        let qb = QuadTreeMatrix::build_from_dense(&b, layout(4)).unwrap();
        let mut oracle = 0.0;
        for i in 0..10 {
            for k in 0..10 {
                oracle += a.get(i, k) * b.get(k, i);
            }
        }
        assert!((qa.trace_of_product(&qb).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn occupancy_default_bins() {
        let z = QuadTreeMatrix::zeros(5, layout(2)).unwrap();
        let s = z.occupancy_stats(&DEFAULT_BIN_EDGES).unwrap();
        assert_eq!(s.counts, vec![25, 0, 0, 0]);
        let recs = s.records();
        assert_eq!((recs[0].bin_lo, recs[0].bin_hi), (0.0, 1e-8));
        assert_eq!((recs[3].bin_lo, recs[3].bin_hi), (1e-2, 1.0));

        let d = DenseMatrix::from_rows(&[
            vec![1.0, 1e-9, 1e-7],
            vec![1e-3, 0.5, 2.0],
            vec![0.0, 1e-2, 1e-6],
        ])
        .unwrap();
        let m = QuadTreeMatrix::build_from_dense(&d, layout(2)).unwrap();
        let s = m.occupancy_stats(&DEFAULT_BIN_EDGES).unwrap();
        assert_eq!(s.counts, vec![2, 1, 2, 3]);
        assert_eq!(s.above, 1);
        assert_eq!(s.total(), 9);
        assert_eq!(s.leaf_count + s.null_leaf_count, 4);
        assert!(matches!(m.occupancy_stats(&[0.0, 1.0, 0.5]), Err(Error::UnsortedBinEdges)));
    }

    #[test]
    fn tiny_values_keep_nonzero_norms() {
        let d = DenseMatrix::from_rows(&[vec![1e-200, 0.0], vec![0.0, 0.0]]).unwrap();
        let m = QuadTreeMatrix::build_from_dense(&d, layout(1)).unwrap();
        assert!(m.root_norm() > 0.0);
        assert!(m.verify_norms().valid);
    }

    #[test]
    fn tier_norms_and_lookup() {
        let d = lcg_matrix(8, 21);
        let m = QuadTreeMatrix::build_from_dense(&d, layout(2)).unwrap();
        let t1 = m.tier_norms(1);
        assert_eq!(t1.len(), 4);
        let combined = combine_norms(&t1);
        assert!((combined - m.root_norm()).abs() <= 1e-14 * m.root_norm());
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(m.get(i, j), d.get(i, j));
            }
        }
    }
}
