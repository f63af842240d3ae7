//! Hilbert-curve ordering of 3-D point clouds and matrix locality metrics.
//!
//! The curve is Skilling's transpose formulation ("Programming the Hilbert
//! curve", AIP Conf. Proc. 707, 2004): coordinates are converted in place to
//! the transposed Hilbert index, whose bits interleaved from the most
//! significant level down (x, y, z at each level) form the key. The cell
//! (0, 0, 0) is the curve origin.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::quadtree::{Layout, QuadTreeMatrix};

pub const MAX_ORDER: u32 = 21;
pub const DEFAULT_ORDER: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HilbertKey {
    pub key: u64,
    pub order: u32,
}

fn check_order(order: u32) -> Result<()> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::InvalidOrder(order));
    }
    Ok(())
}

fn axes_to_transpose(x: &mut [u64; 3], order: u32) {
    let m = 1u64 << (order - 1);
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..3 {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    for i in 1..3 {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    let mut q = m;
    while q > 1 {
        if x[2] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for v in x.iter_mut() {
        *v ^= t;
    }
}

fn transpose_to_axes(x: &mut [u64; 3], order: u32) {
    let n = 2u64 << (order - 1);
    let t = x[2] >> 1;
    for i in (1..3).rev() {
        x[i] ^= x[i - 1];
    }
    x[0] ^= t;
    let mut q = 2;
    while q != n {
        let p = q - 1;
        for i in (0..3).rev() {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q <<= 1;
    }
}

/// Hilbert key of lattice cell `(i, j, k)`, each in `[0, 2^order)`.
pub fn hilbert_index(cell: (u64, u64, u64), order: u32) -> Result<HilbertKey> {
    check_order(order)?;
    let (i, j, k) = cell;
    let side = 1u64 << order;
    if i >= side || j >= side || k >= side {
        return Err(Error::CoordinateOutOfRange { i, j, k, order });
    }
    let mut x = [i, j, k];
    axes_to_transpose(&mut x, order);
    let mut key = 0u64;
    for level in (0..order).rev() {
        for v in x {
            key = (key << 1) | ((v >> level) & 1);
        }
    }
    Ok(HilbertKey { key, order })
}

/// Inverse of [`hilbert_index`].
pub fn hilbert_cell(key: HilbertKey) -> Result<(u64, u64, u64)> {
    check_order(key.order)?;
    let order = key.order;
    if key.key >> (3 * order) != 0 {
        return Err(Error::InvalidArgument(format!("key {} exceeds order {order}", key.key)));
    }
    let mut x = [0u64; 3];
    let mut bit = 3 * order;
    for level in (0..order).rev() {
        for v in x.iter_mut() {
            bit -= 1;
            *v |= ((key.key >> bit) & 1) << level;
        }
    }
    transpose_to_axes(&mut x, order);
    Ok((x[0], x[1], x[2]))
}

/// Bit-interleaved Morton (Z-order) key, used as a baseline ordering.
pub fn morton_index(cell: (u64, u64, u64), order: u32) -> Result<u64> {
    check_order(order)?;
    let (i, j, k) = cell;
    let side = 1u64 << order;
    if i >= side || j >= side || k >= side {
        return Err(Error::CoordinateOutOfRange { i, j, k, order });
    }
    let mut key = 0u64;
    for level in (0..order).rev() {
        for v in [i, j, k] {
            key = (key << 1) | ((v >> level) & 1);
        }
    }
    Ok(key)
}

/// Points with the number of consecutive matrix rows each one owns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub labels: Vec<String>,
    pub points: Vec<[f64; 3]>,
    pub multiplicity: Vec<usize>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, multiplicity: Vec<usize>) -> Result<Self> {
        if points.len() != multiplicity.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} multiplicities",
                points.len(),
                multiplicity.len()
            )));
        }
        if multiplicity.contains(&0) {
            return Err(Error::InvalidArgument("multiplicities must be positive".into()));
        }
        let labels = vec!["X".to_string(); points.len()];
        Ok(Self { labels, points, multiplicity })
    }

    pub fn uniform(points: Vec<[f64; 3]>, rows_per_point: usize) -> Result<Self> {
        let m = vec![rows_per_point; points.len()];
        Self::new(points, m)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Total matrix rows spanned by the cloud.
    pub fn n_rows(&self) -> usize {
        self.multiplicity.iter().sum()
    }

    /// Lattice cells after mapping the bounding box onto `[0, 2^order)` per axis.
    pub fn quantize(&self, order: u32) -> Result<Vec<(u64, u64, u64)>> {
        check_order(order)?;
        let side = 1u64 << order;
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let cell = |v: f64, a: usize| -> u64 {
            let extent = hi[a] - lo[a];
            if !(extent > 0.0) {
                return 0;
            }
            let c = ((v - lo[a]) / extent * side as f64).floor();
            (c.max(0.0) as u64).min(side - 1)
        };
        Ok(self
            .points
            .iter()
            .map(|p| (cell(p[0], 0), cell(p[1], 1), cell(p[2], 2)))
            .collect())
    }

    /// Reads the XYZ format: a count line, a comment line, then
    /// `label x y z` lines. Each label's row count comes from
    /// `multiplicity_of`, falling back to `default_multiplicity`.
    pub fn read_xyz<R: BufRead>(reader: R, multiplicity_of: &HashMap<String, usize>, default_multiplicity: usize) -> Result<Self> {
        let mut lines = reader.lines();
        let count_line = lines.next().ok_or_else(|| Error::Parse { line: 1, msg: "missing count".into() })??;
        let count: usize = count_line
            .trim()
            .parse()
            .map_err(|_| Error::Parse { line: 1, msg: format!("bad count '{}'", count_line.trim()) })?;
        lines.next().ok_or_else(|| Error::Parse { line: 2, msg: "missing comment line".into() })??;
        let mut cloud = PointCloud {
            labels: Vec::with_capacity(count),
            points: Vec::with_capacity(count),
            multiplicity: Vec::with_capacity(count),
        };
        for (idx, line) in lines.enumerate() {
            let line = line?;
            let no = idx + 3;
            if line.trim().is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() < 4 {
                return Err(Error::Parse { line: no, msg: "expected 'label x y z'".into() });
            }
            let mut p = [0.0; 3];
            for a in 0..3 {
                p[a] = toks[a + 1]
                    .parse()
                    .map_err(|_| Error::Parse { line: no, msg: format!("bad coordinate '{}'", toks[a + 1]) })?;
            }
            let label = toks[0].to_string();
            let mult = multiplicity_of.get(&label).copied().unwrap_or(default_multiplicity);
            if mult == 0 {
                return Err(Error::InvalidArgument(format!("label {label} has multiplicity 0")));
            }
            cloud.labels.push(label);
            cloud.points.push(p);
            cloud.multiplicity.push(mult);
        }
        if cloud.len() != count {
            return Err(Error::Parse {
                line: 1,
                msg: format!("declared {count} points, found {}", cloud.len()),
            });
        }
        Ok(cloud)
    }

    pub fn write_xyz<W: Write>(&self, mut w: W, comment: &str) -> Result<()> {
        writeln!(w, "{}", self.len())?;
        writeln!(w, "{}", comment.replace('\n', " "))?;
        for (label, p) in self.labels.iter().zip(&self.points) {
            writeln!(w, "{label} {:e} {:e} {:e}", p[0], p[1], p[2])?;
        }
        Ok(())
    }

    /// The cloud with its points rearranged as `perm[new] = old`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.len())?;
        Ok(Self {
            labels: perm.iter().map(|&p| self.labels[p].clone()).collect(),
            points: perm.iter().map(|&p| self.points[p]).collect(),
            multiplicity: perm.iter().map(|&p| self.multiplicity[p]).collect(),
        })
    }
}

/// Point permutation `perm[new] = old` sorting points by Hilbert key; equal
/// keys keep their input order.
pub fn reorder_permutation(cloud: &PointCloud, order: u32) -> Result<Vec<usize>> {
    if cloud.is_empty() {
        return Err(Error::Empty);
    }
    let cells = cloud.quantize(order)?;
    let keys: Vec<u64> = cells
        .iter()
        .map(|&c| hilbert_index(c, order).map(|k| k.key))
        .collect::<Result<_>>()?;
    let mut perm: Vec<usize> = (0..cloud.len()).collect();
    perm.sort_by_key(|&p| (keys[p], p));
    Ok(perm)
}

/// Morton-order counterpart of [`reorder_permutation`].
pub fn morton_permutation(cloud: &PointCloud, order: u32) -> Result<Vec<usize>> {
    if cloud.is_empty() {
        return Err(Error::Empty);
    }
    let cells = cloud.quantize(order)?;
    let keys: Vec<u64> = cells.iter().map(|&c| morton_index(c, order)).collect::<Result<_>>()?;
    let mut perm: Vec<usize> = (0..cloud.len()).collect();
    perm.sort_by_key(|&p| (keys[p], p));
    Ok(perm)
}

/// Expands a point permutation into a row permutation: each point's rows
/// move as one contiguous block.
pub fn row_permutation(cloud: &PointCloud, point_perm: &[usize]) -> Result<Vec<usize>> {
    check_permutation(point_perm, cloud.len())?;
    let mut offsets = Vec::with_capacity(cloud.len());
    let mut acc = 0;
    for &m in &cloud.multiplicity {
        offsets.push(acc);
        acc += m;
    }
    let mut rows = Vec::with_capacity(acc);
    for &p in point_perm {
        rows.extend(offsets[p]..offsets[p] + cloud.multiplicity[p]);
    }
    Ok(rows)
}

pub fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::PermutationLength { expected: n, got: perm.len() });
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidPermutation(format!("entry {p} repeated or out of range")));
        }
        seen[p] = true;
    }
    Ok(())
}

pub fn inverse_permutation(perm: &[usize]) -> Result<Vec<usize>> {
    check_permutation(perm, perm.len())?;
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    Ok(inv)
}

/// Symmetric permutation: `out[r][c] = a[perm[r]][perm[c]]`.
pub fn apply_row_permutation(a: &DenseMatrix, perm: &[usize]) -> Result<DenseMatrix> {
    check_permutation(perm, a.n())?;
    Ok(DenseMatrix::from_fn(a.n(), |r, c| a.get(perm[r], perm[c])))
}

pub fn apply_row_permutation_tree(a: &QuadTreeMatrix, perm: &[usize]) -> Result<QuadTreeMatrix> {
    let dense = apply_row_permutation(&a.to_dense(), perm)?;
    QuadTreeMatrix::build_from_dense(&dense, a.layout())
}

/// One-based JSON list, the on-disk form of a permutation.
pub fn permutation_to_json(perm: &[usize]) -> String {
    let one_based: Vec<usize> = perm.iter().map(|p| p + 1).collect();
    serde_json::to_string(&one_based).expect("serializing integers")
}

pub fn permutation_from_json(text: &str) -> Result<Vec<usize>> {
    let one_based: Vec<usize> =
        serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
    if one_based.contains(&0) {
        return Err(Error::InvalidPermutation("indices are one-based".into()));
    }
    let perm: Vec<usize> = one_based.into_iter().map(|p| p - 1).collect();
    check_permutation(&perm, perm.len())?;
    Ok(perm)
}

/// Distance from the diagonal of the significant elements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalityMetric {
    pub mean_band: f64,
    pub p90_band: usize,
    pub count: usize,
}

fn summarize_bands(mut bands: Vec<usize>) -> Option<LocalityMetric> {
    if bands.is_empty() {
        return None;
    }
    bands.sort_unstable();
    let count = bands.len();
    let mean_band = bands.iter().map(|&b| b as f64).sum::<f64>() / count as f64;
    // nearest-rank percentile
    let rank = ((0.9 * count as f64).ceil() as usize).clamp(1, count);
    Some(LocalityMetric {
        mean_band,
        p90_band: bands[rank - 1],
        count,
    })
}

/// Mean and 90th percentile of `|i - j|` over elements with
/// `|a_ij| >= threshold`; `None` when no element qualifies.
pub fn locality_metric(a: &DenseMatrix, threshold: f64) -> Result<Option<LocalityMetric>> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument("threshold must be positive".into()));
    }
    let n = a.n();
    let bands = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| a.get(i, j).abs() >= threshold)
        .map(|(i, j)| i.abs_diff(j))
        .collect();
    Ok(summarize_bands(bands))
}

pub fn locality_metric_tree(a: &QuadTreeMatrix, threshold: f64) -> Result<Option<LocalityMetric>> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument("threshold must be positive".into()));
    }
    let mut bands = Vec::new();
    a.for_each_leaf(|row0, col0, leaf| {
        let nb = leaf.size();
        for r in 0..nb {
            for c in 0..nb {
                if leaf.get(r, c).abs() >= threshold {
                    bands.push((row0 + r).abs_diff(col0 + c));
                }
            }
        }
    });
    Ok(summarize_bands(bands))
}

/// Builds a tree of `a` after reordering rows and columns by `perm`.
pub fn reordered_tree(a: &DenseMatrix, perm: &[usize], layout: Layout) -> Result<QuadTreeMatrix> {
    QuadTreeMatrix::build_from_dense(&apply_row_permutation(a, perm)?, layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chebyshev(a: (u64, u64, u64), b: (u64, u64, u64)) -> u64 {
        a.0.abs_diff(b.0).max(a.1.abs_diff(b.1)).max(a.2.abs_diff(b.2))
    }

    fn manhattan(a: (u64, u64, u64), b: (u64, u64, u64)) -> u64 {
        a.0.abs_diff(b.0) + a.1.abs_diff(b.1) + a.2.abs_diff(b.2)
    }

    #[test]
    fn origin_maps_to_zero() {
        for order in 1..=MAX_ORDER {
            assert_eq!(hilbert_index((0, 0, 0), order).unwrap().key, 0);
        }
    }

    #[test]
    fn order_one_is_a_continuous_permutation() {
        let mut by_key = vec![None; 8];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let key = hilbert_index((i, j, k), 1).unwrap().key as usize;
                    assert!(by_key[key].is_none());
                    by_key[key] = Some((i, j, k));
                }
            }
        }
        let cells: Vec<_> = by_key.into_iter().map(Option::unwrap).collect();
        for w in cells.windows(2) {
            assert_eq!(chebyshev(w[0], w[1]), 1);
        }
    }

    #[test]
    fn continuity_through_order_six() {
        for order in 1..=6u32 {
            let total = 1u64 << (3 * order);
            let mut prev = hilbert_cell(HilbertKey { key: 0, order }).unwrap();
            for key in 1..total {
                let cell = hilbert_cell(HilbertKey { key, order }).unwrap();
                assert_eq!(manhattan(prev, cell), 1, "order {order} key {key}");
                prev = cell;
            }
        }
    }

    #[test]
    fn order_four_round_trip() {
        let side = 16u64;
        let mut seen = vec![false; 4096];
        for i in 0..side {
            for j in 0..side {
                for k in 0..side {
                    let key = hilbert_index((i, j, k), 4).unwrap();
                    assert!(!seen[key.key as usize]);
                    seen[key.key as usize] = true;
                    assert_eq!(hilbert_cell(key).unwrap(), (i, j, k));
                }
            }
        }
    }

    #[test]
    fn frozen_order_two_prefix() {
        // generated once by hilbert_cell and frozen
        let prefix: Vec<_> = (0..8).map(|key| hilbert_cell(HilbertKey { key, order: 2 }).unwrap()).collect();
        assert_eq!(
            prefix,
            vec![(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0), (1, 0, 1), (1, 1, 1), (0, 1, 1), (0, 0, 1)]
        );
    }

    #[test]
    fn out_of_range() {
        assert!(matches!(hilbert_index((4, 0, 0), 2), Err(Error::CoordinateOutOfRange { .. })));
        assert!(matches!(hilbert_index((0, 0, 0), 0), Err(Error::InvalidOrder(0))));
    }

    #[test]
    fn single_point_identity() {
        let cloud = PointCloud::uniform(vec![[1.0, 2.0, 3.0]], 25).unwrap();
        assert_eq!(reorder_permutation(&cloud, DEFAULT_ORDER).unwrap(), vec![0]);
    }

    #[test]
    fn points_on_the_curve_stay_in_place() {
        let order = 3;
        let points: Vec<[f64; 3]> = (0..512)
            .map(|key| {
                let (i, j, k) = hilbert_cell(HilbertKey { key, order }).unwrap();
                [i as f64, j as f64, k as f64]
            })
            .collect();
        let cloud = PointCloud::uniform(points, 1).unwrap();
        let perm = reorder_permutation(&cloud, order).unwrap();
        assert_eq!(perm, (0..512).collect::<Vec<_>>());
    }

    #[test]
    fn coincident_points_are_stable() {
        let cloud = PointCloud::uniform(vec![[0.5; 3], [0.0; 3], [0.5; 3], [1.0; 3]], 1).unwrap();
        let perm = reorder_permutation(&cloud, 4).unwrap();
        let pos = |p| perm.iter().position(|&q| q == p).unwrap();
        assert!(pos(0) < pos(2));
    }

    #[test]
    fn row_expansion_moves_blocks() {
        let cloud = PointCloud::new(vec![[0.0; 3], [1.0; 3], [2.0; 3]], vec![2, 1, 3]).unwrap();
        assert_eq!(row_permutation(&cloud, &[2, 0, 1]).unwrap(), vec![3, 4, 5, 0, 1, 2]);
        assert!(row_permutation(&cloud, &[0, 1]).is_err());
    }

    #[test]
    fn permutation_inverse_and_json() {
        let a = DenseMatrix::from_fn(5, |i, j| (i * 5 + j) as f64);
        let perm = vec![3, 0, 4, 1, 2];
        let p = apply_row_permutation(&a, &perm).unwrap();
        let back = apply_row_permutation(&p, &inverse_permutation(&perm).unwrap()).unwrap();
        assert_eq!(back, a);
        assert_eq!(apply_row_permutation(&a, &[0, 1, 2, 3, 4]).unwrap(), a);
        assert!(matches!(apply_row_permutation(&a, &[0, 1]), Err(Error::PermutationLength { .. })));
        let json = permutation_to_json(&perm);
        assert_eq!(json, "[4,1,5,2,3]");
        assert_eq!(permutation_from_json(&json).unwrap(), perm);
        assert!(permutation_from_json("[0,1]").is_err());
    }

    #[test]
    fn locality_examples() {
        let tri = DenseMatrix::from_fn(10, |i, j| if i.abs_diff(j) <= 1 { 1.0 } else { 0.0 });
        assert_eq!(locality_metric(&tri, 0.5).unwrap().unwrap().p90_band, 1);
        let diag = DenseMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        assert_eq!(locality_metric(&diag, 0.5).unwrap().unwrap().mean_band, 0.0);
        assert!(locality_metric(&diag, 10.0).unwrap().is_none());
        assert!(locality_metric(&diag, 0.0).is_err());
        let t = QuadTreeMatrix::build_from_dense(&tri, Layout::new(4, 4).unwrap()).unwrap();
        assert_eq!(locality_metric_tree(&t, 0.5).unwrap(), locality_metric(&tri, 0.5).unwrap());
    }

    #[test]
    fn xyz_round_trip() {
        let mut cloud = PointCloud::uniform(vec![[0.0, 1.5, -2.0], [3.25, 1e-3, 7.0]], 25).unwrap();
        cloud.labels = vec!["H2O".into(), "H2O".into()];
        let mut buf = Vec::new();
        cloud.write_xyz(&mut buf, "two waters").unwrap();
        let back = PointCloud::read_xyz(buf.as_slice(), &HashMap::new(), 25).unwrap();
        assert_eq!(back, cloud);
        let mut mult = HashMap::new();
        mult.insert("H2O".to_string(), 7);
        assert_eq!(PointCloud::read_xyz(buf.as_slice(), &mult, 25).unwrap().n_rows(), 14);
        assert!(PointCloud::read_xyz("3\nc\nA 0 0 0\n".as_bytes(), &HashMap::new(), 1).is_err());
    }

    #[test]
    fn morton_is_bijective() {
        let mut keys: Vec<u64> = (0..8u64)
            .flat_map(|i| (0..8u64).flat_map(move |j| (0..8u64).map(move |k| (i, j, k))))
            .map(|c| morton_index(c, 3).unwrap())
            .collect();
        keys.sort_unstable();
        assert_eq!(keys, (0..512).collect::<Vec<_>>());
    }
}
