#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spamm_core::{DenseMatrix, Layout, QuadTreeMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries in [-1, 1); about `zero_fraction` of them exactly zero.
pub fn random_dense(n: usize, zero_fraction: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(n, |_, _| if rng.gen::<f64>() < zero_fraction { 0.0 } else { rng.gen_range(-1.0..1.0) })
}

pub fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let v = rng.gen_range(-1.0..1.0);
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    m
}

/// Random matrix whose zero blocks follow a random pattern at block scale.
pub fn block_sparse(n: usize, nb: usize, keep: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let nblk = n.div_ceil(nb);
    let mask: Vec<bool> = (0..nblk * nblk).map(|_| rng.gen::<f64>() < keep).collect();
    DenseMatrix::from_fn(n, |i, j| if mask[(i / nb) * nblk + j / nb] { rng.gen_range(-1.0..1.0) } else { 0.0 })
}

pub fn tree(m: &DenseMatrix, nb: usize) -> QuadTreeMatrix {
    QuadTreeMatrix::build_from_dense(m, Layout::with_block(nb).unwrap()).unwrap()
}

pub fn triple_loop(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let n = a.n();
    let mut c = DenseMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a.get(i, k) * b.get(k, j);
            }
            c.set(i, j, s);
        }
    }
    c
}

pub fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.n(), m.n(), m.as_slice())
}

/// Ascending eigenvalues.
pub fn eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(to_na(m)).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Projector onto the eigenvectors of the `n_occ` lowest eigenvalues.
pub fn eigenprojector(m: &DenseMatrix, n_occ: usize) -> DenseMatrix {
    let eig = SymmetricEigen::new(to_na(m));
    let mut idx: Vec<usize> = (0..m.n()).collect();
    idx.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let n = m.n();
    let mut p = DenseMatrix::zeros(n);
    for &c in &idx[..n_occ] {
        let v = eig.eigenvectors.column(c);
        for i in 0..n {
            for j in 0..n {
                p.set(i, j, p.get(i, j) + v[i] * v[j]);
            }
        }
    }
    p
}

/// Dense-arithmetic SP2: Gershgorin map, then X^2 or 2X - X^2 by trace
/// proximity (ties to X^2). Returns the branch sequence (true = X^2) and the
/// final iterate.
pub fn dense_sp2(f: &DenseMatrix, n_occ: usize, steps: usize) -> (Vec<bool>, DenseMatrix) {
    let n = f.n();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let r: f64 = (0..n).filter(|&j| j != i).map(|j| f.get(i, j).abs()).sum();
        lo = lo.min(f.get(i, i) - r);
        hi = hi.max(f.get(i, i) + r);
    }
    let mut x = DenseMatrix::from_fn(n, |i, j| ((if i == j { hi } else { 0.0 }) - f.get(i, j)) / (hi - lo));
    let mut branches = Vec::new();
    for _ in 0..steps {
        let x2 = triple_loop(&x, &x);
        let (tx, tsq) = (x.trace(), x2.trace());
        let square = (tsq - n_occ as f64).abs() <= (2.0 * tx - tsq - n_occ as f64).abs();
        branches.push(square);
        x = if square { x2 } else { DenseMatrix::from_fn(n, |i, j| 2.0 * x.get(i, j) - x2.get(i, j)) };
    }
    (branches, x)
}
