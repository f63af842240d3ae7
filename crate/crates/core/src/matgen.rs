//! Synthetic inputs: symmetric matrices with a prescribed decay envelope, and
//! water-cluster-like Hamiltonians with a guaranteed occupation gap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::ordering::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayKind {
    /// `|a_ij| < c * lambda^|i-j|`, `0 < lambda < 1`
    Exponential,
    /// `|a_ij| < c / (|i-j|^lambda + 1)`, `lambda > 0`
    Algebraic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySpec {
    pub kind: DecayKind,
    pub c: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl DecaySpec {
    pub fn exponential(c: f64, lambda: f64, seed: u64) -> Self {
        Self { kind: DecayKind::Exponential, c, lambda, seed }
    }

    pub fn algebraic(c: f64, lambda: f64, seed: u64) -> Self {
        Self { kind: DecayKind::Algebraic, c, lambda, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::InvalidDecay(format!("c must be positive, got {}", self.c)));
        }
        let ok = match self.kind {
            DecayKind::Exponential => self.lambda > 0.0 && self.lambda < 1.0,
            DecayKind::Algebraic => self.lambda > 0.0 && self.lambda.is_finite(),
        };
        if !ok {
            return Err(Error::InvalidDecay(format!("lambda {} out of range for {:?}", self.lambda, self.kind)));
        }
        Ok(())
    }

    /// Upper bound on `|a_ij|` at separation `|i - j|`.
    pub fn envelope(&self, separation: usize) -> f64 {
        match self.kind {
            DecayKind::Exponential => self.c * self.lambda.powi(separation as i32),
            DecayKind::Algebraic => self.c / ((separation as f64).powf(self.lambda) + 1.0),
        }
    }
}

/// Symmetric `n x n` matrix with `a_ij = envelope(|i-j|) * u_ij`,
/// `u_ij ~ U[0.5, 1)`.
pub fn gen_decay_matrix(n: usize, spec: &DecaySpec) -> Result<DenseMatrix> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let envelope: Vec<f64> = (0..n).map(|d| spec.envelope(d)).collect();
    let mut m = DenseMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let v = envelope[j - i] * rng.gen_range(0.5..1.0);
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    Ok(m)
}

/// Parameters of a synthetic molecular cluster.
///
/// Molecule centres are placed uniformly at random in a cube holding
/// `box_density` molecules per unit volume, rejecting centres closer than
/// `min_separation`. Every molecule owns `rows_per_molecule` consecutive
/// rows. The Hamiltonian is
///
/// ```text
/// F_ij = exp(-|r_i - r_j| / length_scale) * g_ij + d_i * delta_ij
/// ```
///
/// with `g_ij ~ U[-coupling, coupling]` symmetric and `d_i` drawn from the
/// occupied band for the first `occupied_per_molecule` rows of each molecule
/// and from the virtual band for the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub n_molecules: usize,
    pub rows_per_molecule: usize,
    pub occupied_per_molecule: usize,
    pub box_density: f64,
    pub min_separation: f64,
    pub length_scale: f64,
    pub coupling: f64,
    pub occupied_band: (f64, f64),
    pub virtual_band: (f64, f64),
    /// Lower bound enforced on the gap between eigenvalues `n_occ` and
    /// `n_occ + 1`; couplings are scaled down when needed.
    pub min_gap: f64,
    pub seed: u64,
}

impl ClusterSpec {
    pub fn new(n_molecules: usize, seed: u64) -> Self {
        Self {
            n_molecules,
            rows_per_molecule: 25,
            occupied_per_molecule: 10,
            box_density: 1.0,
            min_separation: 0.7,
            // about three decades per unit distance
            length_scale: 0.15,
            coupling: 1.0,
            occupied_band: (-20.0, -16.0),
            virtual_band: (16.0, 20.0),
            min_gap: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_molecules == 0 {
            return bad("at least one molecule is required");
        }
        if self.rows_per_molecule == 0 || self.occupied_per_molecule > self.rows_per_molecule {
            return bad("need 0 <= occupied_per_molecule <= rows_per_molecule and rows_per_molecule > 0");
        }
        if !(self.box_density > 0.0) || !(self.length_scale > 0.0) || !(self.coupling >= 0.0) || self.min_separation < 0.0 {
            return bad("density, length scale, coupling and separation must be positive");
        }
        if !(self.occupied_band.0 <= self.occupied_band.1 && self.virtual_band.0 <= self.virtual_band.1) {
            return bad("bands must be ordered (lo, hi)");
        }
        if !(self.occupied_band.1 < self.virtual_band.0) {
            return bad("occupied band must lie below the virtual band");
        }
        if !(self.min_gap >= 0.0 && self.min_gap < self.virtual_band.0 - self.occupied_band.1) {
            return bad("min_gap must be below the band separation");
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_molecules * self.rows_per_molecule
    }

    pub fn box_side(&self) -> f64 {
        (self.n_molecules as f64 / self.box_density).cbrt()
    }
}

#[derive(Debug, Clone)]
pub struct ClusterHamiltonian {
    pub f: DenseMatrix,
    pub cloud: PointCloud,
    pub n_occ: usize,
    /// Weyl lower bound on the occupation gap of `f`.
    pub guaranteed_gap: f64,
    /// Factor applied to the couplings to honour `min_gap` (1 when unscaled).
    pub coupling_scale: f64,
}

fn sample_centres(spec: &ClusterSpec, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    const MAX_ATTEMPTS: usize = 10_000;
    let side = spec.box_side();
    let min_d2 = spec.min_separation * spec.min_separation;
    let mut centres: Vec<[f64; 3]> = Vec::with_capacity(spec.n_molecules);
    while centres.len() < spec.n_molecules {
        let mut candidate = [0.0; 3];
        for _ in 0..MAX_ATTEMPTS {
            candidate = [rng.gen_range(0.0..side), rng.gen_range(0.0..side), rng.gen_range(0.0..side)];
            let clear = centres.iter().all(|c| {
                let d2: f64 = (0..3).map(|a| (c[a] - candidate[a]).powi(2)).sum();
                d2 >= min_d2
            });
            if clear {
                break;
            }
        }
        // too dense for the exclusion radius: keep the last draw
        centres.push(candidate);
    }
    centres
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

pub fn gen_cluster_hamiltonian(spec: &ClusterSpec) -> Result<ClusterHamiltonian> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centres = sample_centres(spec, &mut rng);
    let rpm = spec.rows_per_molecule;
    let n = spec.n_rows();

    let shifts: Vec<f64> = (0..n)
        .map(|i| {
            let (lo, hi) = if i % rpm < spec.occupied_per_molecule {
                spec.occupied_band
            } else {
                spec.virtual_band
            };
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                lo
            }
        })
        .collect();

    let mut coupling = DenseMatrix::zeros(n);
    let mut row_sums = vec![0.0; n];
    for i in 0..n {
        for j in i..n {
            let d = distance(&centres[i / rpm], &centres[j / rpm]);
            let g = if spec.coupling > 0.0 {
                rng.gen_range(-spec.coupling..spec.coupling)
            } else {
                0.0
            };
            let v = (-d / spec.length_scale).exp() * g;
            coupling.set(i, j, v);
            coupling.set(j, i, v);
            row_sums[i] += v.abs();
            if i != j {
                row_sums[j] += v.abs();
            }
        }
    }

    let max_occ = (0..n)
        .filter(|i| i % rpm < spec.occupied_per_molecule)
        .map(|i| shifts[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let min_virt = (0..n)
        .filter(|i| i % rpm >= spec.occupied_per_molecule)
        .map(|i| shifts[i])
        .fold(f64::INFINITY, f64::min);
    let separation = if max_occ.is_finite() && min_virt.is_finite() {
        min_virt - max_occ
    } else {
        f64::INFINITY
    };
    let radius = row_sums.iter().copied().fold(0.0, f64::max);
    let coupling_scale = if separation.is_finite() && separation - 2.0 * radius < spec.min_gap {
        (separation - spec.min_gap) / (2.0 * radius)
    } else {
        1.0
    };

    let f = DenseMatrix::from_fn(n, |i, j| {
        let e = coupling.get(i, j) * coupling_scale;
        if i == j {
            e + shifts[i]
        } else {
            e
        }
    });
    let mut cloud = PointCloud::uniform(centres, rpm)?;
    cloud.labels = vec!["H2O".to_string(); spec.n_molecules];
    Ok(ClusterHamiltonian {
        f,
        cloud,
        n_occ: spec.occupied_per_molecule * spec.n_molecules,
        guaranteed_gap: separation - 2.0 * radius * coupling_scale,
        coupling_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_decay_matrix() {
        let m = gen_decay_matrix(1, &DecaySpec::exponential(1.0, 0.5, 7)).unwrap();
        assert!(m.get(0, 0).abs() < 1.0);
    }

    #[test]
    fn exponential_envelope_value() {
        let spec = DecaySpec::exponential(1.0, 0.5, 1);
        assert_eq!(spec.envelope(10), 2f64.powi(-10));
        let m = gen_decay_matrix(16, &spec).unwrap();
        assert!(m.get(0, 10).abs() < 9.8e-4);
    }

    #[test]
    fn envelope_audit_and_symmetry() {
        for spec in [DecaySpec::exponential(2.0, 0.7, 3), DecaySpec::algebraic(1.5, 1.3, 4)] {
            let m = gen_decay_matrix(40, &spec).unwrap();
            assert!(m.is_symmetric());
            for i in 0..40 {
                for j in 0..40 {
                    assert!(m.get(i, j).abs() < spec.envelope(i.abs_diff(j)));
                }
            }
        }
    }

    #[test]
    fn decay_is_deterministic() {
        let spec = DecaySpec::algebraic(1.0, 2.0, 99);
        assert_eq!(gen_decay_matrix(20, &spec).unwrap(), gen_decay_matrix(20, &spec).unwrap());
    }

    #[test]
    fn invalid_lambda() {
        assert!(gen_decay_matrix(4, &DecaySpec::exponential(1.0, 1.0, 0)).is_err());
        assert!(gen_decay_matrix(4, &DecaySpec::exponential(1.0, 0.0, 0)).is_err());
        assert!(gen_decay_matrix(4, &DecaySpec::algebraic(1.0, -1.0, 0)).is_err());
        assert!(gen_decay_matrix(4, &DecaySpec::algebraic(0.0, 1.0, 0)).is_err());
    }

    #[test]
    fn single_molecule() {
        let h = gen_cluster_hamiltonian(&ClusterSpec::new(1, 5)).unwrap();
        assert_eq!(h.f.n(), 25);
        assert_eq!(h.n_occ, 10);
        assert!(h.f.is_symmetric());
        assert!(h.guaranteed_gap >= 1.0 - 1e-12);
    }

    #[test]
    fn ninety_molecules_span_2250_rows() {
        let h = gen_cluster_hamiltonian(&ClusterSpec::new(90, 1)).unwrap();
        assert_eq!(h.f.n(), 2250);
        assert_eq!(h.cloud.n_rows(), 2250);
    }

    #[test]
    fn cluster_is_deterministic() {
        let a = gen_cluster_hamiltonian(&ClusterSpec::new(6, 42)).unwrap();
        let b = gen_cluster_hamiltonian(&ClusterSpec::new(6, 42)).unwrap();
        assert_eq!(a.f, b.f);
        assert_eq!(a.cloud, b.cloud);
    }
}
