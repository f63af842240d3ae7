use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `T(P) = t_s + t_p / P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmdahlFit {
    pub t_s: f64,
    pub t_p: f64,
    /// `t_p / t_s`; infinite (JSON `null`) when `t_s` is zero.
    pub p_even: f64,
    /// Set when the unconstrained fit gave `t_s < 0` and it was pinned at 0.
    pub clamped: bool,
}

impl AmdahlFit {
    pub fn predict(&self, p: f64) -> f64 {
        self.t_s + self.t_p / p
    }
}

/// Least-squares fit in `x = 1/P`, weighted by `1/T^2` so every point counts
/// by its relative residual.
pub fn amdahl_fit(points: &[(f64, f64)]) -> Result<AmdahlFit> {
    if points.iter().any(|&(p, t)| !(p > 0.0) || !(t > 0.0)) {
        return Err(Error::InvalidArgument("P and T must be positive".into()));
    }
    let first = points.first().map(|q| q.0);
    if points.len() < 2 || points.iter().all(|q| Some(q.0) == first) {
        return Err(Error::DegenerateFit);
    }
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(p, t) in points {
        let (x, w) = (1.0 / p, 1.0 / (t * t));
        sw += w;
        sx += w * x;
        sy += w * t;
        sxx += w * x * x;
        sxy += w * x * t;
    }
    let det = sw * sxx - sx * sx;
    if !(det > 0.0) {
        return Err(Error::DegenerateFit);
    }
    let t_s = (sxx * sy - sx * sxy) / det;
    let t_p = (sw * sxy - sx * sy) / det;
    let fit = if t_s < 0.0 {
        AmdahlFit { t_s: 0.0, t_p: sxy / sxx, p_even: f64::INFINITY, clamped: true }
    } else {
        AmdahlFit { t_s, t_p, p_even: if t_s > 0.0 { t_p / t_s } else { f64::INFINITY }, clamped: false }
    };
    Ok(fit)
}
