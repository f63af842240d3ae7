//! Second-order spectral projection: drives a mapped Hamiltonian to the
//! projector onto its `n_occ` lowest eigenstates with one SpAMM product per
//! iteration.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadtree::QuadTreeMatrix;
use crate::spamm::{multiply, MultiplyOptions, SpammTolerance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralBounds {
    pub eps_min: f64,
    pub eps_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Branch {
    /// `X' = X^2`
    Square,
    /// `X' = 2X - X^2`
    Expand,
}

/// Relative asymmetry accepted by [`gershgorin_bounds`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Gershgorin enclosure of the spectrum of a symmetric matrix.
pub fn gershgorin_bounds(f: &QuadTreeMatrix) -> Result<SpectralBounds> {
    let n = f.n_native();
    let nb = f.block_size();
    let limit = SYMMETRY_TOLERANCE * f.frobenius_norm().max(1.0);
    let mut diag = vec![0.0; n];
    let mut radius = vec![0.0; n];
    let mut asym: Option<Error> = None;
    f.for_each_leaf(|r0, c0, block| {
        let mirror = f.leaf_at(c0 / nb, r0 / nb);
        for i in 0..nb {
            let row = r0 + i;
            if row >= n {
                break;
            }
            for j in 0..nb {
                let col = c0 + j;
                if col >= n {
                    break;
                }
                let v = block.get(i, j);
                let w = mirror.map_or(0.0, |m| m.get(j, i));
                let dev = (v - w).abs();
                if dev > limit && asym.is_none() {
                    asym = Some(Error::NotSymmetric { row, col, deviation: dev });
                }
                if row == col {
                    diag[row] = v;
                } else {
                    radius[row] += v.abs();
                }
            }
        }
    });
    if let Some(e) = asym {
        return Err(e);
    }
    let eps_min = (0..n).map(|i| diag[i] - radius[i]).fold(f64::INFINITY, f64::min);
    let eps_max = (0..n).map(|i| diag[i] + radius[i]).fold(f64::NEG_INFINITY, f64::max);
    Ok(SpectralBounds { eps_min, eps_max })
}

/// `X0 = (eps_max I - F) / (eps_max - eps_min)`.
pub fn sp2_init(f: &QuadTreeMatrix, bounds: SpectralBounds) -> Result<QuadTreeMatrix> {
    let width = bounds.eps_max - bounds.eps_min;
    if !(width > 0.0) {
        return Err(Error::DegenerateSpectrum(bounds.eps_min));
    }
    let identity = QuadTreeMatrix::identity(f.n_native(), f.layout())?;
    QuadTreeMatrix::add_scaled(bounds.eps_max / width, &identity, -1.0 / width, f)
}

/// Everything one projection step computed.
#[derive(Debug, Clone)]
pub struct Sp2Step {
    pub x: QuadTreeMatrix,
    pub branch: Branch,
    pub trace_x: f64,
    pub trace_x2: f64,
    pub leaf_products: u64,
    pub wall_seconds: f64,
}

fn pick_branch(trace_x: f64, trace_x2: f64, n_occ: f64) -> Branch {
    let t_ex = 2.0 * trace_x - trace_x2;
    if (trace_x2 - n_occ).abs() <= (t_ex - n_occ).abs() {
        Branch::Square
    } else {
        Branch::Expand
    }
}

pub fn sp2_step(x: &QuadTreeMatrix, n_occ: usize, tau: SpammTolerance, options: &MultiplyOptions) -> Result<Sp2Step> {
    let started = Instant::now();
    let (x2, stats) = multiply(x, x, tau, options)?;
    let trace_x = x.trace();
    let trace_x2 = x2.trace();
    let branch = pick_branch(trace_x, trace_x2, n_occ as f64);
    let next = match branch {
        Branch::Square => x2,
        Branch::Expand => QuadTreeMatrix::add_scaled(2.0, x, -1.0, &x2)?,
    };
    Ok(Sp2Step {
        x: next,
        branch,
        trace_x,
        trace_x2,
        leaf_products: stats.leaf_products,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sp2Options {
    pub tau: SpammTolerance,
    pub max_iter: usize,
    /// Bound on `|tr(X^2) - tr(X)|`.
    pub idempotency_tol: f64,
    /// Bound on `|tr(X) - n_occ| / n_occ`.
    pub trace_rel_tol: f64,
    pub multiply: MultiplyOptions,
}

impl Default for Sp2Options {
    fn default() -> Self {
        Self {
            tau: SpammTolerance::EXACT,
            max_iter: 100,
            idempotency_tol: 1e-9,
            trace_rel_tol: 1e-6,
            multiply: MultiplyOptions::serial(),
        }
    }
}

impl Sp2Options {
    pub fn with_tau(tau: SpammTolerance) -> Self {
        Self { tau, ..Self::default() }
    }
}

/// Solver state after a run. `trace_history[0]` is the trace of the initial
/// iterate; entry `k` is the trace after step `k`.
#[derive(Debug, Clone)]
pub struct Sp2State {
    pub x: QuadTreeMatrix,
    pub n_occ: usize,
    pub bounds: SpectralBounds,
    pub trace_history: Vec<f64>,
    pub branch_history: Vec<Branch>,
    pub iteration: usize,
    pub converged: bool,
    pub diagnostic: Option<String>,
    pub wall_seconds_per_iteration: Vec<f64>,
    pub leaf_products_per_iteration: Vec<u64>,
}

/// Returns the projector estimate (the final iterate) and the run history.
/// Running out of iterations is reported through `converged` and
/// `diagnostic`, not as an error.
pub fn sp2_solve(f: &QuadTreeMatrix, n_occ: usize, options: &Sp2Options) -> Result<(QuadTreeMatrix, Sp2State)> {
    let n = f.n_native();
    if n_occ == 0 || n_occ >= n {
        return Err(Error::InvalidOccupation { n_occ, n });
    }
    let bounds = gershgorin_bounds(f)?;
    let mut x = sp2_init(f, bounds)?;
    let target = n_occ as f64;
    let mut state = Sp2State {
        x: QuadTreeMatrix::zeros(n, f.layout())?,
        n_occ,
        bounds,
        trace_history: vec![x.trace()],
        branch_history: Vec::new(),
        iteration: 0,
        converged: false,
        diagnostic: None,
        wall_seconds_per_iteration: Vec::new(),
        leaf_products_per_iteration: Vec::new(),
    };
    let mut last = (f64::NAN, f64::NAN);
    while state.iteration < options.max_iter {
        let step = sp2_step(&x, n_occ, options.tau, &options.multiply)?;
        x = step.x;
        state.iteration += 1;
        state.trace_history.push(x.trace());
        state.branch_history.push(step.branch);
        state.wall_seconds_per_iteration.push(step.wall_seconds);
        state.leaf_products_per_iteration.push(step.leaf_products);
        last = ((step.trace_x2 - step.trace_x).abs(), (step.trace_x - target).abs());
        if last.0 < options.idempotency_tol && last.1 < options.trace_rel_tol * target {
            state.converged = true;
            break;
        }
    }
    if !state.converged {
        state.diagnostic = Some(format!(
            "no convergence after {} iterations: |tr(X^2) - tr(X)| = {:.3e}, |tr(X) - n_occ| = {:.3e}; \
             an eigenvalue at the occupation boundary or a large tau can cause this",
            state.iteration, last.0, last.1
        ));
    }
    state.x = x.clone();
    Ok((x, state))
}

/// `Tr[F (P_ref - P_approx)]`, computed exactly.
pub fn energy_error(f: &QuadTreeMatrix, p_ref: &QuadTreeMatrix, p_approx: &QuadTreeMatrix) -> Result<f64> {
    let diff = QuadTreeMatrix::add_scaled(1.0, p_ref, -1.0, p_approx)?;
    f.trace_of_product(&diff)
}

/// `||P^2 - P||_F` with an exact product.
pub fn idempotency_error(p: &QuadTreeMatrix) -> Result<f64> {
    let (p2, _) = multiply(p, p, SpammTolerance::EXACT, &MultiplyOptions::serial())?;
    Ok(QuadTreeMatrix::add_scaled(1.0, &p2, -1.0, p)?.frobenius_norm())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub n: usize,
    pub n_occ: usize,
    pub tau: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostic: Option<String>,
    pub eps_min: f64,
    pub eps_max: f64,
    pub trace_history: Vec<f64>,
    pub branch_history: Vec<Branch>,
    pub idempotency_error: f64,
    pub leaf_products_per_iteration: Vec<u64>,
    pub wall_seconds_per_iteration: Vec<f64>,
}

impl SolveReport {
    pub fn new(state: &Sp2State, tau: SpammTolerance) -> Result<Self> {
        Ok(Self {
            n: state.x.n_native(),
            n_occ: state.n_occ,
            tau: tau.value(),
            iterations: state.iteration,
            converged: state.converged,
            diagnostic: state.diagnostic.clone(),
            eps_min: state.bounds.eps_min,
            eps_max: state.bounds.eps_max,
            trace_history: state.trace_history.clone(),
            branch_history: state.branch_history.clone(),
            idempotency_error: idempotency_error(&state.x)?,
            leaf_products_per_iteration: state.leaf_products_per_iteration.clone(),
            wall_seconds_per_iteration: state.wall_seconds_per_iteration.clone(),
        })
    }
}
