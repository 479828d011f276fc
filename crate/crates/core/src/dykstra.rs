//! KL-specialized Dykstra iterations: cyclic proximal steps over N
//! constraint sets with correction buffers, in the log domain.
//!
//! The iteration is
//!
//! ```text
//! mu(l) = Prox_{phi_[l]}( mu(l-1) * z(l-N) )
//! z(l)  = z(l-N) * mu(l-1) / mu(l)
//! ```
//!
//! elementwise, with `mu(0) = xi` and `z = 1`. With two hard marginal
//! constraints this is exactly Sinkhorn-Knopp; adding the occupancy
//! polytope as a third set gives the distributionally-constrained solver.
//!
//! Exact zeros are represented as `-inf`. Products treat `0 * anything = 0`
//! and the correction update defines `0 / 0 = 1`, so zero-support entries
//! stay zero under every prox in this family.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::matrix::Mat;
use crate::mdp::Mdp;
use crate::occupancy::OccupancyMeasure;
use crate::projection::{project_onto_delta_with, ProjectionError, ProjectionOptions};
use crate::prox::{MarginalAxis, MarginalPenalty, ProxError};

#[derive(Debug, Clone, PartialEq)]
pub enum SolverError {
    /// A marginal prox failed at `constraint_index`.
    Prox { constraint_index: usize, source: ProxError },
    /// The polytope projection failed at `constraint_index`.
    Projection { constraint_index: usize, source: ProjectionError },
    /// Sinkhorn requires marginals of equal total mass.
    MassMismatch { row_mass: f64, col_mass: f64 },
    NonPositiveMarginal,
    NoConstraints,
    /// Sinkhorn hit its internal iteration cap.
    IterationCap { iterations: usize, residual: f64 },
}

impl fmt::Display for SolverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverError::Prox { constraint_index, source } => {
                write!(f, "prox for constraint {constraint_index} failed: {source}")
            }
            SolverError::Projection { constraint_index, source } => {
                write!(f, "projection for constraint {constraint_index} failed: {source}")
            }
            SolverError::MassMismatch { row_mass, col_mass } => {
                write!(f, "marginal masses differ: rows {row_mass} vs columns {col_mass}")
            }
            SolverError::NonPositiveMarginal => write!(f, "marginals must be strictly positive"),
            SolverError::NoConstraints => write!(f, "constraint list is empty"),
            SolverError::IterationCap { iterations, residual } => {
                write!(f, "sinkhorn stopped after {iterations} iterations at residual {residual:e}")
            }
        }
    }
}

impl core::error::Error for SolverError {}

/// One Dykstra constraint set.
#[derive(Debug, Clone)]
pub enum ConstraintSpec<'a> {
    /// Soft or hard penalty on a marginal.
    Marginal(MarginalPenalty),
    /// Membership in the occupancy polytope of `mdp`, projected via the
    /// dual solver at gradient tolerance `tol`.
    Delta { mdp: &'a Mdp, tol: f64 },
}

/// Stopping policy for the sweep loop.
#[derive(Debug, Clone)]
pub struct StopRule {
    /// Frobenius norm threshold on the change across consecutive full
    /// sweeps.
    pub frobenius_tol: f64,
    pub max_sweeps: usize,
    /// Extra marginal target whose residual curve is recorded per sweep.
    pub track_marginal: Option<(MarginalAxis, Vec<f64>)>,
}

impl Default for StopRule {
    fn default() -> Self {
        Self { frobenius_tol: 1e-5, max_sweeps: 5_000, track_marginal: None }
    }
}

/// Per-sweep diagnostics.
#[derive(Debug, Clone)]
pub struct SweepDiag {
    pub sweep: usize,
    /// `|mu_sweep - mu_prev_sweep|_F` in the linear domain.
    pub frobenius_delta: f64,
    /// `|mu 1 - rho'|_2` against the first state-marginal constraint.
    pub state_residual: Option<f64>,
    /// `|mu^T 1 - eta'|_2` against the first action-marginal constraint.
    pub action_residual: Option<f64>,
    /// Residual against `StopRule::track_marginal`.
    pub tracked_residual: Option<f64>,
}

/// Aggregate statistics over the inner polytope projections of one solve.
#[derive(Debug, Clone, Default)]
pub struct DualStats {
    pub projections: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
    pub last_grad_norm: f64,
}

/// Iteration state: the log-domain iterate, the N-slot correction buffer,
/// and per-sweep diagnostics.
#[derive(Debug, Clone)]
pub struct DykstraState {
    log_mu: Mat,
    log_z: Vec<Mat>,
    l: usize,
    history: Vec<SweepDiag>,
    converged: bool,
    dual_stats: DualStats,
    /// Warm start for the polytope projection, carried across sweeps. The
    /// projection solves to a fixed gradient tolerance, so this changes
    /// only the iteration count, not the result.
    warm_v: Option<Vec<f64>>,
}

/// `log(a * b)` with `0 * anything = 0`.
#[inline]
fn log_mul(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        a + b
    }
}

impl DykstraState {
    pub fn new(log_xi: Mat, n_constraints: usize) -> Self {
        let zeros = Mat::zeros(log_xi.rows(), log_xi.cols());
        Self {
            log_mu: log_xi,
            log_z: vec![zeros; n_constraints],
            l: 0,
            history: Vec::new(),
            converged: false,
            dual_stats: DualStats::default(),
            warm_v: None,
        }
    }

    pub fn log_mu(&self) -> &Mat {
        &self.log_mu
    }

    pub fn linear_mu(&self) -> Mat {
        self.log_mu.map(math::exp)
    }

    /// Correction buffer entry for constraint `i` (log domain).
    pub fn log_z(&self, i: usize) -> &Mat {
        &self.log_z[i]
    }

    pub fn iteration(&self) -> usize {
        self.l
    }

    pub fn sweeps(&self) -> usize {
        self.history.len()
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn history(&self) -> &[SweepDiag] {
        &self.history
    }

    pub fn dual_stats(&self) -> &DualStats {
        &self.dual_stats
    }

    /// Apply one proximal step (constraint `[l]_N` in cyclic order).
    pub fn step(&mut self, constraints: &[ConstraintSpec]) -> Result<(), SolverError> {
        let n = constraints.len();
        assert_eq!(n, self.log_z.len(), "constraint list changed length mid-run");
        let index = self.l % n;
        let input = self.log_mu.zip_map(&self.log_z[index], log_mul);
        let new_log_mu = match &constraints[index] {
            ConstraintSpec::Marginal(penalty) => penalty
                .apply_log(&input)
                .map_err(|source| SolverError::Prox { constraint_index: index, source })?,
            ConstraintSpec::Delta { mdp, tol } => {
                let opts = ProjectionOptions { tol: *tol, ..ProjectionOptions::default() };
                let v0 = self
                    .warm_v
                    .clone()
                    .unwrap_or_else(|| vec![0.0; mdp.n_states()]);
                let (measure, dual) = project_onto_delta_with(mdp, &input, &v0, &opts)
                    .map_err(|source| SolverError::Projection { constraint_index: index, source })?;
                self.dual_stats.projections += 1;
                self.dual_stats.total_iterations += dual.iterations;
                self.dual_stats.max_iterations = self.dual_stats.max_iterations.max(dual.iterations);
                self.dual_stats.last_grad_norm = dual.grad_norm;
                self.warm_v = Some(dual.v);
                measure.log().clone()
            }
        };
        // z(l) = z(l-N) * mu(l-1) / mu(l); on dead entries (0/0) keep z.
        let z = &mut self.log_z[index];
        for r in 0..z.rows() {
            for c in 0..z.cols() {
                let old = self.log_mu.get(r, c);
                let new = new_log_mu.get(r, c);
                if old == f64::NEG_INFINITY && new == f64::NEG_INFINITY {
                    continue;
                }
                let updated = if new == f64::NEG_INFINITY {
                    // The prox killed this entry; every prox here preserves
                    // zeros, so it never revives and the weight is inert.
                    f64::INFINITY
                } else {
                    debug_assert!(old != f64::NEG_INFINITY, "support grew under a prox");
                    z.get(r, c) + old - new
                };
                z.set(r, c, updated);
            }
        }
        debug_assert!(new_log_mu.as_slice().iter().all(|x| !x.is_nan()));
        self.log_mu = new_log_mu;
        self.l += 1;
        Ok(())
    }
}

fn marginal_residual(mu: &Mat, axis: MarginalAxis, target: &[f64]) -> f64 {
    let marginal = match axis {
        MarginalAxis::State => mu.row_sums(),
        MarginalAxis::Action => mu.col_sums(),
    };
    let sq: f64 = marginal
        .iter()
        .zip(target)
        .map(|(&m, &t)| (m - t) * (m - t))
        .sum();
    math::sqrt(sq)
}

/// Run cyclic Dykstra over `constraints` starting from the seed `xi`
/// (given in the log domain).
///
/// Stops when the Frobenius change across consecutive full sweeps drops
/// below `stop.frobenius_tol`, or flags non-convergence after
/// `stop.max_sweeps`. Prox failures abort with the offending constraint's
/// index. When a polytope constraint is present the returned measure is
/// normalized.
pub fn dykstra_kl(
    log_xi: &Mat,
    constraints: &[ConstraintSpec],
    stop: &StopRule,
) -> Result<(OccupancyMeasure, DykstraState), SolverError> {
    if constraints.is_empty() {
        return Err(SolverError::NoConstraints);
    }
    let mut state = DykstraState::new(log_xi.clone(), constraints.len());
    let mut prev = state.linear_mu();
    for sweep in 1..=stop.max_sweeps {
        for _ in 0..constraints.len() {
            state.step(constraints)?;
        }
        let current = state.linear_mu();
        let frobenius_delta = current.frobenius_distance(&prev);
        let mut diag = SweepDiag {
            sweep,
            frobenius_delta,
            state_residual: None,
            action_residual: None,
            tracked_residual: None,
        };
        for c in constraints {
            if let ConstraintSpec::Marginal(p) = c {
                let slot = match p.axis() {
                    MarginalAxis::State => &mut diag.state_residual,
                    MarginalAxis::Action => &mut diag.action_residual,
                };
                if slot.is_none() {
                    *slot = Some(marginal_residual(&current, p.axis(), p.target()));
                }
            }
        }
        if let Some((axis, target)) = &stop.track_marginal {
            diag.tracked_residual = Some(marginal_residual(&current, *axis, target));
        }
        state.history.push(diag);
        prev = current;
        if frobenius_delta < stop.frobenius_tol {
            state.converged = true;
            break;
        }
    }
    let has_delta = constraints
        .iter()
        .any(|c| matches!(c, ConstraintSpec::Delta { .. }));
    let mut log_mu = state.log_mu.clone();
    if has_delta {
        let log_mass = math::logsumexp(log_mu.as_slice().iter().copied());
        if log_mass != 0.0 {
            log_mu = log_mu.map(|x| if x == f64::NEG_INFINITY { x } else { x - log_mass });
        }
    }
    Ok((OccupancyMeasure::from_log(log_mu), state))
}

/// Sinkhorn-Knopp: alternating row/column scalings of `exp(log_xi)` until
/// both marginals match `(a, b)` within `tol` in the sup norm. This is the
/// two-hard-marginal special case of [`dykstra_kl`] and doubles as its
/// equivalence oracle in tests.
pub fn sinkhorn(log_xi: &Mat, a: &[f64], b: &[f64], tol: f64) -> Result<Mat, SolverError> {
    assert_eq!(a.len(), log_xi.rows());
    assert_eq!(b.len(), log_xi.cols());
    if a.iter().chain(b).any(|&x| !(x > 0.0)) {
        return Err(SolverError::NonPositiveMarginal);
    }
    let mass_a: f64 = a.iter().sum();
    let mass_b: f64 = b.iter().sum();
    if libm::fabs(mass_a - mass_b) > 1e-9 * mass_a.max(mass_b).max(1.0) {
        return Err(SolverError::MassMismatch { row_mass: mass_a, col_mass: mass_b });
    }
    let log_a: Vec<f64> = a.iter().map(|&x| math::ln(x)).collect();
    let log_b: Vec<f64> = b.iter().map(|&x| math::ln(x)).collect();
    let mut log_m = log_xi.clone();
    const CAP: usize = 1_000_000;
    for iter in 0..CAP {
        let linear = log_m.map(math::exp);
        let row_err = linear
            .row_sums()
            .iter()
            .zip(a)
            .fold(0.0f64, |m, (&x, &t)| m.max(libm::fabs(x - t)));
        let col_err = linear
            .col_sums()
            .iter()
            .zip(b)
            .fold(0.0f64, |m, (&x, &t)| m.max(libm::fabs(x - t)));
        if row_err <= tol && col_err <= tol {
            return Ok(linear);
        }
        if iter == CAP - 1 {
            return Err(SolverError::IterationCap { iterations: CAP, residual: row_err.max(col_err) });
        }
        let row_lse = log_m.row_logsumexp();
        for r in 0..log_m.rows() {
            let shift = log_a[r] - row_lse[r];
            for c in 0..log_m.cols() {
                let v = log_m.get(r, c);
                if v != f64::NEG_INFINITY {
                    log_m.set(r, c, v + shift);
                }
            }
        }
        let col_lse = log_m.col_logsumexp();
        for c in 0..log_m.cols() {
            let shift = log_b[c] - col_lse[c];
            for r in 0..log_m.rows() {
                let v = log_m.get(r, c);
                if v != f64::NEG_INFINITY {
                    log_m.set(r, c, v + shift);
                }
            }
        }
    }
    unreachable!()
}
