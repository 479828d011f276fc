//! KL projection onto the occupancy polytope via its dual over value
//! functions.
//!
//! The projection `argmin_{mu~ in Delta} KL(mu~ | mu)` has no closed form;
//! its dual is the smooth convex problem
//!
//! ```text
//! min_V  log sum_{s,a} mu(s,a) exp(gamma (PV)(s,a) - V(s)) + (1-gamma) <p0, V>
//! ```
//!
//! whose softmax weights recover the projected measure. The dual is
//! invariant under `V -> V + c`, so iterates are mean-centered. Solved by
//! gradient descent with Armijo backtracking; the dual is smooth and only
//! `|S|`-dimensional, which keeps a first-order method dependency-free.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::matrix::Mat;
use crate::mdp::Mdp;
use crate::occupancy::OccupancyMeasure;

/// Default gradient sup-norm tolerance. Dykstra stops on iterate changes
/// at 1e-5, so inner projections run four orders tighter.
pub const DEFAULT_PROJECTION_TOL: f64 = 1e-9;

pub const MAX_PROJECTION_ITERATIONS: usize = 50_000;

const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK_SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionError {
    /// Gradient tolerance not reached within the iteration cap (or the
    /// line search could make no further progress).
    NonConvergence { grad_norm: f64, iterations: usize },
    /// No occupancy measure lives inside the support of the input.
    Infeasible { state: Option<usize> },
}

impl fmt::Display for ProjectionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProjectionError::NonConvergence { grad_norm, iterations } => write!(
                f,
                "dual solver stopped after {iterations} iterations with gradient norm {grad_norm:e}"
            ),
            ProjectionError::Infeasible { state: Some(s) } => {
                write!(f, "projection infeasible: state {s} carries initial mass but has empty support")
            }
            ProjectionError::Infeasible { state: None } => {
                write!(f, "projection infeasible on the given support")
            }
        }
    }
}

impl core::error::Error for ProjectionError {}

/// Solver state for one dual solve.
#[derive(Debug, Clone)]
pub struct DualState {
    /// Dual value function at termination (mean-centered).
    pub v: Vec<f64>,
    /// Normalizer `lambda = log Z` recovered at the solution.
    pub lambda: f64,
    /// Final dual objective value.
    pub objective: f64,
    /// Final gradient sup-norm.
    pub grad_norm: f64,
    /// Accepted gradient steps taken.
    pub iterations: usize,
    /// Objective after each accepted step (only when requested).
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ProjectionOptions {
    pub tol: f64,
    pub max_iterations: usize,
    pub record_trace: bool,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_PROJECTION_TOL,
            max_iterations: MAX_PROJECTION_ITERATIONS,
            record_trace: false,
        }
    }
}

/// `gamma * (P V)(s,a)` for all `(s,a)` pairs, flattened row-major.
fn discounted_lookahead(mdp: &Mdp, v: &[f64]) -> Vec<f64> {
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let gamma = mdp.discount();
    let mut out = Vec::with_capacity(n * na);
    for s in 0..n {
        for a in 0..na {
            out.push(gamma * math::dot(mdp.transition_row(s, a), v));
        }
    }
    out
}

fn objective_given_lookahead(mdp: &Mdp, log_mu: &Mat, v: &[f64], lookahead: &[f64]) -> f64 {
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let log_z = math::logsumexp((0..n * na).map(|i| {
        let (s, a) = (i / na, i % na);
        log_mu.get(s, a) + lookahead[i] - v[s]
    }));
    log_z + (1.0 - mdp.discount()) * math::dot(mdp.initial_dist(), v)
}

/// The dual objective `log sum mu exp(gamma PV - V) + (1-gamma) <p0, V>`,
/// evaluated with a log-sum-exp reduction.
pub fn dual_objective(mdp: &Mdp, log_mu: &Mat, v: &[f64]) -> f64 {
    assert_eq!(v.len(), mdp.n_states());
    assert_eq!(log_mu.rows(), mdp.n_states());
    assert_eq!(log_mu.cols(), mdp.n_actions());
    let lookahead = discounted_lookahead(mdp, v);
    objective_given_lookahead(mdp, log_mu, v, &lookahead)
}

/// Log-domain softmax weights `e(s,a) - log Z` where
/// `e = log mu + gamma PV - V`; returns `(log_weights, log Z)`. The weights
/// are exactly the primal recovery for the dual point `v`.
pub fn dual_log_weights(mdp: &Mdp, log_mu: &Mat, v: &[f64]) -> (Mat, f64) {
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let lookahead = discounted_lookahead(mdp, v);
    let mut e = Mat::zeros(n, na);
    for s in 0..n {
        for a in 0..na {
            let lm = log_mu.get(s, a);
            let val = if lm == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lm + lookahead[s * na + a] - v[s]
            };
            e.set(s, a, val);
        }
    }
    let log_z = math::logsumexp(e.as_slice().iter().copied());
    let weights = e.map(|x| if x == f64::NEG_INFINITY { x } else { x - log_z });
    (weights, log_z)
}

/// Gradient of the dual objective: the negated Bellman-flow residual of
/// the softmax weights,
/// `grad(s) = gamma sum w P(s|.) - sum_a w(s,a) + (1-gamma) p0(s)`.
pub fn dual_gradient(mdp: &Mdp, log_mu: &Mat, v: &[f64]) -> Vec<f64> {
    let (log_w, _) = dual_log_weights(mdp, log_mu, v);
    gradient_from_log_weights(mdp, &log_w)
}

fn gradient_from_log_weights(mdp: &Mdp, log_w: &Mat) -> Vec<f64> {
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let gamma = mdp.discount();
    let mut grad: Vec<f64> = mdp
        .initial_dist()
        .iter()
        .map(|&p| (1.0 - gamma) * p)
        .collect();
    for s in 0..n {
        for a in 0..na {
            let lw = log_w.get(s, a);
            if lw == f64::NEG_INFINITY {
                continue;
            }
            let w = math::exp(lw);
            grad[s] -= w;
            let row = mdp.transition_row(s, a);
            for s2 in 0..n {
                grad[s2] += gamma * w * row[s2];
            }
        }
    }
    grad
}

fn center(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
}

/// KL projection onto the occupancy polytope, warm-started at `v0`.
///
/// Minimizes the dual by gradient descent with Armijo backtracking,
/// re-centering `V` to mean zero after each accepted step; stops at
/// gradient sup-norm `<= opts.tol`. On success the returned measure sums
/// to one and satisfies `|flow_residual|_inf <= 10 * tol`.
pub fn project_onto_delta_with(
    mdp: &Mdp,
    log_mu: &Mat,
    v0: &[f64],
    opts: &ProjectionOptions,
) -> Result<(OccupancyMeasure, DualState), ProjectionError> {
    assert_eq!(log_mu.rows(), mdp.n_states());
    assert_eq!(log_mu.cols(), mdp.n_actions());
    assert_eq!(v0.len(), mdp.n_states());
    // A state that must carry initial mass but has empty support can never
    // satisfy the flow constraints.
    for s in 0..mdp.n_states() {
        if mdp.initial_dist()[s] > 0.0
            && log_mu.row(s).iter().all(|&x| x == f64::NEG_INFINITY)
        {
            return Err(ProjectionError::Infeasible { state: Some(s) });
        }
    }

    let mut v = v0.to_vec();
    center(&mut v);
    let mut trace = Vec::new();
    let mut iterations = 0usize;

    loop {
        let (log_w, log_z) = dual_log_weights(mdp, log_mu, &v);
        let objective = log_z + (1.0 - mdp.discount()) * math::dot(mdp.initial_dist(), &v);
        let grad = gradient_from_log_weights(mdp, &log_w);
        let grad_norm = math::inf_norm(&grad);
        if opts.record_trace {
            trace.push(objective);
        }

        let finish = |converged: bool| {
            let state = DualState {
                v: v.clone(),
                lambda: log_z,
                objective,
                grad_norm,
                iterations,
                objective_trace: trace.clone(),
            };
            if converged {
                Ok((OccupancyMeasure::from_log(log_w.clone()), state))
            } else {
                Err(ProjectionError::NonConvergence { grad_norm, iterations })
            }
        };

        if grad_norm <= opts.tol {
            return finish(true);
        }
        if iterations >= opts.max_iterations {
            return finish(false);
        }
        if math::inf_norm(&v) > 1e10 || objective < -1e12 {
            return Err(ProjectionError::Infeasible { state: None });
        }

        let grad_sq = math::dot(&grad, &grad);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut candidate: Vec<f64> = v
                .iter()
                .zip(&grad)
                .map(|(&vi, &gi)| vi - step * gi)
                .collect();
            center(&mut candidate);
            let lookahead = discounted_lookahead(mdp, &candidate);
            let f_cand = objective_given_lookahead(mdp, log_mu, &candidate, &lookahead);
            if f_cand <= objective - ARMIJO_C1 * step * grad_sq {
                accepted = Some(candidate);
                break;
            }
            step *= BACKTRACK_SHRINK;
        }
        match accepted {
            Some(candidate) => {
                v = candidate;
                iterations += 1;
            }
            // No step of any size decreases the objective: report instead
            // of spinning.
            None => return finish(false),
        }
    }
}

/// KL projection onto the occupancy polytope from a cold start (`V = 0`).
pub fn project_onto_delta(
    mdp: &Mdp,
    log_mu: &Mat,
    tol: f64,
) -> Result<(OccupancyMeasure, DualState), ProjectionError> {
    let opts = ProjectionOptions { tol, ..ProjectionOptions::default() };
    project_onto_delta_with(mdp, log_mu, &vec![0.0; mdp.n_states()], &opts)
}

#[cfg(test)]
mod tests {
    extern crate std;
    use super::*;
    use crate::math::{exp, inf_norm, ln};
    use crate::occupancy::{flow_residual, kl_joint, occupancy_from_policy, Policy};

    fn three_state_mdp() -> Mdp {
        let transition = Mat::from_rows(
            6,
            3,
            &[
                0.7, 0.2, 0.1, // s0 a0
                0.1, 0.6, 0.3, // s0 a1
                0.3, 0.3, 0.4, // s1 a0
                0.5, 0.25, 0.25, // s1 a1
                0.2, 0.2, 0.6, // s2 a0
                0.4, 0.4, 0.2, // s2 a1
            ],
        );
        let reward = Mat::from_rows(3, 2, &[0.5, -0.2, 0.1, 0.9, -0.4, 0.3]);
        Mdp::new(3, 2, transition, reward, 0.8, vec![0.5, 0.3, 0.2]).unwrap()
    }

    #[test]
    fn objective_at_zero_is_log_mass() {
        let mdp = three_state_mdp();
        let log_mu = Mat::from_rows(3, 2, &[0.3f64, 0.1, 0.05, 0.2, 0.15, 0.2]).map(ln);
        let obj = dual_objective(&mdp, &log_mu, &[0.0, 0.0, 0.0]);
        assert!((obj - ln(1.0)).abs() < 1e-12);
    }

    #[test]
    fn objective_is_shift_invariant() {
        let mdp = three_state_mdp();
        let log_mu = Mat::from_rows(3, 2, &[0.3f64, 0.1, 0.05, 0.2, 0.15, 0.2]).map(ln);
        let v = [0.4, -1.1, 0.7];
        let shifted: Vec<f64> = v.iter().map(|x| x + 7.3).collect();
        let a = dual_objective(&mdp, &log_mu, &v);
        let b = dual_objective(&mdp, &log_mu, &shifted);
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn objective_matches_naive_summation() {
        // Oracle: explicit exp sums, no log-sum-exp shift.
        let transition = Mat::from_rows(4, 2, &[0.6, 0.4, 0.3, 0.7, 0.8, 0.2, 0.1, 0.9]);
        let mdp = Mdp::new(2, 2, transition, Mat::zeros(2, 2), 0.9, std::vec![0.4, 0.6]).unwrap();
        let mu = Mat::from_rows(2, 2, &[0.2f64, 0.4, 0.3, 0.1]);
        let log_mu = mu.map(ln);
        let v = [0.25, -0.5];
        let mut naive = 0.0;
        for s in 0..2 {
            for a in 0..2 {
                let pv: f64 = (0..2).map(|s2| mdp.transition_prob(s, a, s2) * v[s2]).sum();
                naive += mu.get(s, a) * exp(0.9 * pv - v[s]);
            }
        }
        let naive = ln(naive) + (1.0 - 0.9) * (0.4 * v[0] + 0.6 * v[1]);
        let obj = dual_objective(&mdp, &log_mu, &v);
        assert!((obj - naive).abs() <= 1e-12);
    }

    #[test]
    fn gradient_components_sum_to_zero() {
        let mdp = three_state_mdp();
        let log_mu = Mat::from_rows(3, 2, &[0.3f64, 0.1, 0.05, 0.2, 0.15, 0.2]).map(ln);
        let g = dual_gradient(&mdp, &log_mu, &[0.2, -0.7, 0.4]);
        let total: f64 = g.iter().sum();
        assert!(total.abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mdp = three_state_mdp();
        let log_mu = Mat::from_rows(3, 2, &[0.3f64, 0.1, 0.05, 0.2, 0.15, 0.2]).map(ln);
        let v = [0.3, -0.2, 0.5];
        let g = dual_gradient(&mdp, &log_mu, &v);
        let h = 1e-5;
        for s in 0..3 {
            let mut vp = v;
            let mut vm = v;
            vp[s] += h;
            vm[s] -= h;
            let fd = (dual_objective(&mdp, &log_mu, &vp) - dual_objective(&mdp, &log_mu, &vm))
                / (2.0 * h);
            let denom = fd.abs().max(1e-8);
            assert!(
                (g[s] - fd).abs() / denom <= 1e-6,
                "component {s}: analytic {} vs fd {fd}",
                g[s]
            );
        }
    }

    #[test]
    fn projecting_a_member_returns_it() {
        let mdp = three_state_mdp();
        let pi = Policy::from_mat(Mat::from_rows(3, 2, &[0.4, 0.6, 0.7, 0.3, 0.5, 0.5])).unwrap();
        let mu = occupancy_from_policy(&mdp, &pi).unwrap();
        let (projected, dual) = project_onto_delta(&mdp, mu.log(), 1e-10).unwrap();
        assert!(projected.linear().frobenius_distance(mu.linear()) <= 1e-8);
        // V* is constant; mean-centered it collapses to ~0.
        assert!(inf_norm(&dual.v) <= 1e-6, "v = {:?}", dual.v);
    }

    #[test]
    fn projection_is_feasible_and_beats_random_member() {
        let mdp = three_state_mdp();
        let log_mu = Mat::from_rows(3, 2, &[0.4f64, 0.05, 0.3, 0.02, 0.2, 0.9]).map(ln);
        let (projected, dual) = project_onto_delta(&mdp, &log_mu, 1e-9).unwrap();
        assert!(dual.grad_norm <= 1e-9);
        assert!(inf_norm(&flow_residual(&projected, &mdp)) <= 1e-8);
        assert!((projected.mass() - 1.0).abs() <= 1e-9);
        let seed = OccupancyMeasure::from_log(log_mu.clone());
        let competitor = occupancy_from_policy(
            &mdp,
            &Policy::from_mat(Mat::from_rows(3, 2, &[0.9, 0.1, 0.2, 0.8, 0.6, 0.4])).unwrap(),
        )
        .unwrap();
        assert!(kl_joint(&projected, &seed).unwrap() <= kl_joint(&competitor, &seed).unwrap() + 1e-9);
    }

    #[test]
    fn empty_required_row_is_infeasible() {
        let mdp = three_state_mdp();
        let mut log_mu = Mat::from_rows(3, 2, &[0.4f64, 0.05, 0.3, 0.02, 0.2, 0.9]).map(ln);
        log_mu.set(0, 0, f64::NEG_INFINITY);
        log_mu.set(0, 1, f64::NEG_INFINITY);
        assert!(matches!(
            project_onto_delta(&mdp, &log_mu, 1e-9),
            Err(ProjectionError::Infeasible { state: Some(0) })
        ));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let mdp = three_state_mdp();
        let log_mu = Mat::from_rows(3, 2, &[0.4f64, 0.05, 0.3, 0.02, 0.2, 0.9]).map(ln);
        let opts = ProjectionOptions { tol: 1e-12, max_iterations: 3, record_trace: false };
        let err = project_onto_delta_with(&mdp, &log_mu, &[0.0; 3], &opts).unwrap_err();
        assert!(matches!(err, ProjectionError::NonConvergence { iterations: 3, .. }));
    }
}
