//! Top-level solvers: assemble a constrained problem into Dykstra
//! constraint lists, run it, and extract a policy. Also the outer
//! iterative-improvement loop that re-targets the marginal penalties at
//! the previous iterate.

use alloc::vec::Vec;
use core::fmt;

use crate::dykstra::{dykstra_kl, ConstraintSpec, DualStats, SolverError, StopRule};
use crate::matrix::Mat;
use crate::mdp::Mdp;
use crate::occupancy::{
    expected_return, occupancy_from_policy, policy_from_occupancy, OccupancyMeasure, Policy,
};
use crate::prox::{MarginalAxis, MarginalPenalty};

/// Default reward temperature for `xi = exp(r / epsilon)`. Low enough that
/// the entropic optimum is near-greedy while the log-domain solvers stay
/// exact.
pub const DEFAULT_TEMPERATURE: f64 = 0.01;

/// Default soft-penalty coefficients.
pub const DEFAULT_PENALTY_COEFF: f64 = 1.0;

/// One constrained policy-optimization problem: seed temperature, at most
/// one marginal penalty per axis, an optional baseline measure folded into
/// the seed, and the sweep stopping rule.
#[derive(Debug, Clone)]
pub struct DcpoProblem<'a> {
    mdp: &'a Mdp,
    epsilon: f64,
    state_constraint: Option<MarginalPenalty>,
    action_constraint: Option<MarginalPenalty>,
    baseline: Option<OccupancyMeasure>,
    stop: StopRule,
}

impl<'a> DcpoProblem<'a> {
    pub fn new(mdp: &'a Mdp, epsilon: f64) -> Self {
        assert!(epsilon > 0.0, "temperature must be positive");
        Self {
            mdp,
            epsilon,
            state_constraint: None,
            action_constraint: None,
            baseline: None,
            stop: StopRule::default(),
        }
    }

    pub fn with_state_constraint(mut self, penalty: MarginalPenalty) -> Self {
        assert_eq!(penalty.axis(), MarginalAxis::State);
        self.state_constraint = Some(penalty);
        self
    }

    pub fn with_action_constraint(mut self, penalty: MarginalPenalty) -> Self {
        assert_eq!(penalty.axis(), MarginalAxis::Action);
        self.action_constraint = Some(penalty);
        self
    }

    /// Seed relative to a baseline: `xi = mu' * exp(r / epsilon)`.
    pub fn with_baseline(mut self, baseline: OccupancyMeasure) -> Self {
        assert_eq!(baseline.n_states(), self.mdp.n_states());
        assert_eq!(baseline.n_actions(), self.mdp.n_actions());
        self.baseline = Some(baseline);
        self
    }

    pub fn with_stop(mut self, stop: StopRule) -> Self {
        self.stop = stop;
        self
    }

    pub fn mdp(&self) -> &Mdp {
        self.mdp
    }

    pub fn stop(&self) -> &StopRule {
        &self.stop
    }

    /// `log xi = r / epsilon (+ log mu')`.
    pub fn log_seed(&self) -> Mat {
        let n = self.mdp.n_states();
        let na = self.mdp.n_actions();
        let mut log_xi = Mat::zeros(n, na);
        for s in 0..n {
            for a in 0..na {
                let mut v = self.mdp.reward(s, a) / self.epsilon;
                if let Some(baseline) = &self.baseline {
                    let lb = baseline.log().get(s, a);
                    v = if lb == f64::NEG_INFINITY { lb } else { v + lb };
                }
                log_xi.set(s, a, v);
            }
        }
        log_xi
    }
}

/// Per-sweep residual series recorded against the constraint targets
/// (Euclidean norm), plus the sweep-to-sweep Frobenius deltas.
#[derive(Debug, Clone, Default)]
pub struct ResidualCurves {
    pub state: Option<Vec<f64>>,
    pub action: Option<Vec<f64>>,
    pub frobenius: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub mu: OccupancyMeasure,
    pub policy: Policy,
    pub expected_return: f64,
    /// Completed sweeps.
    pub iterations: usize,
    pub converged: bool,
    pub residual_curves: ResidualCurves,
    pub dual_stats: DualStats,
}

/// Inner projection tolerance derived from the sweep tolerance: four
/// orders tighter, clamped to what f64 gradients can resolve.
fn inner_projection_tol(frobenius_tol: f64) -> f64 {
    (frobenius_tol * 1e-4).clamp(1e-13, 1e-9)
}

/// Solve a distributionally-constrained problem: build the seed, order the
/// constraints (state, action, then polytope membership), run Dykstra, and
/// extract the policy.
pub fn solve(problem: &DcpoProblem) -> Result<SolveReport, SolverError> {
    let log_xi = problem.log_seed();
    let mut constraints: Vec<ConstraintSpec> = Vec::with_capacity(3);
    if let Some(p) = &problem.state_constraint {
        constraints.push(ConstraintSpec::Marginal(p.clone()));
    }
    if let Some(p) = &problem.action_constraint {
        constraints.push(ConstraintSpec::Marginal(p.clone()));
    }
    constraints.push(ConstraintSpec::Delta {
        mdp: problem.mdp,
        tol: inner_projection_tol(problem.stop.frobenius_tol),
    });
    let (mu, state) = dykstra_kl(&log_xi, &constraints, &problem.stop)?;

    let mut curves = ResidualCurves::default();
    for diag in state.history() {
        curves.frobenius.push(diag.frobenius_delta);
        if let Some(r) = diag.state_residual {
            curves.state.get_or_insert_with(Vec::new).push(r);
        }
        if let Some(r) = diag.action_residual {
            curves.action.get_or_insert_with(Vec::new).push(r);
        }
    }
    let policy = policy_from_occupancy(&mu);
    let value = expected_return(&mu, problem.mdp);
    Ok(SolveReport {
        mu,
        policy,
        expected_return: value,
        iterations: state.sweeps(),
        converged: state.converged(),
        residual_curves: curves,
        dual_stats: state.dual_stats().clone(),
    })
}

/// An outer loop aborted mid-trajectory; carries what completed.
#[derive(Debug)]
pub struct OuterAborted {
    pub trajectory: Vec<SolveReport>,
    pub source: SolverError,
}

impl fmt::Display for OuterAborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "outer iteration aborted after {} completed steps: {}",
            self.trajectory.len(),
            self.source
        )
    }
}

impl core::error::Error for OuterAborted {}

/// Iterative policy improvement: at step k, re-solve with both marginal
/// targets taken from the previous iterate,
/// `rho' = mu_{k-1} 1`, `eta' = mu_{k-1}^T 1`. Expected return is
/// non-decreasing along the trajectory and converges to the optimum of the
/// entropic objective.
///
/// `tol` is the inner sweep (Frobenius) tolerance; starts from the uniform
/// policy's occupancy measure.
pub fn iterate_outer(
    mdp: &Mdp,
    epsilons: (f64, f64),
    k_max: usize,
    tol: f64,
) -> Result<Vec<SolveReport>, OuterAborted> {
    let mu0 = occupancy_from_policy(mdp, &Policy::uniform(mdp.n_states(), mdp.n_actions()))
        .expect("discounted flow system is nonsingular for gamma < 1");
    iterate_outer_from(mdp, &mu0, epsilons, k_max, tol)
}

/// [`iterate_outer`] from an explicit strictly-positive starting measure.
pub fn iterate_outer_from(
    mdp: &Mdp,
    mu0: &OccupancyMeasure,
    epsilons: (f64, f64),
    k_max: usize,
    tol: f64,
) -> Result<Vec<SolveReport>, OuterAborted> {
    let (eps1, eps2) = epsilons;
    assert!(eps1 > 0.0 && eps2 > 0.0, "penalty coefficients must be positive");
    let mut trajectory: Vec<SolveReport> = Vec::with_capacity(k_max);
    let mut current = mu0.clone();
    for _ in 0..k_max {
        let rho_target = current.state_marginal();
        let eta_target = current.action_marginal();
        let state_penalty = MarginalPenalty::kl(MarginalAxis::State, rho_target, eps1)
            .map_err(|source| OuterAborted {
                trajectory: trajectory.clone(),
                source: SolverError::Prox { constraint_index: 0, source },
            })?;
        let action_penalty = MarginalPenalty::kl(MarginalAxis::Action, eta_target, eps2)
            .map_err(|source| OuterAborted {
                trajectory: trajectory.clone(),
                source: SolverError::Prox { constraint_index: 1, source },
            })?;
        let problem = DcpoProblem::new(mdp, DEFAULT_TEMPERATURE)
            .with_state_constraint(state_penalty)
            .with_action_constraint(action_penalty)
            .with_stop(StopRule { frobenius_tol: tol, ..StopRule::default() });
        match solve(&problem) {
            Ok(report) => {
                current = report.mu.clone();
                trajectory.push(report);
            }
            Err(source) => return Err(OuterAborted { trajectory, source }),
        }
    }
    Ok(trajectory)
}
