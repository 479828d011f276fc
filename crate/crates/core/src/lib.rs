//! Tabular solvers for policy optimization with distributional constraints
//! on state visitation and global action execution.
//!
//! The optimization variable throughout is the occupancy measure: the
//! discounted joint distribution over state-action pairs induced by a
//! policy. Marginal targets are enforced softly (KL penalties) or exactly,
//! and the solver alternates closed-form marginal proximal steps with a
//! dual-solved KL projection onto the occupancy polytope, scheduled by
//! Dykstra's algorithm with correction buffers. All iteration happens in
//! the log domain so seeds like `exp(r / 0.01)` are representable.
//!
//! The crate is `no_std` (with `alloc`); IO, file formats, and the
//! experiment CLI live in the companion `dcpo-cli` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dykstra;
pub mod gridworld;
pub mod math;
pub mod matrix;
pub mod mdp;
pub mod occupancy;
pub mod projection;
pub mod prox;
pub mod solver;

pub use dykstra::{
    dykstra_kl, sinkhorn, ConstraintSpec, DualStats, DykstraState, SolverError, StopRule, SweepDiag,
};
pub use gridworld::{build_gridworld, render_policy, GridSpec, GridVariant};
pub use matrix::Mat;
pub use mdp::{value_iteration, Mdp, MdpError, ValueIteration};
pub use occupancy::{
    expected_return, flow_residual, kl_decomposition, kl_joint, occupancy_from_policy,
    policy_from_occupancy, FlowOperator, OccupancyError, OccupancyMeasure, Policy,
};
pub use projection::{
    dual_gradient, dual_log_weights, dual_objective, project_onto_delta, project_onto_delta_with,
    DualState, ProjectionError, ProjectionOptions,
};
pub use prox::{
    prox_hard_action, prox_hard_state, prox_kl_action, prox_kl_state, MarginalAxis,
    MarginalPenalty, PenaltyKind, ProxError,
};
pub use solver::{
    iterate_outer, iterate_outer_from, solve, DcpoProblem, OuterAborted, ResidualCurves,
    SolveReport,
};
