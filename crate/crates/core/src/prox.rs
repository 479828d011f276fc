//! Closed-form KL proximal operators for marginal penalties.
//!
//! Each operator minimizes `KL(mu~ | mu) + phi(mu~)` where `phi` penalizes
//! one marginal of the matrix. The vector prox lifts to the matrix prox by
//! rescaling rows (state axis) or columns (action axis). Everything runs
//! in the log domain: seeds like `exp(r / 0.01)` reach `e^100`, so linear
//! scaling products would overflow long before the iteration converges.

use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::matrix::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalAxis {
    /// Row marginal `mu 1` over states.
    State,
    /// Column marginal `mu^T 1` over actions.
    Action,
}

impl fmt::Display for MarginalAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarginalAxis::State => write!(f, "state"),
            MarginalAxis::Action => write!(f, "action"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProxError {
    /// The iterate's marginal is zero where a positive target needs mass;
    /// the hard-projection analogue of a division by zero.
    InfeasibleMarginal { axis: MarginalAxis, index: usize },
    /// KL penalties need strictly positive targets (callers floor intended
    /// zeros at e^-10).
    NonPositiveTarget { axis: MarginalAxis, index: usize },
    NegativeTarget { axis: MarginalAxis, index: usize },
    BadCoefficient(f64),
    DimensionMismatch { expected: usize, got: usize },
}

impl fmt::Display for ProxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProxError::InfeasibleMarginal { axis, index } => {
                write!(f, "{axis} marginal is zero at index {index} but the target is positive")
            }
            ProxError::NonPositiveTarget { axis, index } => {
                write!(f, "KL penalty target must be strictly positive ({axis} index {index})")
            }
            ProxError::NegativeTarget { axis, index } => {
                write!(f, "negative target entry ({axis} index {index})")
            }
            ProxError::BadCoefficient(e) => write!(f, "penalty coefficient must be positive, got {e}"),
            ProxError::DimensionMismatch { expected, got } => {
                write!(f, "target length {got} does not match axis length {expected}")
            }
        }
    }
}

impl core::error::Error for ProxError {}

/// Rescale rows (or columns) of `log_mu` by `log_scale` per index.
fn scale_axis(log_mu: &Mat, log_scale: &[f64], axis: MarginalAxis) -> Mat {
    let mut out = log_mu.clone();
    for r in 0..log_mu.rows() {
        for c in 0..log_mu.cols() {
            let v = log_mu.get(r, c);
            if v == f64::NEG_INFINITY {
                continue; // zero entries stay zero under any scaling
            }
            let s = match axis {
                MarginalAxis::State => log_scale[r],
                MarginalAxis::Action => log_scale[c],
            };
            out.set(r, c, v + s);
        }
    }
    out
}

fn axis_logsumexp(log_mu: &Mat, axis: MarginalAxis) -> Vec<f64> {
    match axis {
        MarginalAxis::State => log_mu.row_logsumexp(),
        MarginalAxis::Action => log_mu.col_logsumexp(),
    }
}

fn axis_len(log_mu: &Mat, axis: MarginalAxis) -> usize {
    match axis {
        MarginalAxis::State => log_mu.rows(),
        MarginalAxis::Action => log_mu.cols(),
    }
}

fn prox_kl_axis(
    log_mu: &Mat,
    target: &[f64],
    epsilon: f64,
    axis: MarginalAxis,
) -> Result<Mat, ProxError> {
    let n = axis_len(log_mu, axis);
    if target.len() != n {
        return Err(ProxError::DimensionMismatch { expected: n, got: target.len() });
    }
    if !(epsilon > 0.0) {
        return Err(ProxError::BadCoefficient(epsilon));
    }
    if let Some(index) = target.iter().position(|&t| !(t > 0.0)) {
        return Err(ProxError::NonPositiveTarget { axis, index });
    }
    let log_marginal = axis_logsumexp(log_mu, axis);
    let mut log_scale = Vec::with_capacity(n);
    for (index, &lm) in log_marginal.iter().enumerate() {
        if lm == f64::NEG_INFINITY {
            return Err(ProxError::InfeasibleMarginal { axis, index });
        }
        // New marginal t = (m * target^eps)^(1/(1+eps)); scale = t / m.
        let log_t = (lm + epsilon * math::ln(target[index])) / (1.0 + epsilon);
        log_scale.push(log_t - lm);
    }
    Ok(scale_axis(log_mu, &log_scale, axis))
}

fn prox_hard_axis(log_mu: &Mat, target: &[f64], axis: MarginalAxis) -> Result<Mat, ProxError> {
    let n = axis_len(log_mu, axis);
    if target.len() != n {
        return Err(ProxError::DimensionMismatch { expected: n, got: target.len() });
    }
    if let Some(index) = target.iter().position(|&t| t < 0.0) {
        return Err(ProxError::NegativeTarget { axis, index });
    }
    let log_marginal = axis_logsumexp(log_mu, axis);
    let mut log_scale = Vec::with_capacity(n);
    for (index, &lm) in log_marginal.iter().enumerate() {
        if target[index] == 0.0 {
            // An exactly-zero target zeroes the whole row/column.
            log_scale.push(f64::NEG_INFINITY);
        } else if lm == f64::NEG_INFINITY {
            return Err(ProxError::InfeasibleMarginal { axis, index });
        } else {
            log_scale.push(math::ln(target[index]) - lm);
        }
    }
    let mut out = log_mu.clone();
    for r in 0..log_mu.rows() {
        for c in 0..log_mu.cols() {
            let v = log_mu.get(r, c);
            if v == f64::NEG_INFINITY {
                continue;
            }
            let s = match axis {
                MarginalAxis::State => log_scale[r],
                MarginalAxis::Action => log_scale[c],
            };
            out.set(r, c, if s == f64::NEG_INFINITY { s } else { v + s });
        }
    }
    Ok(out)
}

/// Prox of `eps1 * KL(mu 1 | rho')`: rescales each row so the state
/// marginal moves to the weighted geometric mean `(rho * rho'^eps1)^(1/(1+eps1))`.
pub fn prox_kl_state(log_mu: &Mat, rho_prime: &[f64], epsilon1: f64) -> Result<Mat, ProxError> {
    prox_kl_axis(log_mu, rho_prime, epsilon1, MarginalAxis::State)
}

/// Column analogue of [`prox_kl_state`] for the action marginal.
pub fn prox_kl_action(log_mu: &Mat, eta_prime: &[f64], epsilon2: f64) -> Result<Mat, ProxError> {
    prox_kl_axis(log_mu, eta_prime, epsilon2, MarginalAxis::Action)
}

/// Hard state-marginal projection `diag(rho'/mu 1) mu`; the output marginal
/// equals `rho'` to floating point.
pub fn prox_hard_state(log_mu: &Mat, rho_prime: &[f64]) -> Result<Mat, ProxError> {
    prox_hard_axis(log_mu, rho_prime, MarginalAxis::State)
}

/// Hard action-marginal projection `mu diag(eta'/mu^T 1)`.
pub fn prox_hard_action(log_mu: &Mat, eta_prime: &[f64]) -> Result<Mat, ProxError> {
    prox_hard_axis(log_mu, eta_prime, MarginalAxis::Action)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyKind {
    /// Soft KL penalty with coefficient `epsilon`.
    KlPenalty { epsilon: f64 },
    /// Hard equality with the target.
    Hard,
}

/// One marginal constraint: a soft (KL) or hard penalty pinning the state
/// or action marginal to a target vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalPenalty {
    axis: MarginalAxis,
    kind: PenaltyKind,
    target: Vec<f64>,
    log_target: Vec<f64>,
}

impl MarginalPenalty {
    pub fn kl(axis: MarginalAxis, target: Vec<f64>, epsilon: f64) -> Result<Self, ProxError> {
        if !(epsilon > 0.0) {
            return Err(ProxError::BadCoefficient(epsilon));
        }
        if let Some(index) = target.iter().position(|&t| !(t > 0.0)) {
            return Err(ProxError::NonPositiveTarget { axis, index });
        }
        let log_target = target.iter().map(|&t| math::ln(t)).collect();
        Ok(Self { axis, kind: PenaltyKind::KlPenalty { epsilon }, target, log_target })
    }

    pub fn hard(axis: MarginalAxis, target: Vec<f64>) -> Result<Self, ProxError> {
        if let Some(index) = target.iter().position(|&t| t < 0.0) {
            return Err(ProxError::NegativeTarget { axis, index });
        }
        let log_target = target.iter().map(|&t| math::ln_or_neg_inf(t)).collect();
        Ok(Self { axis, kind: PenaltyKind::Hard, target, log_target })
    }

    pub fn axis(&self) -> MarginalAxis {
        self.axis
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn log_target(&self) -> &[f64] {
        &self.log_target
    }

    /// Apply this penalty's KL prox to a log-domain iterate.
    pub fn apply_log(&self, log_mu: &Mat) -> Result<Mat, ProxError> {
        match self.kind {
            PenaltyKind::KlPenalty { epsilon } => {
                prox_kl_axis(log_mu, &self.target, epsilon, self.axis)
            }
            PenaltyKind::Hard => prox_hard_axis(log_mu, &self.target, self.axis),
        }
    }

    /// Euclidean distance between the iterate's marginal and the target.
    pub fn residual_l2(&self, mu_linear: &Mat) -> f64 {
        let marginal = match self.axis {
            MarginalAxis::State => mu_linear.row_sums(),
            MarginalAxis::Action => mu_linear.col_sums(),
        };
        let sq: f64 = marginal
            .iter()
            .zip(&self.target)
            .map(|(&m, &t)| (m - t) * (m - t))
            .sum();
        math::sqrt(sq)
    }

    /// Sup-norm marginal violation.
    pub fn residual_inf(&self, mu_linear: &Mat) -> f64 {
        let marginal = match self.axis {
            MarginalAxis::State => mu_linear.row_sums(),
            MarginalAxis::Action => mu_linear.col_sums(),
        };
        marginal
            .iter()
            .zip(&self.target)
            .fold(0.0f64, |m, (&a, &t)| m.max(libm::fabs(a - t)))
    }
}
