//! Finite discounted MDPs and the hard-max value-iteration oracle.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::matrix::Mat;
use crate::occupancy::Policy;

/// Absolute tolerance for probability validation on construction. Inputs
/// are exact rationals in practice, so this is deliberately tight.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum MdpError {
    /// A transition row does not sum to one: `(state, action, sum)`.
    TransitionRowSum(usize, usize, f64),
    NegativeTransition(usize, usize, usize),
    InitialDistSum(f64),
    NegativeInitialProb(usize),
    /// Discount outside `[0, 1)`.
    BadDiscount(f64),
    DimensionMismatch,
    NonFinite,
}

impl fmt::Display for MdpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MdpError::TransitionRowSum(s, a, sum) => {
                write!(f, "transition row (s={s}, a={a}) sums to {sum}, expected 1")
            }
            MdpError::NegativeTransition(s, a, s2) => {
                write!(f, "negative transition probability at (s={s}, a={a}, s'={s2})")
            }
            MdpError::InitialDistSum(sum) => {
                write!(f, "initial distribution sums to {sum}, expected 1")
            }
            MdpError::NegativeInitialProb(s) => {
                write!(f, "negative initial probability at state {s}")
            }
            MdpError::BadDiscount(g) => write!(f, "discount {g} outside [0, 1)"),
            MdpError::DimensionMismatch => write!(f, "matrix dimensions do not match n_states/n_actions"),
            MdpError::NonFinite => write!(f, "non-finite entry in MDP data"),
        }
    }
}

impl core::error::Error for MdpError {}

/// A finite discounted MDP. The transition tensor is stored dense and
/// row-major as an `(|S|·|A|) x |S|` matrix; rewards are `|S| x |A|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    transition: Mat,
    reward: Mat,
    discount: f64,
    initial_dist: Vec<f64>,
    state_labels: Option<Vec<String>>,
    action_labels: Option<Vec<String>>,
}

impl Mdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Mat,
        reward: Mat,
        discount: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self, MdpError> {
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::DimensionMismatch);
        }
        if transition.rows() != n_states * n_actions || transition.cols() != n_states {
            return Err(MdpError::DimensionMismatch);
        }
        if reward.rows() != n_states || reward.cols() != n_actions {
            return Err(MdpError::DimensionMismatch);
        }
        if initial_dist.len() != n_states {
            return Err(MdpError::DimensionMismatch);
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(MdpError::BadDiscount(discount));
        }
        if transition.as_slice().iter().any(|x| !x.is_finite())
            || reward.as_slice().iter().any(|x| !x.is_finite())
            || initial_dist.iter().any(|x| !x.is_finite())
        {
            return Err(MdpError::NonFinite);
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = transition.row(s * n_actions + a);
                let mut sum = 0.0;
                for (s2, &p) in row.iter().enumerate() {
                    if p < 0.0 {
                        return Err(MdpError::NegativeTransition(s, a, s2));
                    }
                    sum += p;
                }
                if libm::fabs(sum - 1.0) > PROB_TOL {
                    return Err(MdpError::TransitionRowSum(s, a, sum));
                }
            }
        }
        let p0_sum: f64 = initial_dist.iter().sum();
        if let Some(s) = initial_dist.iter().position(|&p| p < 0.0) {
            return Err(MdpError::NegativeInitialProb(s));
        }
        if libm::fabs(p0_sum - 1.0) > PROB_TOL {
            return Err(MdpError::InitialDistSum(p0_sum));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            discount,
            initial_dist,
            state_labels: None,
            action_labels: None,
        })
    }

    pub fn with_labels(
        mut self,
        state_labels: Option<Vec<String>>,
        action_labels: Option<Vec<String>>,
    ) -> Self {
        self.state_labels = state_labels;
        self.action_labels = action_labels;
        self
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    /// P(s' | s, a).
    #[inline]
    pub fn transition_prob(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transition.get(s * self.n_actions + a, s2)
    }

    /// The distribution over next states for `(s, a)`.
    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        self.transition.row(s * self.n_actions + a)
    }

    pub fn transition_matrix(&self) -> &Mat {
        &self.transition
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward.get(s, a)
    }

    pub fn reward_matrix(&self) -> &Mat {
        &self.reward
    }

    pub fn state_labels(&self) -> Option<&[String]> {
        self.state_labels.as_deref()
    }

    pub fn action_labels(&self) -> Option<&[String]> {
        self.action_labels.as_deref()
    }
}

/// Result of hard-max value iteration: the fixed-point values and the
/// greedy deterministic policy (lowest action index wins ties).
#[derive(Debug, Clone)]
pub struct ValueIteration {
    pub values: Vec<f64>,
    pub policy: Policy,
}

/// Plain value iteration to a 1e-12 sup-norm fixed point. Used as the
/// independent optimality oracle in tests and for greedy-policy
/// comparisons against the entropic solvers.
pub fn value_iteration(mdp: &Mdp) -> ValueIteration {
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let gamma = mdp.discount();
    let mut values = vec![0.0; n];
    // gamma < 1 contracts; 1e-12 from zero init needs O(log(1/tol)/log(1/gamma)) passes.
    for _ in 0..5_000_000usize {
        let mut next = vec![f64::NEG_INFINITY; n];
        for s in 0..n {
            for a in 0..na {
                let q = mdp.reward(s, a)
                    + gamma * crate::math::dot(mdp.transition_row(s, a), &values);
                if q > next[s] {
                    next[s] = q;
                }
            }
        }
        let delta = values
            .iter()
            .zip(&next)
            .fold(0.0f64, |m, (&a, &b)| m.max(libm::fabs(a - b)));
        values = next;
        if delta <= 1e-12 {
            break;
        }
    }
    let mut actions = vec![0usize; n];
    for s in 0..n {
        let mut best = f64::NEG_INFINITY;
        for a in 0..na {
            let q = mdp.reward(s, a) + gamma * crate::math::dot(mdp.transition_row(s, a), &values);
            if q > best {
                best = q;
                actions[s] = a;
            }
        }
    }
    ValueIteration {
        values,
        policy: Policy::from_actions(n, na, &actions),
    }
}
