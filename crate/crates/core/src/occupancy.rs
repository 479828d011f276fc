//! Occupancy measures, policies, and the algebra connecting them: the
//! policy/occupancy bijection, Bellman-flow residuals, expected return,
//! and the marginal/conditional KL split.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::matrix::Mat;
use crate::mdp::{Mdp, PROB_TOL};

#[derive(Debug, Clone, PartialEq)]
pub enum OccupancyError {
    /// The discounted flow system was numerically singular. Cannot occur
    /// for discount < 1; guarded anyway.
    SingularFlowSystem,
    /// `kl` terms are undefined: the reference measure vanishes somewhere
    /// the measure does not, at `(state, action)`.
    SupportViolation(usize, usize),
    NegativeEntry(usize, usize),
    DimensionMismatch,
}

impl fmt::Display for OccupancyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OccupancyError::SingularFlowSystem => write!(f, "discounted flow system is singular"),
            OccupancyError::SupportViolation(s, a) => {
                write!(f, "reference measure is zero at (s={s}, a={a}) where the measure is positive")
            }
            OccupancyError::NegativeEntry(s, a) => write!(f, "negative entry at (s={s}, a={a})"),
            OccupancyError::DimensionMismatch => write!(f, "dimension mismatch"),
        }
    }
}

impl core::error::Error for OccupancyError {}

/// A nonnegative `|S| x |A|` measure over state-action pairs, kept in both
/// linear and log form (`-inf` marks exact zeros). `normalized` records
/// whether total mass was 1 (within 1e-9) at construction; solver
/// intermediates legitimately carry arbitrary positive mass.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    mu: Mat,
    log_mu: Mat,
    normalized: bool,
}

impl OccupancyMeasure {
    pub fn from_linear(mu: Mat) -> Result<Self, OccupancyError> {
        for ((s, a), v) in mu.iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(OccupancyError::NegativeEntry(s, a));
            }
        }
        let log_mu = mu.map(math::ln_or_neg_inf);
        let normalized = libm::fabs(mu.sum() - 1.0) <= 1e-9;
        Ok(Self { mu, log_mu, normalized })
    }

    /// Build from log-domain entries (finite or `-inf`).
    pub fn from_log(log_mu: Mat) -> Self {
        debug_assert!(log_mu.as_slice().iter().all(|x| !x.is_nan()));
        let mu = log_mu.map(math::exp);
        let normalized = libm::fabs(mu.sum() - 1.0) <= 1e-9;
        Self { mu, log_mu, normalized }
    }

    pub fn n_states(&self) -> usize {
        self.mu.rows()
    }

    pub fn n_actions(&self) -> usize {
        self.mu.cols()
    }

    pub fn linear(&self) -> &Mat {
        &self.mu
    }

    pub fn log(&self) -> &Mat {
        &self.log_mu
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.mu.get(s, a)
    }

    pub fn mass(&self) -> f64 {
        self.mu.sum()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// State marginal `mu 1` (discounted visitation when normalized).
    pub fn state_marginal(&self) -> Vec<f64> {
        self.mu.row_sums()
    }

    /// Action marginal `mu^T 1` (global action execution frequency).
    pub fn action_marginal(&self) -> Vec<f64> {
        self.mu.col_sums()
    }
}

/// A row-stochastic `|S| x |A|` policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pi: Mat,
}

impl Policy {
    pub fn from_mat(pi: Mat) -> Result<Self, OccupancyError> {
        for ((s, a), v) in pi.iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(OccupancyError::NegativeEntry(s, a));
            }
        }
        for (s, sum) in pi.row_sums().into_iter().enumerate() {
            if libm::fabs(sum - 1.0) > PROB_TOL {
                return Err(OccupancyError::NegativeEntry(s, 0));
            }
        }
        Ok(Self { pi })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { pi: Mat::filled(n_states, n_actions, 1.0 / n_actions as f64) }
    }

    pub fn from_actions(n_states: usize, n_actions: usize, actions: &[usize]) -> Self {
        assert_eq!(actions.len(), n_states);
        let mut pi = Mat::zeros(n_states, n_actions);
        for (s, &a) in actions.iter().enumerate() {
            pi.set(s, a, 1.0);
        }
        Self { pi }
    }

    pub fn matrix(&self) -> &Mat {
        &self.pi
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.pi.get(s, a)
    }

    /// Greedy action with lowest-index tie-breaking.
    pub fn argmax_action(&self, s: usize) -> usize {
        let row = self.pi.row(s);
        let mut best = 0;
        for (a, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = a;
            }
        }
        best
    }
}

/// The linear characterization of the occupancy polytope: `R(mu)[s] =
/// sum_a mu(s,a) - (1-gamma) p0(s) - gamma sum_{s',a'} P(s|s',a') mu(s',a')`.
/// `R(mu) = 0` exactly when `mu` is a valid occupancy measure.
#[derive(Debug, Clone)]
pub struct FlowOperator {
    /// `|S| x (|S|·|A|)` matrix applying the flow map to vectorized mu.
    matrix: Mat,
    /// `(1-gamma) p0`.
    rhs: Vec<f64>,
}

impl FlowOperator {
    pub fn new(mdp: &Mdp) -> Self {
        let n = mdp.n_states();
        let na = mdp.n_actions();
        let gamma = mdp.discount();
        let mut matrix = Mat::zeros(n, n * na);
        for s2 in 0..n {
            for a2 in 0..na {
                let col = s2 * na + a2;
                let row = mdp.transition_row(s2, a2);
                for s in 0..n {
                    let indicator = if s == s2 { 1.0 } else { 0.0 };
                    matrix.set(s, col, indicator - gamma * row[s]);
                }
            }
        }
        let rhs = mdp
            .initial_dist()
            .iter()
            .map(|&p| (1.0 - gamma) * p)
            .collect();
        Self { matrix, rhs }
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn residual(&self, mu: &Mat) -> Vec<f64> {
        let n = self.matrix.rows();
        let flat = mu.as_slice();
        debug_assert_eq!(flat.len(), self.matrix.cols());
        (0..n)
            .map(|s| math::dot(self.matrix.row(s), flat) - self.rhs[s])
            .collect()
    }
}

/// The discounted occupancy measure of `pi`: solves the stationary flow
/// equation `rho = (1-gamma) p0 + gamma P_pi^T rho` by direct dense solve,
/// then sets `mu(s,a) = rho(s) pi(a|s)`.
pub fn occupancy_from_policy(mdp: &Mdp, pi: &Policy) -> Result<OccupancyMeasure, OccupancyError> {
    let n = mdp.n_states();
    let na = mdp.n_actions();
    assert_eq!(pi.matrix().rows(), n, "policy has wrong state count");
    assert_eq!(pi.matrix().cols(), na, "policy has wrong action count");
    let gamma = mdp.discount();
    // System matrix: (I - gamma P_pi^T)[s][s2] = I - gamma sum_a pi(a|s2) P(s|s2,a).
    let mut system = vec![0.0; n * n];
    for s in 0..n {
        for s2 in 0..n {
            let mut flow = 0.0;
            for a in 0..na {
                flow += pi.prob(s2, a) * mdp.transition_prob(s2, a, s);
            }
            let indicator = if s == s2 { 1.0 } else { 0.0 };
            system[s * n + s2] = indicator - gamma * flow;
        }
    }
    let rhs: Vec<f64> = mdp
        .initial_dist()
        .iter()
        .map(|&p| (1.0 - gamma) * p)
        .collect();
    let rho = math::solve_dense(&system, &rhs, n).ok_or(OccupancyError::SingularFlowSystem)?;
    let mut mu = Mat::zeros(n, na);
    for s in 0..n {
        for a in 0..na {
            // Tiny negative solver noise would violate the measure's
            // nonnegativity contract.
            mu.set(s, a, (rho[s] * pi.prob(s, a)).max(0.0));
        }
    }
    OccupancyMeasure::from_linear(mu)
}

/// Conditional policy of a measure: `pi(a|s) = mu(s,a) / sum_a mu(s,a)`.
/// States with zero mass get a uniform row, making the extraction total.
pub fn policy_from_occupancy(mu: &OccupancyMeasure) -> Policy {
    let n = mu.n_states();
    let na = mu.n_actions();
    let rho = mu.state_marginal();
    let mut pi = Mat::zeros(n, na);
    for s in 0..n {
        if rho[s] > 0.0 {
            for a in 0..na {
                pi.set(s, a, mu.get(s, a) / rho[s]);
            }
        } else {
            for a in 0..na {
                pi.set(s, a, 1.0 / na as f64);
            }
        }
    }
    Policy { pi }
}

/// `E_mu[r]`, the policy-optimization objective in occupancy coordinates.
pub fn expected_return(mu: &OccupancyMeasure, mdp: &Mdp) -> f64 {
    assert_eq!(mu.n_states(), mdp.n_states());
    assert_eq!(mu.n_actions(), mdp.n_actions());
    let mut total = 0.0;
    for s in 0..mu.n_states() {
        for a in 0..mu.n_actions() {
            total += mu.get(s, a) * mdp.reward(s, a);
        }
    }
    total
}

/// Bellman-flow residual of `mu`; zero (to tolerance) iff `mu` lies in the
/// occupancy polytope.
pub fn flow_residual(mu: &OccupancyMeasure, mdp: &Mdp) -> Vec<f64> {
    assert_eq!(mu.n_states(), mdp.n_states());
    assert_eq!(mu.n_actions(), mdp.n_actions());
    FlowOperator::new(mdp).residual(mu.linear())
}

/// Generalized KL between nonnegative vectors: `sum p log(p/q) - p + q`,
/// with the `p = 0` convention contributing `q`. Caller guarantees support.
pub(crate) fn kl_generalized(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            acc += pi * math::ln(pi / qi) - pi + qi;
        } else {
            acc += qi;
        }
    }
    acc
}

/// Splits `KL(mu | mu')` into the state-marginal shift and the expected
/// conditional-policy shift:
/// `KL(mu|mu') = KL(mu 1 | mu' 1) + E_{rho_mu}[ KL(pi | pi') ]`.
///
/// Errors if `mu'` vanishes anywhere `mu` is positive.
pub fn kl_decomposition(
    mu: &OccupancyMeasure,
    mu_prime: &OccupancyMeasure,
) -> Result<(f64, f64), OccupancyError> {
    if mu.n_states() != mu_prime.n_states() || mu.n_actions() != mu_prime.n_actions() {
        return Err(OccupancyError::DimensionMismatch);
    }
    for s in 0..mu.n_states() {
        for a in 0..mu.n_actions() {
            if mu.get(s, a) > 0.0 && mu_prime.get(s, a) == 0.0 {
                return Err(OccupancyError::SupportViolation(s, a));
            }
        }
    }
    let rho = mu.state_marginal();
    let rho_prime = mu_prime.state_marginal();
    let state_term = kl_generalized(&rho, &rho_prime);
    let mut conditional_term = 0.0;
    for s in 0..mu.n_states() {
        if rho[s] == 0.0 {
            continue;
        }
        // Per-state conditional KL; both conditionals are normalized, so
        // the -p+q terms cancel exactly, but keep the generalized form.
        let mut inner = 0.0;
        for a in 0..mu.n_actions() {
            let p = mu.get(s, a) / rho[s];
            let q = mu_prime.get(s, a) / rho_prime[s];
            if p > 0.0 {
                inner += p * math::ln(p / q) - p + q;
            } else {
                inner += q;
            }
        }
        conditional_term += rho[s] * inner;
    }
    Ok((state_term, conditional_term))
}

/// Joint generalized KL between two measures, used by tests and by the
/// projection-optimality checks.
pub fn kl_joint(mu: &OccupancyMeasure, mu_prime: &OccupancyMeasure) -> Result<f64, OccupancyError> {
    if mu.n_states() != mu_prime.n_states() || mu.n_actions() != mu_prime.n_actions() {
        return Err(OccupancyError::DimensionMismatch);
    }
    for s in 0..mu.n_states() {
        for a in 0..mu.n_actions() {
            if mu.get(s, a) > 0.0 && mu_prime.get(s, a) == 0.0 {
                return Err(OccupancyError::SupportViolation(s, a));
            }
        }
    }
    Ok(kl_generalized(mu.linear().as_slice(), mu_prime.linear().as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::inf_norm;

    fn singleton_mdp(gamma: f64) -> Mdp {
        Mdp::new(
            1,
            1,
            Mat::from_rows(1, 1, &[1.0]),
            Mat::from_rows(1, 1, &[0.7]),
            gamma,
            vec![1.0],
        )
        .unwrap()
    }

    fn two_by_two_mdp() -> Mdp {
        let transition = Mat::from_rows(
            4,
            2,
            &[
                0.9, 0.1, // s0,a0
                0.2, 0.8, // s0,a1
                0.5, 0.5, // s1,a0
                0.3, 0.7, // s1,a1
            ],
        );
        let reward = Mat::from_rows(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        Mdp::new(2, 2, transition, reward, 0.5, vec![0.7, 0.3]).unwrap()
    }

    #[test]
    fn singleton_occupancy_is_one() {
        let mdp = singleton_mdp(0.37);
        let mu = occupancy_from_policy(&mdp, &Policy::uniform(1, 1)).unwrap();
        assert!((mu.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(mu.is_normalized());
    }

    #[test]
    fn zero_discount_gives_initial_times_policy() {
        let transition = Mat::from_rows(
            4,
            2,
            &[0.5, 0.5, 1.0, 0.0, 0.0, 1.0, 0.25, 0.75],
        );
        let reward = Mat::zeros(2, 2);
        let mdp = Mdp::new(2, 2, transition, reward, 0.0, vec![0.6, 0.4]).unwrap();
        let pi = Policy::from_mat(Mat::from_rows(2, 2, &[0.3, 0.7, 0.9, 0.1])).unwrap();
        let mu = occupancy_from_policy(&mdp, &pi).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                let expected = mdp.initial_dist()[s] * pi.prob(s, a);
                assert!((mu.get(s, a) - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn occupancy_matches_truncated_power_series() {
        // Independent oracle: rho = (1-gamma) sum_t gamma^t (P_pi^T)^t p0,
        // truncated at t = 200 (gamma = 0.5 makes the tail ~1e-60).
        let mdp = two_by_two_mdp();
        let pi = Policy::from_actions(2, 2, &[0, 1]);
        let gamma = mdp.discount();
        // P_pi[s][s2] = P(s2 | s, pi(s)).
        let p_pi = [
            [mdp.transition_prob(0, 0, 0), mdp.transition_prob(0, 0, 1)],
            [mdp.transition_prob(1, 1, 0), mdp.transition_prob(1, 1, 1)],
        ];
        let mut dist = [mdp.initial_dist()[0], mdp.initial_dist()[1]];
        let mut rho = [0.0f64; 2];
        let mut scale = 1.0 - gamma;
        for _ in 0..=200 {
            rho[0] += scale * dist[0];
            rho[1] += scale * dist[1];
            dist = [
                dist[0] * p_pi[0][0] + dist[1] * p_pi[1][0],
                dist[0] * p_pi[0][1] + dist[1] * p_pi[1][1],
            ];
            scale *= gamma;
        }
        let mu = occupancy_from_policy(&mdp, &pi).unwrap();
        let marginal = mu.state_marginal();
        assert!((marginal[0] - rho[0]).abs() <= 1e-10);
        assert!((marginal[1] - rho[1]).abs() <= 1e-10);
        assert!(inf_norm(&flow_residual(&mu, &mdp)) <= 1e-9);
        assert!((mu.mass() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn uniform_measure_gives_uniform_policy() {
        let mu = OccupancyMeasure::from_linear(Mat::filled(3, 2, 1.0 / 6.0)).unwrap();
        let pi = policy_from_occupancy(&mu);
        for s in 0..3 {
            for a in 0..2 {
                assert!((pi.prob(s, a) - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_mass_row_extracts_uniform() {
        let mu = OccupancyMeasure::from_linear(Mat::from_rows(2, 2, &[0.5, 0.5, 0.0, 0.0])).unwrap();
        let pi = policy_from_occupancy(&mu);
        assert!((pi.prob(1, 0) - 0.5).abs() < 1e-15);
        assert!((pi.prob(1, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn round_trip_on_support() {
        let mdp = two_by_two_mdp();
        let pi = Policy::from_mat(Mat::from_rows(2, 2, &[0.25, 0.75, 0.6, 0.4])).unwrap();
        let mu = occupancy_from_policy(&mdp, &pi).unwrap();
        let rho = mu.state_marginal();
        let back = policy_from_occupancy(&mu);
        for s in 0..2 {
            assert!(rho[s] > 0.0);
            for a in 0..2 {
                assert!((back.prob(s, a) - pi.prob(s, a)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn expected_return_single_entry() {
        let mdp = singleton_mdp(0.9);
        let mu = OccupancyMeasure::from_linear(Mat::from_rows(1, 1, &[1.0])).unwrap();
        assert!((expected_return(&mu, &mdp) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn expected_return_zero_reward() {
        let transition = Mat::from_rows(4, 2, &[0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.3, 0.7]);
        let mdp = Mdp::new(2, 2, transition, Mat::zeros(2, 2), 0.5, vec![0.7, 0.3]).unwrap();
        let mu = OccupancyMeasure::from_linear(Mat::filled(2, 2, 0.25)).unwrap();
        assert_eq!(expected_return(&mu, &mdp), 0.0);
    }

    #[test]
    fn flow_residual_of_uniform_matches_hand_value() {
        // mu uniform (0.25 each) on the 2x2 MDP with p0 = (0.7, 0.3), gamma = 0.5.
        // Row sums are 0.5 each. Inflow to s: gamma * sum_{s',a'} P(s|s',a') * 0.25.
        // s=0: 0.5*0.25*(0.9+0.2+0.5+0.3) = 0.2375; R(0) = 0.5 - 0.35 - 0.2375 = -0.0875.
        // s=1: 0.5*0.25*(0.1+0.8+0.5+0.7) = 0.2625; R(1) = 0.5 - 0.15 - 0.2625 = 0.0875.
        let mdp = two_by_two_mdp();
        let mu = OccupancyMeasure::from_linear(Mat::filled(2, 2, 0.25)).unwrap();
        let r = flow_residual(&mu, &mdp);
        assert!((r[0] - (-0.0875)).abs() < 1e-12);
        assert!((r[1] - 0.0875).abs() < 1e-12);
    }

    #[test]
    fn flow_residual_is_affine_in_mu() {
        let mdp = two_by_two_mdp();
        let mu = OccupancyMeasure::from_linear(Mat::filled(2, 2, 0.25)).unwrap();
        let mu2 = OccupancyMeasure::from_linear(Mat::filled(2, 2, 0.5)).unwrap();
        let op = FlowOperator::new(&mdp);
        let r1 = op.residual(mu.linear());
        let r2 = op.residual(mu2.linear());
        // Doubling mu doubles the mu-dependent part: r2 + b = 2 (r1 + b).
        for s in 0..2 {
            let lin1 = r1[s] + op.rhs()[s];
            let lin2 = r2[s] + op.rhs()[s];
            assert!((lin2 - 2.0 * lin1).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_decomposition_identical_measures() {
        let mu = OccupancyMeasure::from_linear(Mat::from_rows(2, 2, &[0.1, 0.2, 0.3, 0.4])).unwrap();
        let (s, c) = kl_decomposition(&mu, &mu.clone()).unwrap();
        assert!(s.abs() < 1e-15);
        assert!(c.abs() < 1e-15);
    }

    #[test]
    fn kl_decomposition_same_marginal_hand_value() {
        // Both have state marginal (0.5, 0.5); conditionals differ only in s0.
        // Hand value: 0.5 * KL((0.8,0.2)|(0.5,0.5))
        //           = 0.5 * (0.8 ln 1.6 + 0.2 ln 0.4) = 0.096509533749307...
        let mu = OccupancyMeasure::from_linear(Mat::from_rows(2, 2, &[0.4, 0.1, 0.25, 0.25])).unwrap();
        let mu2 = OccupancyMeasure::from_linear(Mat::from_rows(2, 2, &[0.25, 0.25, 0.25, 0.25])).unwrap();
        let (s, c) = kl_decomposition(&mu, &mu2).unwrap();
        assert!(s.abs() < 1e-12);
        let expected = 0.5 * (0.8 * (1.6f64).ln() + 0.2 * (0.4f64).ln());
        assert!((c - expected).abs() < 1e-12);
    }

    #[test]
    fn kl_decomposition_detects_support_violation() {
        let mu = OccupancyMeasure::from_linear(Mat::from_rows(1, 2, &[0.5, 0.5])).unwrap();
        let mu2 = OccupancyMeasure::from_linear(Mat::from_rows(1, 2, &[1.0, 0.0])).unwrap();
        assert!(matches!(
            kl_decomposition(&mu, &mu2),
            Err(OccupancyError::SupportViolation(0, 1))
        ));
    }
}
