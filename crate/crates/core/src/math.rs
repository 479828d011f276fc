//! Scalar helpers shared across the crate: log-domain arithmetic and a
//! small dense linear solve.
//!
//! All transcendentals go through `libm` so the crate stays `no_std` and
//! results are identical regardless of the host's libm.

use alloc::vec;
use alloc::vec::Vec;

pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub(crate) fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// log(x) extended with log(0) = -inf, so exact zeros survive the round
/// trip through the log domain.
pub(crate) fn ln_or_neg_inf(x: f64) -> f64 {
    if x == 0.0 {
        f64::NEG_INFINITY
    } else {
        ln(x)
    }
}

/// Stable log(exp(a) + exp(b)); -inf operands behave as log(0).
pub fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a >= b {
        a + ln_1p(exp(b - a))
    } else {
        b + ln_1p(exp(a - b))
    }
}

/// Stable log of a sum of exponentials. Empty input and all -inf both give
/// -inf (the log of an empty/zero sum).
pub fn logsumexp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let mut max = f64::NEG_INFINITY;
    for &x in &xs {
        debug_assert!(!x.is_nan());
        if x > max {
            max = x;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for &x in &xs {
        sum += exp(x - max);
    }
    max + ln(sum)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, &x| {
        let a = libm::fabs(x);
        if a > m {
            a
        } else {
            m
        }
    })
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    sqrt(v.iter().map(|&x| x * x).sum())
}

/// Solve `a x = b` for a small dense row-major `n x n` system by Gaussian
/// elimination with partial pivoting. Returns `None` when a pivot is
/// numerically zero.
pub(crate) fn solve_dense(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let mut pivot = col;
        let mut best = libm::fabs(m[col * n + col]);
        for row in (col + 1)..n {
            let v = libm::fabs(m[row * n + col]);
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best < 1e-300 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            rhs.swap(col, pivot);
        }
        let diag = m[col * n + col];
        for row in (col + 1)..n {
            let factor = m[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                m[row * n + k] -= factor * m[col * n + k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in (row + 1)..n {
            acc -= m[row * n + k] * x[k];
        }
        x[row] = acc / m[row * n + row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logaddexp_handles_zero_mass() {
        assert_eq!(logaddexp(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert_eq!(logaddexp(f64::NEG_INFINITY, 1.5), 1.5);
    }

    #[test]
    fn logsumexp_matches_naive_at_moderate_scale() {
        let xs = [0.3, -1.2, 2.0, 0.0];
        let naive = ln(xs.iter().map(|&x| exp(x)).sum());
        assert!((logsumexp(xs) - naive).abs() < 1e-14);
    }

    #[test]
    fn logsumexp_survives_large_exponents() {
        // exp(800) overflows f64; the shifted form must not.
        let v = logsumexp([800.0, 799.0]);
        assert!((v - (800.0 + ln_1p(exp(-1.0)))).abs() < 1e-12);
    }

    #[test]
    fn solve_dense_inverts_small_system() {
        // [2 1; 1 3] x = [5; 10] => x = [1; 3]
        let a = [2.0, 1.0, 1.0, 3.0];
        let b = [5.0, 10.0];
        let x = solve_dense(&a, &b, 2).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn solve_dense_rejects_singular() {
        let a = [1.0, 2.0, 2.0, 4.0];
        let b = [1.0, 2.0];
        assert!(solve_dense(&a, &b, 2).is_none());
    }
}
