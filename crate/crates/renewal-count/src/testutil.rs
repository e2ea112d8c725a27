//! Closed-form count distributions used as oracles by unit tests.
//!
//! Both are independent of the convolution engines: they go through the
//! special-function module only.

use crate::special::{ln_factorial, reg_lower_gamma};

/// Poisson pmf: the count distribution of a rate-lambda exponential renewal
/// process on [0, t].
pub(crate) fn poisson_pmf(lambda: f64, t: f64, m: usize) -> f64 {
    let lt = lambda * t;
    (-lt + m as f64 * lt.ln() - ln_factorial(m as u64)).exp()
}

/// Count probabilities for gamma inter-arrivals with shape k and rate r:
/// P_m(t) = I(m k, r t) - I((m+1) k, r t) with I the regularized lower
/// incomplete gamma function.
pub(crate) fn gamma_count_pmf(shape: f64, rate: f64, t: f64, m: usize) -> f64 {
    let x = rate * t;
    let lower = if m == 0 {
        1.0
    } else {
        reg_lower_gamma(m as f64 * shape, x).unwrap()
    };
    lower - reg_lower_gamma((m as f64 + 1.0) * shape, x).unwrap()
}
