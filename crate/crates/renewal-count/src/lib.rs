//! Count probabilities for renewal and modified renewal processes.
//!
//! A renewal process places events on the half-line with independent,
//! identically distributed inter-arrival times. This crate computes the
//! probability P_m(t) of seeing exactly m events by time t for arbitrary
//! inter-arrival survival distributions, by discretizing the convolution
//! integrals that link timing to counting:
//!
//! ```text
//! P_0(t) = S(t),            P_{m+1}(t) = integral of P_m(t - u) dF(u) over [0, t]
//! ```
//!
//! Three engines share that idea. [`all_probs`] builds the whole pmf in one
//! pass. [`depril_prob`] reaches a single m in O(N^2) time independent of m
//! through a power-of-convolution recursion, and [`chain_prob`] does the
//! same with O(log m) explicit convolutions. Discretization error decays
//! like a power of the step, so Richardson extrapolation over nested grids
//! ([`richardson`], [`engine`]) buys several extra digits for almost no
//! work. [`modified`] covers processes whose first inter-arrival differs
//! from the rest, [`simulate`] cross-checks any of it by Monte Carlo, and
//! [`fit`] estimates count models from data by maximum likelihood.
//!
//! ```
//! use renewal_count::{count_probabilities, DistributionSpec, Engine, ExtrapolationStage};
//!
//! let spec: DistributionSpec = "weibull(alpha=1.0, beta=1.0)".parse().unwrap();
//! let pmf = count_probabilities(&spec, 1.0, 4, 24, Engine::DePril, ExtrapolationStage::Stage2)
//!     .unwrap();
//! // A unit-rate Weibull with shape 1 is the unit-rate Poisson process.
//! assert!((pmf.prob(0) - (-1.0f64).exp()).abs() < 1e-8);
//! assert!((pmf.prob(1) - (-1.0f64).exp()).abs() < 1e-8);
//! ```

pub mod conv_direct;
pub mod depril;
pub mod dist;
pub mod engine;
mod error;
pub mod fit;
pub mod modified;
pub mod optim;
pub mod richardson;
pub mod simulate;
pub mod special;
#[cfg(test)]
pub(crate) mod testutil;

pub use conv_direct::{all_probs, censored_tail, ExtrapolationStage, ProbabilityVector};
pub use depril::{
    chain_convolution_count, chain_prob, depril_censored, depril_convolution, depril_prob,
    self_convolve_symmetric, ConvolutionWorkspace,
};
pub use dist::{
    BurrParams, DiscretizedGrid, DistributionSpec, GammaParams, GenGammaParams, WeibullParams,
};
pub use engine::{
    count_probabilities, depril_censored_extrapolated, depril_prob_extrapolated,
    extrapolation_report, order_study, reference_probs, Engine, OrderStudyRow,
};
pub use error::{Error, Result};
pub use fit::{
    fit, fit_with, gof_chisq, log_likelihood, lr_test, predict_pmf, Coefficient, CountData,
    Family, FitOptions, FitResult, GofCell, GofTest, LrTest, ModelSpec,
};
pub use modified::{
    modified_all_probs, modified_all_probs_extrapolated, modified_prob, ModifiedSpec,
};
pub use richardson::{
    aitken, estimate_order, richardson_step, Accelerated, ExtrapolationReport, OrderEstimate,
};
pub use simulate::{simulate_pmf, simulate_renewal_pmf, EmpiricalPmf};
