//! Richardson extrapolation tuned to the discretization's error structure.
//!
//! The direct and De Pril discretizations converge with a leading error of
//! order h^(beta+1) (beta the survival distribution's local power near zero)
//! alongside a plain h^2 midpoint term. Two Richardson steps with exponents
//! gamma_1 = beta + 1 and gamma_2 = 2 remove both, leaving O(h^(beta+2));
//! an optional third step chips further. At beta = 1 (exponential-type) the
//! two targets merge, the h^3 coefficient vanishes with them, and what is
//! left is the even midpoint expansion, so the steps aim at (2, 4) instead.
//!
//! The step identity (2^d * fine - coarse) / (2^d - 1) also reduces the error
//! when the applied exponent merely overestimates the true one, so a wrong
//! guess costs accuracy but never correctness.

use crate::conv_direct::{ExtrapolationStage, ProbabilityVector};
use crate::error::Result;

/// One Richardson step: removes an error term of order h^delta from a pair
/// of estimates whose grids differ by a factor of two.
///
/// `fine` is the finer-grid value (step h), `coarse` the coarser (step 2h);
/// `delta` must be positive.
pub fn richardson_step(coarse: f64, fine: f64, delta: f64) -> f64 {
    debug_assert!(delta > 0.0, "extrapolation exponent must be positive");
    let w = delta.exp2();
    (w * fine - coarse) / (w - 1.0)
}

/// Outcome of the empirical convergence-order estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderEstimate {
    /// ln((S2-S1)/(S3-S2)) / ln 2 from three estimates at N, 2N, 4N.
    Order(f64),
    /// Successive differences are at rounding scale; the ratio is noise.
    Converged,
    /// The differences change sign, so no single power law fits.
    Indeterminate,
}

impl OrderEstimate {
    /// The estimated order, if one was resolvable.
    pub fn value(self) -> Option<f64> {
        match self {
            OrderEstimate::Order(g) => Some(g),
            _ => None,
        }
    }
}

/// Empirical convergence order from estimates S1, S2, S3 at grids N, 2N, 4N.
///
/// If the error behaves as a single power a*h^g, successive differences
/// shrink by 2^g and the returned order recovers g. Near convergence the
/// differences are dominated by rounding, so values with
/// |S3 - S2| < 1e3 * eps * |S3| report [`OrderEstimate::Converged`] instead
/// of a garbage exponent.
pub fn estimate_order(s1: f64, s2: f64, s3: f64) -> OrderEstimate {
    let d21 = s2 - s1;
    let d32 = s3 - s2;
    if d32.abs() < 1e3 * f64::EPSILON * s3.abs().max(f64::MIN_POSITIVE) {
        return OrderEstimate::Converged;
    }
    let ratio = d21 / d32;
    if !(ratio > 0.0) {
        return OrderEstimate::Indeterminate;
    }
    OrderEstimate::Order(ratio.ln() / std::f64::consts::LN_2)
}

/// Aitken acceleration of S1, with the degenerate case flagged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accelerated {
    pub value: f64,
    /// True when S1 + S3 - 2 S2 vanished and the finest estimate was
    /// returned unchanged.
    pub degenerate: bool,
}

/// Aitken's delta-squared acceleration, exact when the error decays
/// geometrically.
///
/// Uses the subtraction form S1 - (S1 - S2)^2 / (S1 + S3 - 2 S2), which
/// loses less to rounding than the ratio-of-products form. A vanishing
/// denominator means the sequence already converged (or is noise); the
/// finest estimate comes back with `degenerate` set.
pub fn aitken(s1: f64, s2: f64, s3: f64) -> Accelerated {
    let denom = (s1 - s2) + (s3 - s2);
    if denom == 0.0 {
        return Accelerated {
            value: s3,
            degenerate: true,
        };
    }
    let d = s1 - s2;
    Accelerated {
        value: s1 - d * d / denom,
        degenerate: false,
    }
}

/// Extrapolation exponents for a survival family: (beta + 1, 2) when the
/// family exposes a local power beta near zero, the even pair (2, 4)
/// otherwise.
///
/// The discretization error expands in the powers h^(beta+1), h^2, h^(beta+2),
/// h^4, ... where beta is the local exponent of the CDF at zero. At beta = 1
/// the first two targets coincide and, as the h^(beta+2) coefficient carries a
/// factor that vanishes with (beta - 1), the h^3 term drops out with them:
/// what is left after one h^2 step is a plain even expansion, so the second
/// step aims at h^4. (Aiming at 3 instead costs three orders of magnitude at
/// typical grids; this is easy to verify against the Poisson pmf.)
pub fn scheme_exponents(effective_shape: Option<f64>) -> (f64, f64) {
    let (g1, g2, _) = scheme_exponents_full(effective_shape);
    (g1, g2)
}

/// All three ladder exponents; the last one drives the optional third stage.
///
/// Generic power case: (beta + 1, 2, min(beta + 2, 4)) -- the cap reflects
/// that the interior h^4 term survives both earlier steps and overtakes
/// h^(beta+2) once beta > 2. Exponential-type case (beta = 1, or no shape
/// information): the expansion is even, so (2, 4, 6).
pub fn scheme_exponents_full(effective_shape: Option<f64>) -> (f64, f64, f64) {
    match effective_shape {
        Some(beta) if (beta - 1.0).abs() > 1e-9 => {
            (beta + 1.0, 2.0, (beta + 2.0).min(4.0))
        }
        _ => (2.0, 4.0, 6.0),
    }
}

/// Element-wise two-stage extrapolation of probability vectors computed at
/// N, 2N, 4N with explicit exponents.
pub fn two_stage(
    a1: &ProbabilityVector,
    a2: &ProbabilityVector,
    a3: &ProbabilityVector,
    gamma1: f64,
    gamma2: f64,
) -> Result<ProbabilityVector> {
    let b1 = a1.map_with(&[a2], ExtrapolationStage::Stage1, |v| {
        richardson_step(v[0], v[1], gamma1)
    })?;
    let b2 = a2.map_with(&[a3], ExtrapolationStage::Stage1, |v| {
        richardson_step(v[0], v[1], gamma1)
    })?;
    b1.map_with(&[&b2], ExtrapolationStage::Stage2, |v| {
        richardson_step(v[0], v[1], gamma2)
    })
}

/// Two-stage extrapolation with the Weibull-type exponents
/// gamma_1 = beta + 1, gamma_2 = 2 (even ladder at the beta = 1 confluence).
pub fn weibull_two_stage(
    a1: &ProbabilityVector,
    a2: &ProbabilityVector,
    a3: &ProbabilityVector,
    beta: f64,
) -> Result<ProbabilityVector> {
    let (gamma1, gamma2) = scheme_exponents(Some(beta));
    two_stage(a1, a2, a3, gamma1, gamma2)
}

/// Scalar two-stage extrapolation for single-probability engines.
pub fn two_stage_scalar(a1: f64, a2: f64, a3: f64, gamma1: f64, gamma2: f64) -> f64 {
    let b1 = richardson_step(a1, a2, gamma1);
    let b2 = richardson_step(a2, a3, gamma1);
    richardson_step(b1, b2, gamma2)
}

/// Third-stage extrapolation from five vectors at N, 2N, 4N, 8N, 16N.
///
/// The two-stage scheme runs on the overlapping triples to give C1, C2, C3,
/// then one further step with exponent `gamma3` (beta + 2 for the
/// Weibull-type scheme) is applied to the finest pair.
pub fn third_stage(
    a: &[&ProbabilityVector; 5],
    gamma1: f64,
    gamma2: f64,
    gamma3: f64,
) -> Result<ProbabilityVector> {
    let c2 = two_stage(a[1], a[2], a[3], gamma1, gamma2)?;
    let c3 = two_stage(a[2], a[3], a[4], gamma1, gamma2)?;
    c2.map_with(&[&c3], ExtrapolationStage::Stage3, |v| {
        richardson_step(v[0], v[1], gamma3)
    })
}

/// Everything the extrapolation saw and produced for one parameter set:
/// the raw vectors at N, 2N, 4N, both correction stages, the per-count
/// empirical orders of the raw sequence, and the exponents applied.
#[derive(Debug, Clone)]
pub struct ExtrapolationReport {
    pub raw: [ProbabilityVector; 3],
    pub stage1: [ProbabilityVector; 2],
    pub stage2: ProbabilityVector,
    pub estimated_orders: Vec<OrderEstimate>,
    pub exponents_used: (f64, f64),
}

impl ExtrapolationReport {
    /// Builds the report from three raw vectors at N, 2N, 4N.
    pub fn from_raw(
        a1: ProbabilityVector,
        a2: ProbabilityVector,
        a3: ProbabilityVector,
        gamma1: f64,
        gamma2: f64,
    ) -> Result<Self> {
        let b1 = a1.map_with(&[&a2], ExtrapolationStage::Stage1, |v| {
            richardson_step(v[0], v[1], gamma1)
        })?;
        let b2 = a2.map_with(&[&a3], ExtrapolationStage::Stage1, |v| {
            richardson_step(v[0], v[1], gamma1)
        })?;
        let stage2 = b1.map_with(&[&b2], ExtrapolationStage::Stage2, |v| {
            richardson_step(v[0], v[1], gamma2)
        })?;
        let estimated_orders = (0..a1.len())
            .map(|i| estimate_order(a1.raw()[i], a2.raw()[i], a3.raw()[i]))
            .collect();
        Ok(Self {
            raw: [a1, a2, a3],
            stage1: [b1, b2],
            stage2,
            estimated_orders,
            exponents_used: (gamma1, gamma2),
        })
    }
}
