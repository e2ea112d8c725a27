//! Direct convolution: the whole pmf P_0(t) ... P_mmax(t) in one pass.
//!
//! The count recursion P_{m+1}(t) = integral of P_m(t-u) dF(u) is discretized
//! with the midpoint rule, taking each step's CDF increment as its mass. The
//! work array holds P_m at the midpoints (k+1/2)h for every m, and two views
//! of the same CDF keep everything on that lattice:
//!
//! * reads: P_m(t) = sum of [F((j+1)h) - F(jh)] * work[n-1-j], the plain
//!   step increments against midpoint values, which is the midpoint rule at
//!   the horizon itself;
//! * updates: the next work array convolves with masses of the half-shifted
//!   cells [(j-1/2)h, (j+1/2)h], each attached to the whole point jh, so
//!   midpoint values map to midpoint values. Those masses come from survival
//!   values already computed for the work array, costing no extra
//!   evaluations; the leading cell [0, h/2] multiplies the target's own
//!   slot, and treating its mass as sitting at zero costs O(h^(beta+1)), the
//!   same size as the midpoint error itself.

use crate::dist::DistributionSpec;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// How many rounds of Richardson extrapolation produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtrapolationStage {
    Raw,
    Stage1,
    Stage2,
    Stage3,
}

impl std::fmt::Display for ExtrapolationStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ExtrapolationStage::Raw => "raw",
            ExtrapolationStage::Stage1 => "stage1",
            ExtrapolationStage::Stage2 => "stage2",
            ExtrapolationStage::Stage3 => "stage3",
        };
        f.write_str(name)
    }
}

/// Count probabilities P_0(t) ... P_m(t) on a fixed horizon.
///
/// Values are stored as computed. Discretization and extrapolation can ring
/// a hair outside [0, 1]; [`ProbabilityVector::clamped`] is the user-facing
/// view.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    probs: Vec<f64>,
    horizon: f64,
    grid_steps: usize,
    stage: ExtrapolationStage,
}

impl ProbabilityVector {
    pub(crate) fn new(
        probs: Vec<f64>,
        horizon: f64,
        grid_steps: usize,
        stage: ExtrapolationStage,
    ) -> Self {
        Self {
            probs,
            horizon,
            grid_steps,
            stage,
        }
    }

    /// Raw values, exactly as the engine produced them.
    pub fn raw(&self) -> &[f64] {
        &self.probs
    }

    /// Values clamped into [0, 1] for reporting.
    pub fn clamped(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.clamp(0.0, 1.0)).collect()
    }

    /// P_m(t) clamped into [0, 1].
    pub fn prob(&self, m: usize) -> f64 {
        self.probs[m].clamp(0.0, 1.0)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Largest count in the vector.
    pub fn m_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Base grid steps the vector was computed from.
    pub fn grid_steps(&self) -> usize {
        self.grid_steps
    }

    pub fn stage(&self) -> ExtrapolationStage {
        self.stage
    }

    /// P(count > m_max), the mass this vector does not enumerate.
    pub fn censored_tail(&self) -> f64 {
        censored_tail(self)
    }

    pub(crate) fn map_with(
        &self,
        other: &[&ProbabilityVector],
        stage: ExtrapolationStage,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<ProbabilityVector> {
        let mut scratch = Vec::with_capacity(1 + other.len());
        for o in other {
            if o.len() != self.len() || o.horizon != self.horizon {
                return Err(Error::Mismatch(format!(
                    "probability vectors disagree on length or horizon: {} @ {} vs {} @ {}",
                    self.len(),
                    self.horizon,
                    o.len(),
                    o.horizon
                )));
            }
        }
        let probs = (0..self.len())
            .map(|i| {
                scratch.clear();
                scratch.push(self.probs[i]);
                scratch.extend(other.iter().map(|o| o.probs[i]));
                f(&scratch)
            })
            .collect();
        Ok(ProbabilityVector::new(
            probs,
            self.horizon,
            self.grid_steps,
            stage,
        ))
    }
}

/// P(count > m_max): one minus the enumerated mass, floored at zero.
pub fn censored_tail(pv: &ProbabilityVector) -> f64 {
    (1.0 - pv.raw().iter().sum::<f64>()).max(0.0)
}

/// The convolution pass over prepared inputs.
///
/// `p0_mid[k]` holds P_0 at the midpoint (k+1/2)h, `increments[j]` holds
/// F((j+1)h) - F(jh), and `s_horizon` is the analytic S(t) used for P_0(t).
pub(crate) fn all_probs_core(
    p0_mid: &[f64],
    increments: &[f64],
    s_horizon: f64,
    m_max: usize,
) -> Vec<f64> {
    let n = p0_mid.len();
    debug_assert_eq!(n, increments.len());
    let mut probs = Vec::with_capacity(m_max + 1);
    probs.push(s_horizon);
    if m_max == 0 {
        return probs;
    }
    // Masses of the half-shifted cells [(j-1/2)h, (j+1/2)h], attached to jh;
    // the j = 0 cell [0, h/2] stays put and multiplies the target slot.
    let shifted: Vec<f64> = (0..n)
        .map(|j| {
            if j == 0 {
                (1.0 - p0_mid[0]).max(0.0)
            } else {
                (p0_mid[j - 1] - p0_mid[j]).max(0.0)
            }
        })
        .collect();
    let mut work = p0_mid.to_vec();
    let read = |w: &[f64]| (1..=n).map(|j| increments[j - 1] * w[n - j]).sum::<f64>();
    probs.push(read(&work));
    for _ in 2..=m_max {
        // Descending k reads only pre-update slots; k's own slot is read
        // (the j = 0 term) before it is written.
        for k in (0..n).rev() {
            let mut acc = 0.0;
            for j in 0..=k {
                acc += shifted[j] * work[k - j];
            }
            work[k] = acc;
        }
        probs.push(read(&work));
    }
    probs
}

/// All count probabilities P_0(t) ... P_mmax(t) by direct convolution on an
/// N-step grid, without extrapolation.
///
/// P_0(t) is the analytic survival value, not a discretization. Needs
/// `n_steps >= 2` and a positive, finite horizon.
pub fn all_probs(
    spec: &DistributionSpec,
    t: f64,
    m_max: usize,
    n_steps: usize,
) -> Result<ProbabilityVector> {
    spec.validate()?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("horizon must be positive, got {t}")));
    }
    if n_steps < 2 {
        return Err(Error::Domain(format!(
            "direct convolution needs n_steps >= 2, got {n_steps}"
        )));
    }
    let h = t / n_steps as f64;
    let mid: Vec<f64> = (0..n_steps)
        .map(|k| spec.survival_value((k as f64 + 0.5) * h))
        .collect();
    let grid = spec.discretize(t, n_steps)?;
    let probs = all_probs_core(&mid, &grid.increments, spec.survival_value(t), m_max);
    Ok(ProbabilityVector::new(
        probs,
        t,
        n_steps,
        ExtrapolationStage::Raw,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{GammaParams, WeibullParams};
    use crate::testutil::{gamma_count_pmf, poisson_pmf};

    #[test]
    fn zero_count_is_analytic_survival() {
        let spec = DistributionSpec::Weibull(WeibullParams {
            alpha: 1.3,
            beta: 0.8,
        });
        let pv = all_probs(&spec, 1.7, 0, 16).unwrap();
        assert_eq!(pv.len(), 1);
        assert_eq!(pv.raw()[0], spec.survival(1.7).unwrap());
    }

    #[test]
    fn exponential_matches_poisson_on_a_fine_grid() {
        let lambda = 1.0;
        let spec = DistributionSpec::Exponential { rate: lambda };
        let pv = all_probs(&spec, 1.0, 8, 512).unwrap();
        for m in 0..=8 {
            let want = poisson_pmf(lambda, 1.0, m);
            let got = pv.raw()[m];
            // The raw grid resolves each probability to ~1e-7 absolute; the
            // relative view collapses only where the pmf itself is large.
            let abs = (got - want).abs();
            assert!(
                abs < 1e-7 || (abs / want) < 2e-6,
                "m = {m}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn weibull_beta_one_equals_exponential_engine_output() {
        let w = DistributionSpec::Weibull(WeibullParams {
            alpha: 2.38,
            beta: 1.0,
        });
        let e = DistributionSpec::Exponential { rate: 2.38 };
        let pw = all_probs(&w, 1.0, 6, 64).unwrap();
        let pe = all_probs(&e, 1.0, 6, 64).unwrap();
        for m in 0..=6 {
            assert!(
                (pw.raw()[m] - pe.raw()[m]).abs() < 1e-13,
                "m = {m}: {} vs {}",
                pw.raw()[m],
                pe.raw()[m]
            );
        }
    }

    #[test]
    fn gamma_closed_form_agrees_on_a_fine_grid() {
        let spec = DistributionSpec::Gamma(GammaParams {
            shape: 1.5,
            rate: 1.0,
        });
        let pv = all_probs(&spec, 1.0, 5, 1024).unwrap();
        // 40-digit closed-form references for m = 0..3.
        let reference = [
            0.572_406_704_470_879_834,
            0.347_291_898_457_725_969_99,
            0.071_769_003_700_207_730_525,
            0.007_938_208_553_604_772_487_2,
        ];
        for (m, want) in reference.iter().enumerate() {
            let got = pv.raw()[m];
            assert!(
                ((got - want) / want).abs() < 3e-5,
                "m = {m}: {got} vs {want}"
            );
            let oracle = gamma_count_pmf(1.5, 1.0, 1.0, m);
            assert!(((oracle - want) / want).abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_sum_to_at_most_one() {
        let spec = DistributionSpec::Weibull(WeibullParams {
            alpha: 2.0,
            beta: 1.4,
        });
        let pv = all_probs(&spec, 1.5, 20, 48).unwrap();
        let sum: f64 = pv.raw().iter().sum();
        assert!(sum <= 1.0 + 1e-8, "sum = {sum}");
        assert!(pv.raw().iter().all(|&p| p >= -1e-10));
        let tail = censored_tail(&pv);
        assert!(tail >= 0.0);
        assert!((sum + tail - 1.0).abs() < 1e-6 || tail == 0.0);
    }

    #[test]
    fn censored_tail_floors_at_zero() {
        let spec = DistributionSpec::Exponential { rate: 0.1 };
        // Tiny rate: almost all mass at m = 0, so the tail is ~0 and must
        // never be reported negative.
        let pv = all_probs(&spec, 0.5, 30, 32).unwrap();
        assert!(censored_tail(&pv) >= 0.0);
    }

    #[test]
    fn rejects_degenerate_grids() {
        let spec = DistributionSpec::Exponential { rate: 1.0 };
        assert!(all_probs(&spec, 1.0, 3, 1).is_err());
        assert!(all_probs(&spec, 0.0, 3, 16).is_err());
        assert!(all_probs(&spec, f64::NAN, 3, 16).is_err());
    }

    #[test]
    fn error_shrinks_like_h_squared_for_smooth_shapes() {
        let lambda = 2.38;
        let spec = DistributionSpec::Exponential { rate: lambda };
        let err_at = |n: usize| {
            let pv = all_probs(&spec, 1.0, 4, n).unwrap();
            (pv.raw()[2] - poisson_pmf(lambda, 1.0, 2)).abs()
        };
        let e16 = err_at(16);
        let e32 = err_at(32);
        let e64 = err_at(64);
        let order1 = (e16 / e32).log2();
        let order2 = (e32 / e64).log2();
        assert!(
            (order1 - 2.0).abs() < 0.2 && (order2 - 2.0).abs() < 0.2,
            "orders {order1}, {order2}"
        );
    }
}
