//! Modified (delayed) renewal processes: the first inter-arrival time has
//! its own distribution, later ones share another.
//!
//! The count-m mass is the first distribution's discretized mass convolved
//! with the (m - 1)-fold self-convolution of the rest distribution's mass,
//! integrated against the rest survival function. The half-step-per-variable
//! bookkeeping is unchanged: a sum of m variables (one first, m - 1 rest)
//! carries mass at (j + m/2) h, the final mass of even m sits exactly on t
//! with weight 1/2, and survival arguments shrink instead of masses moving.
//!
//! With first == rest everything must collapse to the ordinary renewal
//! answers; that reduction is the module's main invariant.

use crate::conv_direct::{ExtrapolationStage, ProbabilityVector};
use crate::depril::{integrate_against_survival, stable_power_into, truncated_convolve};
use crate::dist::DistributionSpec;
use crate::engine::SurvivalTable;
use crate::error::{Error, Result};
use crate::richardson;

/// A renewal process whose first waiting time is distributed differently
/// from the rest. `first == rest` reproduces the ordinary process.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModifiedSpec {
    pub first: DistributionSpec,
    pub rest: DistributionSpec,
}

impl ModifiedSpec {
    pub fn new(first: DistributionSpec, rest: DistributionSpec) -> Result<Self> {
        first.validate()?;
        rest.validate()?;
        Ok(Self { first, rest })
    }

    /// An ordinary renewal process expressed as a modified one.
    pub fn homogeneous(spec: DistributionSpec) -> Result<Self> {
        Self::new(spec, spec)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.first.validate()?;
        self.rest.validate()
    }

    /// Extrapolation exponents: the discretization error carries both
    /// distributions' local powers, so the smaller one drives the first
    /// stage; unknown powers fall back to the exponential-type ladder.
    fn scheme_exponents(&self) -> (f64, f64, f64) {
        match (self.first.effective_shape(), self.rest.effective_shape()) {
            (Some(a), Some(b)) => richardson::scheme_exponents_full(Some(a.min(b))),
            _ => richardson::scheme_exponents_full(None),
        }
    }
}

/// P(count = m) for counts 0..=m_max in one pass, reusing the first
/// distribution's mass and growing the convolution one rest-variable at a
/// time.
fn modified_vector_core(
    q_first: &[f64],
    q_rest: &[f64],
    s_first_t: f64,
    m_max: usize,
    surv_half_rest: &mut dyn FnMut(usize) -> f64,
) -> Vec<f64> {
    let n = q_first.len();
    let mut probs = Vec::with_capacity(m_max + 1);
    probs.push(s_first_t);
    if m_max == 0 {
        return probs;
    }
    let mut f = q_first.to_vec();
    probs.push(integrate_against_survival(&f, n, 1, surv_half_rest));
    for m in 2..=m_max {
        f = truncated_convolve(&f, q_rest);
        probs.push(integrate_against_survival(&f, n, m as u32, surv_half_rest));
    }
    probs
}

/// P(count = m) for a modified renewal process on an n_steps grid.
///
/// m = 0 is the first distribution's analytic survival; m >= 2 builds the
/// rest variables' mass by the De Pril recursion before folding in the
/// first variable.
pub fn modified_prob(mspec: &ModifiedSpec, t: f64, m: u32, n_steps: usize) -> Result<f64> {
    mspec.validate()?;
    if m == 0 {
        return mspec.first.survival(t);
    }
    let grid_first = mspec.first.discretize(t, n_steps.max(2))?;
    let n = grid_first.n_steps;
    let h = grid_first.h;
    let rest = mspec.rest;
    let mut surv = |k2: usize| rest.survival_value(k2 as f64 * h * 0.5);
    if m == 1 {
        return Ok(integrate_against_survival(
            &grid_first.increments,
            n,
            1,
            &mut surv,
        ));
    }
    let grid_rest = rest.discretize(t, n_steps.max(2))?;
    let mut f_rest = Vec::new();
    stable_power_into(&grid_rest.increments, m - 1, &mut f_rest)?;
    let combined = truncated_convolve(&grid_first.increments, &f_rest);
    Ok(integrate_against_survival(&combined, n, m, &mut surv))
}

/// All counts 0..=m_max on one grid, sharing the discretization across m.
pub fn modified_all_probs(
    mspec: &ModifiedSpec,
    t: f64,
    m_max: usize,
    n_steps: usize,
) -> Result<ProbabilityVector> {
    mspec.validate()?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("horizon must be positive, got {t}")));
    }
    if n_steps < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 grid steps, got {n_steps}"
        )));
    }
    let grid_first = mspec.first.discretize(t, n_steps)?;
    let grid_rest = mspec.rest.discretize(t, n_steps)?;
    let rest = mspec.rest;
    let h = grid_first.h;
    let mut surv = |k2: usize| rest.survival_value(k2 as f64 * h * 0.5);
    let probs = modified_vector_core(
        &grid_first.increments,
        &grid_rest.increments,
        mspec.first.survival(t)?,
        m_max,
        &mut surv,
    );
    Ok(ProbabilityVector::new(
        probs,
        t,
        n_steps,
        ExtrapolationStage::Raw,
    ))
}

fn raw_level(
    mspec: &ModifiedSpec,
    table_first: &SurvivalTable,
    table_rest: &SurvivalTable,
    t: f64,
    m_max: usize,
    n_level: usize,
) -> Result<ProbabilityVector> {
    let q_first = table_first.increments(n_level);
    let q_rest = table_rest.increments(n_level);
    let mut surv = |k2: usize| table_rest.half_point(n_level, k2);
    let probs = modified_vector_core(
        &q_first,
        &q_rest,
        mspec.first.survival(t)?,
        m_max,
        &mut surv,
    );
    Ok(ProbabilityVector::new(
        probs,
        t,
        n_level,
        ExtrapolationStage::Raw,
    ))
}

/// All counts with Richardson correction, on grids doubled from base_n.
pub fn modified_all_probs_extrapolated(
    mspec: &ModifiedSpec,
    t: f64,
    m_max: usize,
    base_n: usize,
    stage: ExtrapolationStage,
) -> Result<ProbabilityVector> {
    mspec.validate()?;
    if base_n < 2 {
        return Err(Error::Domain(format!(
            "base grid must have at least 2 steps, got {base_n}"
        )));
    }
    let multipliers: &[usize] = match stage {
        ExtrapolationStage::Raw => &[1],
        ExtrapolationStage::Stage1 => &[1, 2],
        ExtrapolationStage::Stage2 => &[1, 2, 4],
        ExtrapolationStage::Stage3 => &[1, 2, 4, 8, 16],
    };
    let finest = base_n * multipliers.last().copied().unwrap_or(1);
    let table_first = SurvivalTable::build(&mspec.first, t, finest)?;
    let table_rest = SurvivalTable::build(&mspec.rest, t, finest)?;
    let levels: Vec<ProbabilityVector> = multipliers
        .iter()
        .map(|&k| raw_level(mspec, &table_first, &table_rest, t, m_max, base_n * k))
        .collect::<Result<_>>()?;
    let (gamma1, gamma2, gamma3) = mspec.scheme_exponents();
    match stage {
        ExtrapolationStage::Raw => Ok(levels.into_iter().next().expect("one level")),
        ExtrapolationStage::Stage1 => {
            levels[0].map_with(&[&levels[1]], ExtrapolationStage::Stage1, |x| {
                richardson::richardson_step(x[0], x[1], gamma1)
            })
        }
        ExtrapolationStage::Stage2 => {
            richardson::two_stage(&levels[0], &levels[1], &levels[2], gamma1, gamma2)
        }
        ExtrapolationStage::Stage3 => {
            let refs: [&ProbabilityVector; 5] = [
                &levels[0], &levels[1], &levels[2], &levels[3], &levels[4],
            ];
            richardson::third_stage(&refs, gamma1, gamma2, gamma3)
        }
    }
}
