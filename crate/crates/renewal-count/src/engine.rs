//! Engine selection, extrapolation driving, and survival-evaluation reuse.
//!
//! Extrapolation needs the same probabilities on grids N, 2N, 4N (and out to
//! 16N for the third stage). All grids are sub-lattices of the finest one,
//! so every survival evaluation any level needs lives on the half-step
//! lattice of the finest grid: one table of 2 * n_fine + 1 values serves
//! increments, midpoints, and the half-step arguments of the single-
//! probability engines at every level, and coarser grids cost nothing extra.

use crate::conv_direct::{self, ExtrapolationStage, ProbabilityVector};
use crate::depril;
use crate::dist::DistributionSpec;
use crate::error::{Error, Result};
use crate::richardson::{self, ExtrapolationReport, OrderEstimate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which convolution engine computes the probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// All counts up to m_max in one pass of repeated convolution.
    Direct,
    /// Each count separately by the De Pril recursion, O(N^2) per count.
    DePril,
    /// Each count separately along the binary decomposition of m.
    Chain,
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Engine::Direct => "direct",
            Engine::DePril => "depril",
            Engine::Chain => "chain",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct" => Ok(Engine::Direct),
            "depril" | "de-pril" => Ok(Engine::DePril),
            "chain" => Ok(Engine::Chain),
            other => Err(Error::Parse {
                position: 0,
                message: format!("unknown engine '{other}'; expected direct, depril, or chain"),
            }),
        }
    }
}

/// Survival values on the half-step lattice of the finest grid.
///
/// `values[i] = S(i * horizon / (2 * n_fine))`. A level with n_level steps
/// (n_level dividing n_fine) reads its step ends at even multiples of the
/// level's half-stride and its midpoints at odd ones, so no level triggers
/// evaluations of its own.
pub(crate) struct SurvivalTable {
    values: Vec<f64>,
    n_fine: usize,
    horizon: f64,
}

impl SurvivalTable {
    pub(crate) fn build(spec: &DistributionSpec, horizon: f64, n_fine: usize) -> Result<Self> {
        spec.validate()?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_fine < 2 {
            return Err(Error::Domain(format!(
                "need at least 2 grid steps, got {n_fine}"
            )));
        }
        let denom = 2 * n_fine;
        let values = (0..=denom)
            .map(|i| spec.survival_value(horizon * i as f64 / denom as f64))
            .collect();
        Ok(Self {
            values,
            n_fine,
            horizon,
        })
    }

    /// Number of survival evaluations the table holds.
    #[cfg(test)]
    pub(crate) fn evaluation_count(&self) -> usize {
        self.values.len()
    }

    pub(crate) fn half_stride(&self, n_level: usize) -> usize {
        debug_assert!(n_level >= 1 && self.n_fine % n_level == 0);
        self.n_fine / n_level
    }

    /// S(horizon), from the exact endpoint evaluation.
    pub(crate) fn s_end(&self) -> f64 {
        *self.values.last().expect("table is never empty")
    }

    /// CDF increments q_k = F(k h) - F((k-1) h) for a level.
    pub(crate) fn increments(&self, n_level: usize) -> Vec<f64> {
        let step = 2 * self.half_stride(n_level);
        (1..=n_level)
            .map(|k| (self.values[(k - 1) * step] - self.values[k * step]).max(0.0))
            .collect()
    }

    /// Survival at the level's step midpoints (k + 1/2) h, k = 0..n_level-1.
    pub(crate) fn midpoints(&self, n_level: usize) -> Vec<f64> {
        let s = self.half_stride(n_level);
        (0..n_level).map(|k| self.values[(2 * k + 1) * s]).collect()
    }

    /// Survival at k2 half-steps of the level: S(k2 * h / 2).
    pub(crate) fn half_point(&self, n_level: usize, k2: usize) -> f64 {
        self.values[k2 * self.half_stride(n_level)]
    }
}

fn raw_vector(
    table: &SurvivalTable,
    engine: Engine,
    n_level: usize,
    m_max: usize,
) -> Result<ProbabilityVector> {
    let increments = table.increments(n_level);
    let probs = match engine {
        Engine::Direct => {
            let p0_mid = table.midpoints(n_level);
            conv_direct::all_probs_core(&p0_mid, &increments, table.s_end(), m_max)
        }
        Engine::DePril => {
            let mut scratch = Vec::new();
            let mut probs = Vec::with_capacity(m_max + 1);
            let mut surv = |k2: usize| table.half_point(n_level, k2);
            for m in 0..=m_max {
                probs.push(depril::depril_prob_core(
                    &increments,
                    m as u32,
                    &mut scratch,
                    &mut surv,
                )?);
            }
            probs
        }
        Engine::Chain => {
            let mut probs = Vec::with_capacity(m_max + 1);
            let mut surv = |k2: usize| table.half_point(n_level, k2);
            for m in 0..=m_max {
                probs.push(depril::chain_prob_core(&increments, m as u32, &mut surv)?.0);
            }
            probs
        }
    };
    Ok(ProbabilityVector::new(
        probs,
        table.horizon,
        n_level,
        ExtrapolationStage::Raw,
    ))
}

fn check_base(base_n: usize) -> Result<()> {
    if base_n < 2 {
        return Err(Error::Domain(format!(
            "base grid must have at least 2 steps, got {base_n}"
        )));
    }
    Ok(())
}

fn raw_levels(
    spec: &DistributionSpec,
    t: f64,
    m_max: usize,
    base_n: usize,
    engine: Engine,
    multipliers: &[usize],
) -> Result<Vec<ProbabilityVector>> {
    check_base(base_n)?;
    let finest = base_n * multipliers.last().copied().unwrap_or(1);
    let table = SurvivalTable::build(spec, t, finest)?;
    multipliers
        .par_iter()
        .map(|&k| raw_vector(&table, engine, base_n * k, m_max))
        .collect()
}

/// Count probabilities P_0(t) ... P_mmax(t) by the chosen engine, optionally
/// Richardson-corrected.
///
/// The grid has `base_n` steps; extrapolation stages recompute on doubled
/// grids (up to 4x for stage 2, 16x for stage 3) and combine the results
/// with exponents matched to the distribution's local power near zero.
pub fn count_probabilities(
    spec: &DistributionSpec,
    t: f64,
    m_max: usize,
    base_n: usize,
    engine: Engine,
    stage: ExtrapolationStage,
) -> Result<ProbabilityVector> {
    let (gamma1, gamma2, gamma3) = richardson::scheme_exponents_full(spec.effective_shape());
    match stage {
        ExtrapolationStage::Raw => {
            let mut v = raw_levels(spec, t, m_max, base_n, engine, &[1])?;
            Ok(v.pop().expect("one level requested"))
        }
        ExtrapolationStage::Stage1 => {
            let v = raw_levels(spec, t, m_max, base_n, engine, &[1, 2])?;
            v[0].map_with(&[&v[1]], ExtrapolationStage::Stage1, |x| {
                richardson::richardson_step(x[0], x[1], gamma1)
            })
        }
        ExtrapolationStage::Stage2 => {
            let v = raw_levels(spec, t, m_max, base_n, engine, &[1, 2, 4])?;
            richardson::two_stage(&v[0], &v[1], &v[2], gamma1, gamma2)
        }
        ExtrapolationStage::Stage3 => {
            let v = raw_levels(spec, t, m_max, base_n, engine, &[1, 2, 4, 8, 16])?;
            let refs: [&ProbabilityVector; 5] = [&v[0], &v[1], &v[2], &v[3], &v[4]];
            richardson::third_stage(&refs, gamma1, gamma2, gamma3)
        }
    }
}

/// Runs the three-level extrapolation and returns every intermediate, for
/// callers that want the error diagnostics alongside the corrected values.
pub fn extrapolation_report(
    spec: &DistributionSpec,
    t: f64,
    m_max: usize,
    base_n: usize,
    engine: Engine,
) -> Result<ExtrapolationReport> {
    let (gamma1, gamma2) = richardson::scheme_exponents(spec.effective_shape());
    let mut v = raw_levels(spec, t, m_max, base_n, engine, &[1, 2, 4])?;
    let a3 = v.pop().expect("three levels");
    let a2 = v.pop().expect("three levels");
    let a1 = v.pop().expect("three levels");
    ExtrapolationReport::from_raw(a1, a2, a3, gamma1, gamma2)
}

/// Stage-2 extrapolated probabilities on a 5000/10000/20000-step ladder:
/// the in-crate reference for error-order studies and accuracy assertions.
pub fn reference_probs(spec: &DistributionSpec, t: f64, m_max: usize) -> Result<ProbabilityVector> {
    count_probabilities(
        spec,
        t,
        m_max,
        5000,
        Engine::Direct,
        ExtrapolationStage::Stage2,
    )
}

/// One row of an error-order study: proportional errors against the
/// long-grid reference and empirically estimated convergence orders, for
/// one count at one Weibull shape.
#[derive(Debug, Clone, Serialize)]
pub struct OrderStudyRow {
    pub beta: f64,
    pub m: usize,
    pub raw_err: f64,
    pub stage1_err: f64,
    pub stage2_err: f64,
    pub gamma_raw: Option<f64>,
    pub gamma_stage1: Option<f64>,
    pub gamma_stage2: Option<f64>,
}

/// Measures raw and corrected convergence for Weibull(alpha = 1, beta) at
/// t = 1 on grids base_n .. 16 * base_n, against the long-grid reference.
///
/// Per count m the row reports proportional errors of the base-grid value
/// at each stage and the orders estimated from the stage's first three
/// values. Orders are `None` where the differences were noise-dominated or
/// sign-changing.
pub fn order_study(betas: &[f64], base_n: usize, m_max: usize) -> Result<Vec<OrderStudyRow>> {
    let mut rows = Vec::with_capacity(betas.len() * (m_max + 1));
    for &beta in betas {
        let spec = DistributionSpec::Weibull(crate::dist::WeibullParams { alpha: 1.0, beta });
        let a = raw_levels(&spec, 1.0, m_max, base_n, Engine::Direct, &[1, 2, 4, 8, 16])?;
        let (gamma1, gamma2) = richardson::scheme_exponents(spec.effective_shape());
        let step_pairs = |vs: &[ProbabilityVector], g: f64| -> Result<Vec<ProbabilityVector>> {
            vs.windows(2)
                .map(|w| {
                    w[0].map_with(&[&w[1]], ExtrapolationStage::Stage1, |x| {
                        richardson::richardson_step(x[0], x[1], g)
                    })
                })
                .collect()
        };
        let b = step_pairs(&a, gamma1)?;
        let c = step_pairs(&b, gamma2)?;
        let reference = reference_probs(&spec, 1.0, m_max)?;
        for m in 0..=m_max {
            let r = reference.raw()[m];
            let prop_err = |v: &ProbabilityVector| ((v.raw()[m] - r) / r).abs();
            let order_of = |vs: &[ProbabilityVector]| {
                richardson::estimate_order(vs[0].raw()[m], vs[1].raw()[m], vs[2].raw()[m]).value()
            };
            rows.push(OrderStudyRow {
                beta,
                m,
                raw_err: prop_err(&a[0]),
                stage1_err: prop_err(&b[0]),
                stage2_err: prop_err(&c[0]),
                gamma_raw: order_of(&a),
                gamma_stage1: order_of(&b),
                gamma_stage2: order_of(&c),
            });
        }
    }
    Ok(rows)
}

/// Single extrapolated probability for callers that need P_m at one m
/// without the full vector: three De Pril evaluations at N, 2N, 4N combined
/// by the two-stage scheme. Shares one survival table across the levels.
pub fn depril_prob_extrapolated(
    spec: &DistributionSpec,
    t: f64,
    m: u32,
    base_n: usize,
) -> Result<f64> {
    check_base(base_n)?;
    if m == 0 {
        return spec.survival(t);
    }
    let table = SurvivalTable::build(spec, t, 4 * base_n)?;
    let (gamma1, gamma2) = richardson::scheme_exponents(spec.effective_shape());
    let mut scratch = Vec::new();
    let mut level = |n_level: usize| -> Result<f64> {
        let increments = table.increments(n_level);
        let mut surv = |k2: usize| table.half_point(n_level, k2);
        depril::depril_prob_core(&increments, m, &mut scratch, &mut surv)
    };
    let a1 = level(base_n)?;
    let a2 = level(2 * base_n)?;
    let a3 = level(4 * base_n)?;
    Ok(richardson::two_stage_scalar(a1, a2, a3, gamma1, gamma2))
}

/// Extrapolated P(count >= m): the censored-observation companion of
/// [`depril_prob_extrapolated`], integrating the m-th arrival's mass rather
/// than differencing cumulative probabilities.
pub fn depril_censored_extrapolated(
    spec: &DistributionSpec,
    t: f64,
    m: u32,
    base_n: usize,
) -> Result<f64> {
    check_base(base_n)?;
    if m == 0 {
        return Ok(1.0);
    }
    let table = SurvivalTable::build(spec, t, 4 * base_n)?;
    let (gamma1, gamma2) = richardson::scheme_exponents(spec.effective_shape());
    let mut scratch = Vec::new();
    let mut level = |n_level: usize| -> Result<f64> {
        let increments = table.increments(n_level);
        depril::depril_censored_core(&increments, m, &mut scratch)
    };
    let a1 = level(base_n)?;
    let a2 = level(2 * base_n)?;
    let a3 = level(4 * base_n)?;
    Ok(richardson::two_stage_scalar(a1, a2, a3, gamma1, gamma2))
}

/// Per-count convergence orders of the raw sequence, exposed for diagnostics.
pub fn raw_order_estimates(
    spec: &DistributionSpec,
    t: f64,
    m_max: usize,
    base_n: usize,
    engine: Engine,
) -> Result<Vec<OrderEstimate>> {
    let a = raw_levels(spec, t, m_max, base_n, engine, &[1, 2, 4])?;
    Ok((0..=m_max)
        .map(|m| richardson::estimate_order(a[0].raw()[m], a[1].raw()[m], a[2].raw()[m]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{GammaParams, WeibullParams};
    use crate::testutil::{gamma_count_pmf, poisson_pmf};

    #[test]
    fn table_matches_direct_evaluation() {
        let spec = DistributionSpec::Weibull(WeibullParams {
            alpha: 1.3,
            beta: 0.8,
        });
        let table = SurvivalTable::build(&spec, 2.0, 12).unwrap();
        assert_eq!(table.evaluation_count(), 25);
        for n_level in [3usize, 6, 12] {
            let grid = spec.discretize(2.0, n_level).unwrap();
            let inc = table.increments(n_level);
            for k in 0..n_level {
                assert!(
                    (inc[k] - grid.increments[k]).abs() < 1e-15,
                    "level {n_level}, k = {k}"
                );
            }
            let mids = table.midpoints(n_level);
            let h = 2.0 / n_level as f64;
            for k in 0..n_level {
                let want = spec.survival_value((k as f64 + 0.5) * h);
                assert!(
                    (mids[k] - want).abs() < 1e-12,
                    "midpoint level {n_level}, k = {k}"
                );
            }
        }
        assert_eq!(table.s_end(), spec.survival_value(2.0));
    }

    #[test]
    fn levels_reuse_fine_grid_evaluations() {
        // One table serves N, 2N, 4N; it holds exactly the finest level's
        // half-step lattice, so the coarser levels are free.
        let spec = DistributionSpec::Exponential { rate: 1.0 };
        let base = 8usize;
        let table = SurvivalTable::build(&spec, 1.0, 4 * base).unwrap();
        let finest_alone = 2 * (4 * base) + 1;
        assert_eq!(table.evaluation_count(), finest_alone);
        let _ = table.increments(base);
        let _ = table.increments(2 * base);
        let _ = table.midpoints(base);
        assert_eq!(table.evaluation_count(), finest_alone);
    }

    #[test]
    fn all_engines_agree_raw_for_first_count() {
        let spec = DistributionSpec::Weibull(WeibullParams {
            alpha: 2.1,
            beta: 1.4,
        });
        let mut outs = Vec::new();
        for engine in [Engine::Direct, Engine::DePril, Engine::Chain] {
            outs.push(
                count_probabilities(&spec, 1.0, 1, 24, engine, ExtrapolationStage::Raw).unwrap(),
            );
        }
        for pv in &outs[1..] {
            assert!((pv.raw()[1] - outs[0].raw()[1]).abs() < 1e-14);
            assert_eq!(pv.raw()[0], outs[0].raw()[0]);
        }
    }

    #[test]
    fn stage2_direct_hits_poisson_limit() {
        let alpha = 2.38;
        let spec = DistributionSpec::Weibull(WeibullParams { alpha, beta: 1.0 });
        let pv = count_probabilities(&spec, 1.0, 8, 24, Engine::Direct, ExtrapolationStage::Stage2)
            .unwrap();
        for m in 0..=8 {
            let want = poisson_pmf(alpha, 1.0, m);
            let rel = ((pv.raw()[m] - want) / want).abs();
            assert!(rel < 1e-6, "m = {m}: rel err {rel:.2e}");
        }
    }

    #[test]
    fn stage2_depril_and_chain_hit_poisson_limit() {
        let alpha = 2.38;
        let spec = DistributionSpec::Weibull(WeibullParams { alpha, beta: 1.0 });
        for engine in [Engine::DePril, Engine::Chain] {
            let pv =
                count_probabilities(&spec, 1.0, 6, 24, engine, ExtrapolationStage::Stage2).unwrap();
            for m in 0..=6 {
                let want = poisson_pmf(alpha, 1.0, m);
                let rel = ((pv.raw()[m] - want) / want).abs();
                assert!(rel < 1e-6, "{engine}, m = {m}: rel err {rel:.2e}");
            }
        }
    }

    #[test]
    fn stage2_gamma_closed_form() {
        let spec = DistributionSpec::Gamma(GammaParams {
            shape: 1.5,
            rate: 2.0,
        });
        let pv = count_probabilities(&spec, 1.0, 5, 32, Engine::Direct, ExtrapolationStage::Stage2)
            .unwrap();
        for m in 0..=5 {
            let want = gamma_count_pmf(1.5, 2.0, 1.0, m);
            let rel = ((pv.raw()[m] - want) / want.max(1e-12)).abs();
            assert!(rel < 1e-6, "m = {m}: rel err {rel:.2e}");
        }
    }

    #[test]
    fn stage3_not_worse_than_stage2() {
        let spec = DistributionSpec::Weibull(WeibullParams {
            alpha: 1.0,
            beta: 1.2,
        });
        let reference = reference_probs(&spec, 1.0, 6).unwrap();
        let s2 = count_probabilities(&spec, 1.0, 6, 16, Engine::Direct, ExtrapolationStage::Stage2)
            .unwrap();
        let s3 = count_probabilities(&spec, 1.0, 6, 16, Engine::Direct, ExtrapolationStage::Stage3)
            .unwrap();
        for m in 0..=6 {
            let r = reference.raw()[m];
            let e2 = (s2.raw()[m] - r).abs();
            let e3 = (s3.raw()[m] - r).abs();
            assert!(
                e3 <= e2 * 1.5 + 1e-12,
                "m = {m}: stage3 {e3:.2e} vs stage2 {e2:.2e}"
            );
        }
    }

    #[test]
    fn extrapolation_reduces_error_for_low_shape() {
        // Even well below shape 1 the corrections must not hurt.
        let spec = DistributionSpec::Weibull(WeibullParams {
            alpha: 1.0,
            beta: 0.3,
        });
        let reference = reference_probs(&spec, 1.0, 8).unwrap();
        let report = extrapolation_report(&spec, 1.0, 8, 32, Engine::Direct).unwrap();
        let max_err = |pv: &ProbabilityVector| {
            (0..=8)
                .map(|m| {
                    let r = reference.raw()[m];
                    ((pv.raw()[m] - r) / r).abs()
                })
                .fold(0.0, f64::max)
        };
        assert!(max_err(&report.stage2) < max_err(&report.raw[0]));
    }

    #[test]
    fn report_exposes_exponents_and_orders() {
        let spec = DistributionSpec::Weibull(WeibullParams {
            alpha: 1.0,
            beta: 0.6,
        });
        let report = extrapolation_report(&spec, 1.0, 4, 32, Engine::Direct).unwrap();
        assert!((report.exponents_used.0 - 1.6).abs() < 1e-12);
        assert!((report.exponents_used.1 - 2.0).abs() < 1e-12);
        assert_eq!(report.estimated_orders.len(), 5);
    }

    #[test]
    fn engine_parses_and_prints() {
        for (s, e) in [
            ("direct", Engine::Direct),
            ("depril", Engine::DePril),
            ("DE-PRIL", Engine::DePril),
            ("chain", Engine::Chain),
        ] {
            assert_eq!(s.parse::<Engine>().unwrap(), e);
        }
        assert_eq!(Engine::DePril.to_string(), "depril");
        assert!("romberg".parse::<Engine>().is_err());
    }

    #[test]
    fn scalar_depril_extrapolation_matches_vector_driver() {
        let spec = DistributionSpec::Weibull(WeibullParams {
            alpha: 1.8,
            beta: 1.1,
        });
        let pv = count_probabilities(&spec, 1.0, 4, 16, Engine::DePril, ExtrapolationStage::Stage2)
            .unwrap();
        for m in 1..=4u32 {
            let single = depril_prob_extrapolated(&spec, 1.0, m, 16).unwrap();
            assert!(
                (single - pv.raw()[m as usize]).abs() < 1e-13,
                "m = {m}: {single} vs {}",
                pv.raw()[m as usize]
            );
        }
    }
}
