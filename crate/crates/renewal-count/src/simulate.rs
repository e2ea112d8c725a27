//! Monte-Carlo simulation of (modified) renewal processes, for checking the
//! convolution engines against something that shares none of their code.
//!
//! Randomness comes from a small counter-based generator specified here in
//! full so results are bit-identical across platforms and thread counts:
//! draw d, variable k reads counter d * 2^20 + k, every counter value is
//! hashed independently, and histogram merging is integer addition. The
//! only approximation is the usual O(n^-1/2) sampling error.

use crate::dist::DistributionSpec;
use crate::error::{Error, Result};
use crate::modified::ModifiedSpec;
use rayon::prelude::*;

/// Counter slots reserved per draw: events per draw are capped at 2^20 - 1,
/// far beyond anything a finite-mean inter-arrival law produces on [0, t].
const SLOTS_PER_DRAW: u64 = 1 << 20;

/// Stateless counter-based generator.
///
/// Output for counter c is the finalizer of splitmix64 applied to
/// seed + (c + 1) * 0x9E3779B97F4A7C15 (the 64-bit golden ratio); the
/// finalizer's shift/multiply constants are Stafford's mix 13. No state is
/// carried, so any counter can be evaluated on any thread in any order.
#[derive(Debug, Clone, Copy)]
pub struct CounterRng {
    seed: u64,
}

impl CounterRng {
    const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Raw 64-bit output for one counter value.
    pub fn bits(&self, counter: u64) -> u64 {
        let mut z = self
            .seed
            .wrapping_add(counter.wrapping_add(1).wrapping_mul(Self::GOLDEN_GAMMA));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform variate in the open interval (0, 1): the top 53 bits offset
    /// by half a grid cell, so neither endpoint can occur.
    pub fn uniform(&self, counter: u64) -> f64 {
        ((self.bits(counter) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}

/// Inverse-CDF sample: the waiting time whose CDF value is u.
///
/// Exponential, Weibull, and Burr invert analytically; gamma and
/// generalized gamma bisect the CDF to 1e-12.
pub fn sample_interarrival(spec: &DistributionSpec, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!(
            "uniform input must lie strictly inside (0, 1), got {u}"
        )));
    }
    spec.validate()?;
    let x = match *spec {
        DistributionSpec::Exponential { rate } => -f64::ln_1p(-u) / rate,
        DistributionSpec::Weibull(p) => (-f64::ln_1p(-u)).powf(1.0 / p.beta) / p.alpha,
        DistributionSpec::BurrXII(p) => {
            // 1 - u = (1 + (alpha x)^beta)^(-nu)
            let inner = (1.0 - u).powf(-1.0 / p.nu) - 1.0;
            inner.powf(1.0 / p.beta) / p.alpha
        }
        DistributionSpec::Gamma(_) | DistributionSpec::GenGamma(_) => invert_cdf(spec, u)?,
    };
    Ok(x)
}

/// Bisection on the CDF: bracket by doubling, then halve until the bracket
/// is below 1e-12 in relative width.
fn invert_cdf(spec: &DistributionSpec, u: f64) -> Result<f64> {
    let mut hi = 1.0f64;
    let mut grow = 0;
    while spec.cdf_value(hi) < u {
        hi *= 2.0;
        grow += 1;
        if grow > 600 {
            return Err(Error::NonConvergence { iterations: grow });
        }
    }
    let mut lo = 0.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-12 * (1.0 + hi) {
            break;
        }
        if spec.cdf_value(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Empirical distribution of N(t) over a fixed number of simulated paths.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPmf {
    counts: Vec<u64>,
    n_draws: u64,
}

impl EmpiricalPmf {
    /// Frequency of each count, indexed by m.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n_draws(&self) -> u64 {
        self.n_draws
    }

    /// Largest observed count.
    pub fn m_max(&self) -> usize {
        self.counts.len().saturating_sub(1)
    }

    /// Relative frequency of count m (zero beyond the observed range).
    pub fn probability(&self, m: usize) -> f64 {
        match self.counts.get(m) {
            Some(&c) => c as f64 / self.n_draws as f64,
            None => 0.0,
        }
    }

    /// Binomial standard error sqrt(p (1 - p) / n) of the cell estimate.
    pub fn std_error(&self, m: usize) -> f64 {
        let p = self.probability(m);
        (p * (1.0 - p) / self.n_draws as f64).sqrt()
    }
}

/// Simulates n_draws paths of a modified renewal process and histograms
/// N(t). Deterministic for a given seed, independent of thread count.
pub fn simulate_pmf(mspec: &ModifiedSpec, t: f64, n_draws: u64, seed: u64) -> Result<EmpiricalPmf> {
    mspec.validate()?;
    if n_draws == 0 {
        return Err(Error::Domain("need at least one draw".into()));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("horizon must be positive, got {t}")));
    }
    let rng = CounterRng::new(seed);
    const CHUNK: u64 = 1 << 14;
    let n_chunks = n_draws.div_ceil(CHUNK);
    let merged = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = (lo + CHUNK).min(n_draws);
            let mut hist: Vec<u64> = Vec::new();
            for draw in lo..hi {
                let m = simulate_one(mspec, t, &rng, draw).expect("specs validated above");
                if m >= hist.len() {
                    hist.resize(m + 1, 0);
                }
                hist[m] += 1;
            }
            hist
        })
        .reduce(Vec::new, |mut a, b| {
            if b.len() > a.len() {
                a.resize(b.len(), 0);
            }
            for (slot, v) in a.iter_mut().zip(b.iter()) {
                *slot += v;
            }
            a
        });
    Ok(EmpiricalPmf {
        counts: merged,
        n_draws,
    })
}

/// Ordinary renewal wrapper over [`simulate_pmf`].
pub fn simulate_renewal_pmf(
    spec: &DistributionSpec,
    t: f64,
    n_draws: u64,
    seed: u64,
) -> Result<EmpiricalPmf> {
    simulate_pmf(&ModifiedSpec::homogeneous(*spec)?, t, n_draws, seed)
}

fn simulate_one(mspec: &ModifiedSpec, t: f64, rng: &CounterRng, draw: u64) -> Result<usize> {
    let base = draw * SLOTS_PER_DRAW;
    let mut elapsed = sample_interarrival(&mspec.first, rng.uniform(base))?;
    let mut events = 0usize;
    while elapsed <= t && (events as u64) < SLOTS_PER_DRAW - 1 {
        events += 1;
        let u = rng.uniform(base + events as u64);
        elapsed += sample_interarrival(&mspec.rest, u)?;
    }
    Ok(events)
}
