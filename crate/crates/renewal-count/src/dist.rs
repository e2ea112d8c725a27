//! Inter-arrival time distributions: survival functions, CDFs, and the
//! discretized increments the convolution engines consume.
//!
//! Every family is parametrized so that a scale parameter multiplies time
//! directly; that is what lets a regression link `alpha_i = exp(x_i' gamma)`
//! act on all families uniformly.

use crate::error::{Error, Result};
use crate::special::{normal_cdf, reg_lower_gamma};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Weibull with survival S(t) = exp(-(alpha t)^beta). `alpha` is a rate:
/// it multiplies time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    pub alpha: f64,
    pub beta: f64,
}

/// Gamma inter-arrival times with shape `shape` and rate `rate`
/// (mean shape/rate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

/// Burr XII with survival S(t) = (1 + (alpha t)^beta)^(-nu).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurrParams {
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
}

/// Generalized gamma in the Prentice (mu, sigma, q) parametrization, which
/// is continuous through q = 0 (the log-normal).
///
/// With z = (ln t - mu)/sigma, gamma = 1/q^2, and u = gamma * exp(q z):
/// S(t) = 1 - I(gamma, u) for q > 0, S(t) = 1 - Phi(z) for q = 0, and
/// S(t) = I(gamma, u) for q < 0. The signed q inside the exponential is what
/// keeps S(0) = 1 on both branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenGammaParams {
    pub mu: f64,
    pub sigma: f64,
    pub q: f64,
}

/// An inter-arrival time distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum DistributionSpec {
    Exponential { rate: f64 },
    Weibull(WeibullParams),
    Gamma(GammaParams),
    GenGamma(GenGammaParams),
    BurrXII(BurrParams),
}

fn require_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite and positive, got {value}"),
        })
    }
}

fn require_finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite, got {value}"),
        })
    }
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DistributionSpec::Exponential { rate } => require_positive("rate", rate),
            DistributionSpec::Weibull(WeibullParams { alpha, beta }) => {
                require_positive("alpha", alpha)?;
                require_positive("beta", beta)
            }
            DistributionSpec::Gamma(GammaParams { shape, rate }) => {
                require_positive("shape", shape)?;
                require_positive("rate", rate)
            }
            DistributionSpec::GenGamma(GenGammaParams { mu, sigma, q }) => {
                require_finite("mu", mu)?;
                require_positive("sigma", sigma)?;
                require_finite("q", q)
            }
            DistributionSpec::BurrXII(BurrParams { alpha, beta, nu }) => {
                require_positive("alpha", alpha)?;
                require_positive("beta", beta)?;
                require_positive("nu", nu)
            }
        }
    }

    /// Survival function S(t) = P(inter-arrival > t). Validates parameters.
    pub fn survival(&self, t: f64) -> Result<f64> {
        self.validate()?;
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("survival needs t >= 0, got {t}")));
        }
        Ok(self.survival_value(t))
    }

    /// CDF on the shared evaluation path: always 1 - survival, so the two
    /// never disagree by more than one rounding.
    pub fn cdf(&self, t: f64) -> Result<f64> {
        Ok(1.0 - self.survival(t)?)
    }

    /// Survival without revalidation; callers hold a validated spec.
    pub(crate) fn survival_value(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        match *self {
            DistributionSpec::Exponential { rate } => (-rate * t).exp(),
            DistributionSpec::Weibull(WeibullParams { alpha, beta }) => {
                if t == 0.0 {
                    return 1.0;
                }
                (-(alpha * t).powf(beta)).exp()
            }
            DistributionSpec::Gamma(GammaParams { shape, rate }) => {
                if t == 0.0 {
                    return 1.0;
                }
                1.0 - reg_lower_gamma(shape, rate * t)
                    .expect("validated gamma parameters keep the incomplete gamma in range")
            }
            DistributionSpec::GenGamma(GenGammaParams { mu, sigma, q }) => {
                if t == 0.0 {
                    return 1.0;
                }
                let z = (t.ln() - mu) / sigma;
                if q.abs() < 1e-8 {
                    return 1.0 - normal_cdf(z);
                }
                let gamma = 1.0 / (q * q);
                let u = gamma * (q * z).exp();
                let i = if u.is_infinite() {
                    1.0
                } else {
                    reg_lower_gamma(gamma, u)
                        .expect("validated generalized gamma keeps the incomplete gamma in range")
                };
                if q > 0.0 {
                    1.0 - i
                } else {
                    i
                }
            }
            DistributionSpec::BurrXII(BurrParams { alpha, beta, nu }) => {
                if t == 0.0 {
                    return 1.0;
                }
                let x = (alpha * t).powf(beta);
                (-nu * x.ln_1p()).exp()
            }
        }
    }

    pub(crate) fn cdf_value(&self, t: f64) -> f64 {
        1.0 - self.survival_value(t)
    }

    /// Probability mass increments of the CDF over a uniform grid:
    /// `increments[j] = F((j+1) h) - F(j h)` with `h = horizon / n_steps`.
    pub fn discretize(&self, horizon: f64, n_steps: usize) -> Result<DiscretizedGrid> {
        self.validate()?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!(
                "discretize needs a positive horizon, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::Domain("discretize needs n_steps >= 1".into()));
        }
        let h = horizon / n_steps as f64;
        let mut increments = Vec::with_capacity(n_steps);
        let mut prev = 1.0; // S(0)
        for j in 1..=n_steps {
            let s = self.survival_value(j as f64 * h);
            // Survival differences, not CDF differences: identical
            // algebraically, but no 1 - s cancellation in the far tail.
            increments.push((prev - s).max(0.0));
            prev = s;
        }
        Ok(DiscretizedGrid {
            h,
            n_steps,
            increments,
        })
    }

    /// Local power of the CDF near zero: F(t) ~ C t^shape as t -> 0.
    ///
    /// This drives the choice of extrapolation exponents. `None` means the
    /// CDF vanishes faster than any power (log-normal-like), where the
    /// exponential-type ladder applies.
    pub fn effective_shape(&self) -> Option<f64> {
        match *self {
            DistributionSpec::Exponential { .. } => Some(1.0),
            DistributionSpec::Weibull(WeibullParams { beta, .. }) => Some(beta),
            DistributionSpec::Gamma(GammaParams { shape, .. }) => Some(shape),
            DistributionSpec::BurrXII(BurrParams { beta, .. }) => Some(beta),
            DistributionSpec::GenGamma(GenGammaParams { sigma, q, .. }) => {
                if q > 1e-8 {
                    Some(1.0 / (q * sigma))
                } else {
                    None
                }
            }
        }
    }

    /// Canonical text form, the same shape `parse` accepts.
    pub fn text_form(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DistributionSpec::Exponential { rate } => write!(f, "exponential(rate={rate})"),
            DistributionSpec::Weibull(WeibullParams { alpha, beta }) => {
                write!(f, "weibull(alpha={alpha},beta={beta})")
            }
            DistributionSpec::Gamma(GammaParams { shape, rate }) => {
                write!(f, "gamma(shape={shape},rate={rate})")
            }
            DistributionSpec::GenGamma(GenGammaParams { mu, sigma, q }) => {
                write!(f, "gengamma(mu={mu},sigma={sigma},q={q})")
            }
            DistributionSpec::BurrXII(BurrParams { alpha, beta, nu }) => {
                write!(f, "burr(alpha={alpha},beta={beta},nu={nu})")
            }
        }
    }
}

impl FromStr for DistributionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_spec(s)
    }
}

/// Parse the text form `family(name=value,...)`, e.g.
/// `weibull(alpha=2.64,beta=1.12)`. Families and parameter names are
/// case-insensitive; whitespace around tokens is allowed.
fn parse_spec(input: &str) -> Result<DistributionSpec> {
    let err = |position: usize, message: &str| Error::Parse {
        position,
        message: message.to_string(),
    };

    let open = input
        .find('(')
        .ok_or_else(|| err(input.len(), "expected `(` after the family name"))?;
    let family = input[..open].trim().to_ascii_lowercase();
    let close = input
        .rfind(')')
        .ok_or_else(|| err(input.len(), "expected closing `)`"))?;
    if !input[close + 1..].trim().is_empty() {
        return Err(err(close + 1, "trailing characters after `)`"));
    }
    let body = &input[open + 1..close];

    let mut pairs: Vec<(String, f64, usize)> = Vec::new();
    let mut cursor = open + 1;
    for piece in body.split(',') {
        if piece.trim().is_empty() {
            return Err(err(cursor, "empty parameter"));
        }
        let eq = piece
            .find('=')
            .ok_or_else(|| err(cursor, "expected `name=value`"))?;
        let name = piece[..eq].trim().to_ascii_lowercase();
        let value_str = piece[eq + 1..].trim();
        let value: f64 = value_str
            .parse()
            .map_err(|_| err(cursor + eq + 1, "expected a number"))?;
        pairs.push((name, value, cursor));
        cursor += piece.len() + 1;
    }

    let mut take = |name: &str| -> Result<f64> {
        match pairs.iter().position(|(n, _, _)| n == name) {
            Some(i) => Ok(pairs.remove(i).1),
            None => Err(err(open, &format!("missing parameter `{name}`"))),
        }
    };

    let spec = match family.as_str() {
        "exponential" | "exp" => DistributionSpec::Exponential { rate: take("rate")? },
        "weibull" => DistributionSpec::Weibull(WeibullParams {
            alpha: take("alpha")?,
            beta: take("beta")?,
        }),
        "gamma" => DistributionSpec::Gamma(GammaParams {
            shape: take("shape")?,
            rate: take("rate")?,
        }),
        "gengamma" => DistributionSpec::GenGamma(GenGammaParams {
            mu: take("mu")?,
            sigma: take("sigma")?,
            q: take("q")?,
        }),
        "burr" | "burrxii" => DistributionSpec::BurrXII(BurrParams {
            alpha: take("alpha")?,
            beta: take("beta")?,
            nu: take("nu")?,
        }),
        other => {
            return Err(err(
                0,
                &format!(
                    "unknown family `{other}` (expected exponential, weibull, gamma, gengamma, or burr)"
                ),
            ))
        }
    };
    if let Some((name, _, pos)) = pairs.first() {
        return Err(err(*pos, &format!("unexpected parameter `{name}`")));
    }
    spec.validate()?;
    Ok(spec)
}

/// A distribution's CDF mass on a uniform grid over `[0, n_steps * h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedGrid {
    pub h: f64,
    pub n_steps: usize,
    /// `increments[j] = F((j+1) h) - F(j h)` for `j = 0..n_steps`.
    pub increments: Vec<f64>,
}

impl DiscretizedGrid {
    pub fn horizon(&self) -> f64 {
        self.h * self.n_steps as f64
    }

    /// Total mass on the grid, which telescopes to F(horizon).
    pub fn total_mass(&self) -> f64 {
        self.increments.iter().sum()
    }
}
