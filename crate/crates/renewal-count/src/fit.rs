//! Maximum-likelihood fitting of renewal count models to observed counts,
//! with or without covariates, plus the usual comparison machinery
//! (likelihood ratio test, Pearson goodness of fit, AIC/BIC).
//!
//! The observation window is fixed at t = 1 and the scale absorbs the rate:
//! each row's scale is alpha_i = exp(x_i' gamma). Probabilities come from
//! the De Pril engine with two-stage Richardson correction, so any of the
//! supported inter-arrival families can serve as the count model. Shape
//! parameters are optimized in log space to stay positive; the generalized
//! gamma's q and the hurdle shift are unconstrained.

use crate::conv_direct::{ExtrapolationStage, ProbabilityVector};
use crate::dist::{
    BurrParams, DistributionSpec, GammaParams, GenGammaParams, WeibullParams,
};
use crate::engine;
use crate::error::{Error, Result};
use crate::modified::{modified_all_probs_extrapolated, ModifiedSpec};
use crate::optim::{self, OptimOptions};
use crate::special;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

/// Observed counts with optional covariates and right-censoring flags.
///
/// A censored row means "at least `count` events were seen".
#[derive(Debug, Clone)]
pub struct CountData {
    counts: Vec<u32>,
    censored: Vec<bool>,
    covariate_names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl CountData {
    pub fn new(
        counts: Vec<u32>,
        censored: Option<Vec<bool>>,
        covariate_names: Vec<String>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = counts.len();
        if n == 0 {
            return Err(Error::Data("no observations".into()));
        }
        let censored = censored.unwrap_or_else(|| vec![false; n]);
        if censored.len() != n {
            return Err(Error::Data(format!(
                "censoring flags ({}) do not match row count ({n})",
                censored.len()
            )));
        }
        if covariate_names.len() != columns.len() {
            return Err(Error::Data(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                columns.len()
            )));
        }
        for (name, col) in covariate_names.iter().zip(columns.iter()) {
            if col.len() != n {
                return Err(Error::Data(format!(
                    "covariate '{name}' has {} values for {n} rows",
                    col.len()
                )));
            }
        }
        Ok(Self {
            counts,
            censored,
            covariate_names,
            columns,
        })
    }

    /// Uncensored counts without covariates.
    pub fn from_counts(counts: &[u32]) -> Result<Self> {
        Self::new(counts.to_vec(), None, Vec::new(), Vec::new())
    }

    /// Expands a frequency table (count, number of observations).
    pub fn from_frequencies(freqs: &[(u32, u64)]) -> Result<Self> {
        let mut counts = Vec::new();
        for &(count, times) in freqs {
            counts.extend(std::iter::repeat(count).take(times as usize));
        }
        Self::from_counts(&counts)
    }

    /// Reads CSV with a header row. `count_column` holds the counts; an
    /// optional `censored` column (0/1 or true/false) marks censored rows;
    /// every other column must be numeric and becomes a covariate.
    pub fn from_csv_reader<R: Read>(reader: R, count_column: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Data(format!("cannot read CSV header: {e}")))?
            .iter()
            .map(|h| h.to_string())
            .collect();
        let count_idx = headers
            .iter()
            .position(|h| h == count_column)
            .ok_or_else(|| {
                Error::Data(format!(
                    "count column '{count_column}' not found; header has: {}",
                    headers.join(", ")
                ))
            })?;
        let censored_idx = headers.iter().position(|h| h == "censored");
        let covariate_names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != count_idx && Some(i) != censored_idx)
            .map(|(_, h)| h.clone())
            .collect();
        let mut counts = Vec::new();
        let mut censored = Vec::new();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); covariate_names.len()];
        for (row_no, record) in rdr.records().enumerate() {
            let record =
                record.map_err(|e| Error::Data(format!("row {}: {e}", row_no + 2)))?;
            let raw = record.get(count_idx).unwrap_or("");
            let count: u32 = raw.parse().map_err(|_| {
                Error::Data(format!(
                    "row {}, column '{count_column}': expected a non-negative integer, got '{raw}'",
                    row_no + 2
                ))
            })?;
            counts.push(count);
            let is_censored = match censored_idx {
                None => false,
                Some(idx) => {
                    let raw = record.get(idx).unwrap_or("");
                    match raw {
                        "0" | "false" | "" => false,
                        "1" | "true" => true,
                        other => {
                            return Err(Error::Data(format!(
                                "row {}, column 'censored': expected 0/1, got '{other}'",
                                row_no + 2
                            )))
                        }
                    }
                }
            };
            censored.push(is_censored);
            let mut col_cursor = 0usize;
            for (i, field) in record.iter().enumerate() {
                if i == count_idx || Some(i) == censored_idx {
                    continue;
                }
                let value: f64 = field.parse().map_err(|_| {
                    Error::Data(format!(
                        "row {}, column '{}': expected a number, got '{field}'",
                        row_no + 2,
                        covariate_names[col_cursor]
                    ))
                })?;
                columns[col_cursor].push(value);
                col_cursor += 1;
            }
        }
        Self::new(counts, Some(censored), covariate_names, columns)
    }

    pub fn from_csv_path(path: &Path, count_column: &str) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
        Self::from_csv_reader(file, count_column)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn censored(&self) -> &[bool] {
        &self.censored
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.covariate_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn mean_count(&self) -> f64 {
        self.counts.iter().map(|&c| c as f64).sum::<f64>() / self.counts.len() as f64
    }

    pub fn any_censored(&self) -> bool {
        self.censored.iter().any(|&c| c)
    }
}

/// Count-model family, named for the inter-arrival law it discretizes.
/// Poisson is the Weibull family with its shape pinned to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Poisson,
    Weibull,
    Gamma,
    GenGamma,
    BurrXII,
}

impl Family {
    pub fn n_shape_params(self) -> usize {
        match self {
            Family::Poisson => 0,
            Family::Weibull | Family::Gamma => 1,
            Family::GenGamma | Family::BurrXII => 2,
        }
    }

    fn shape_names(self) -> &'static [&'static str] {
        match self {
            Family::Poisson => &[],
            Family::Weibull | Family::Gamma => &["shape"],
            Family::GenGamma => &["sigma", "q"],
            Family::BurrXII => &["shape", "nu"],
        }
    }

    /// Inter-arrival law with scale alpha (multiplying t) and the family's
    /// natural shape parameters.
    fn spec(self, alpha: f64, shapes: &[f64]) -> DistributionSpec {
        match self {
            Family::Poisson => DistributionSpec::Weibull(WeibullParams { alpha, beta: 1.0 }),
            Family::Weibull => DistributionSpec::Weibull(WeibullParams {
                alpha,
                beta: shapes[0],
            }),
            Family::Gamma => DistributionSpec::Gamma(GammaParams {
                shape: shapes[0],
                rate: alpha,
            }),
            Family::GenGamma => DistributionSpec::GenGamma(GenGammaParams {
                mu: -alpha.ln(),
                sigma: shapes[0],
                q: shapes[1],
            }),
            Family::BurrXII => DistributionSpec::BurrXII(BurrParams {
                alpha,
                beta: shapes[0],
                nu: shapes[1],
            }),
        }
    }

    /// Whether shape slot i is optimized in log space (everything positive
    /// is; the generalized gamma's q may be negative and stays linear).
    fn shape_is_logged(self, i: usize) -> bool {
        !(self == Family::GenGamma && i == 1)
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Family::Poisson => "poisson",
            Family::Weibull => "weibull",
            Family::Gamma => "gamma",
            Family::GenGamma => "gengamma",
            Family::BurrXII => "burrxii",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poisson" => Ok(Family::Poisson),
            "weibull" => Ok(Family::Weibull),
            "gamma" => Ok(Family::Gamma),
            "gengamma" => Ok(Family::GenGamma),
            "burr" | "burrxii" => Ok(Family::BurrXII),
            other => Err(Error::Parse {
                position: 0,
                message: format!(
                    "unknown family '{other}'; expected poisson, weibull, gamma, gengamma, or burrxii"
                ),
            }),
        }
    }
}

/// What to fit: a family, the covariates entering the scale (empty means
/// intercept-only), and optionally a hurdle shift that lets the first
/// event's scale differ from the rest by a factor exp(delta).
#[derive(Debug, Clone, Serialize)]
pub struct ModelSpec {
    pub family: Family,
    pub covariates: Vec<String>,
    pub hurdle: bool,
}

impl ModelSpec {
    pub fn intercept_only(family: Family) -> Self {
        Self {
            family,
            covariates: Vec::new(),
            hurdle: false,
        }
    }

    pub fn with_covariates<S: Into<String>>(family: Family, names: Vec<S>) -> Self {
        Self {
            family,
            covariates: names.into_iter().map(Into::into).collect(),
            hurdle: false,
        }
    }

    pub fn with_hurdle(mut self) -> Self {
        self.hurdle = true;
        self
    }

    /// Number of free parameters: intercept + covariates + shapes (+ hurdle).
    pub fn n_params(&self) -> usize {
        1 + self.covariates.len() + self.family.n_shape_params() + usize::from(self.hurdle)
    }

    fn n_gammas(&self) -> usize {
        1 + self.covariates.len()
    }

    fn resolve<'a>(&self, data: &'a CountData) -> Result<Vec<&'a [f64]>> {
        self.covariates
            .iter()
            .map(|name| {
                data.column(name).ok_or_else(|| {
                    Error::Data(format!(
                        "covariate '{name}' not present in data (has: {})",
                        data.covariate_names().join(", ")
                    ))
                })
            })
            .collect()
    }
}

/// Fitting knobs. `base_n` is the De Pril grid before doubling; the
/// default of 36 holds per-probability error near 1e-8 for smooth shapes.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FitOptions {
    pub base_n: usize,
    pub max_iters: usize,
    /// Relative log-likelihood tolerance for declaring convergence.
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            base_n: 36,
            max_iters: 600,
            tol: 1e-8,
        }
    }
}

fn quantize_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mag = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(digits - 1 - mag);
    (x * scale).round() / scale
}

/// Probability of one cache key: count m at scale alpha, possibly censored,
/// possibly with a hurdle-shifted first event.
fn key_probability(
    family: Family,
    shapes: &[f64],
    delta: Option<f64>,
    alpha: f64,
    m: u32,
    censored: bool,
    base_n: usize,
) -> Result<f64> {
    match delta {
        None => {
            let spec = family.spec(alpha, shapes);
            if censored {
                engine::depril_censored_extrapolated(&spec, 1.0, m, base_n)
            } else {
                engine::depril_prob_extrapolated(&spec, 1.0, m, base_n)
            }
        }
        Some(d) => {
            let rest = family.spec(alpha, shapes);
            let first = family.spec(alpha * d.exp(), shapes);
            let mspec = ModifiedSpec::new(first, rest)?;
            let pv = modified_all_probs_extrapolated(
                &mspec,
                1.0,
                m as usize,
                base_n,
                ExtrapolationStage::Stage2,
            )?;
            if censored {
                Ok(if m == 0 {
                    1.0
                } else {
                    (1.0 - pv.raw()[..m as usize].iter().sum::<f64>()).max(0.0)
                })
            } else {
                Ok(pv.raw()[m as usize])
            }
        }
    }
}

fn split_params<'a>(
    mspec: &ModelSpec,
    params: &'a [f64],
) -> Result<(&'a [f64], &'a [f64], Option<f64>)> {
    if params.len() != mspec.n_params() {
        return Err(Error::Mismatch(format!(
            "model needs {} parameters, got {}",
            mspec.n_params(),
            params.len()
        )));
    }
    let ng = mspec.n_gammas();
    let ns = mspec.family.n_shape_params();
    let gammas = &params[..ng];
    let shapes = &params[ng..ng + ns];
    let delta = mspec.hurdle.then(|| params[ng + ns]);
    Ok((gammas, shapes, delta))
}

fn log_likelihood_resolved(
    mspec: &ModelSpec,
    data: &CountData,
    design: &[&[f64]],
    params: &[f64],
    base_n: usize,
) -> Result<f64> {
    let (gammas, shapes, delta) = split_params(mspec, params)?;
    for (i, &s) in shapes.iter().enumerate() {
        if mspec.family.shape_is_logged(i) && !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter {
                name: mspec.family.shape_names()[i].into(),
                reason: format!("must be positive and finite, got {s}"),
            });
        }
    }
    // Group rows by (scale, count, censored); intercept-only data collapses
    // to one pmf evaluation per distinct count.
    let mut groups: HashMap<(u64, u32, bool), u64> = HashMap::new();
    for i in 0..data.len() {
        let mut xg = gammas[0];
        for (j, col) in design.iter().enumerate() {
            xg += gammas[j + 1] * col[i];
        }
        let alpha = xg.exp();
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Domain(format!(
                "scale overflowed at row {i}: exp({xg})"
            )));
        }
        let key = (
            quantize_sig(alpha, 12).to_bits(),
            data.counts[i],
            data.censored[i],
        );
        *groups.entry(key).or_insert(0) += 1;
    }
    let mut keys: Vec<((u64, u32, bool), u64)> = groups.into_iter().collect();
    // Sorted evaluation order keeps the sum bit-identical across runs and
    // thread counts.
    keys.sort_unstable_by_key(|&(k, _)| k);
    let terms: Vec<Result<f64>> = keys
        .par_iter()
        .map(|&((alpha_bits, m, censored), mult)| {
            let alpha = f64::from_bits(alpha_bits);
            let p = key_probability(
                mspec.family,
                shapes,
                delta,
                alpha,
                m,
                censored,
                base_n,
            )?;
            if !(p > 1e-300) {
                return Err(Error::Underflow { count: m, prob: p });
            }
            Ok(mult as f64 * p.ln())
        })
        .collect();
    let mut ll = 0.0;
    for term in terms {
        ll += term?;
    }
    Ok(ll)
}

/// Log-likelihood of the model at natural-space parameters
/// [intercept, coefficients.., shapes.., hurdle shift], observation window
/// t = 1.
pub fn log_likelihood(mspec: &ModelSpec, data: &CountData, params: &[f64]) -> Result<f64> {
    log_likelihood_with(mspec, data, params, FitOptions::default().base_n)
}

/// As [`log_likelihood`] with an explicit De Pril base grid.
pub fn log_likelihood_with(
    mspec: &ModelSpec,
    data: &CountData,
    params: &[f64],
    base_n: usize,
) -> Result<f64> {
    let design = mspec.resolve(data)?;
    log_likelihood_resolved(mspec, data, &design, params, base_n)
}

/// One reported parameter: its name, the estimate in reporting space, and
/// the standard error when the Hessian allowed one.
#[derive(Debug, Clone, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
}

/// A fitted model, its diagnostics, and everything needed to predict.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub family: Family,
    pub covariates: Vec<String>,
    pub hurdle: bool,
    pub coefficients: Vec<Coefficient>,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Natural-space parameters [gammas.., shapes.., hurdle shift].
    pub natural_params: Vec<f64>,
    pub base_n: usize,
}

impl FitResult {
    fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            family: self.family,
            covariates: self.covariates.clone(),
            hurdle: self.hurdle,
        }
    }

    /// JSON form of the full report.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit results serialize")
    }
}

fn free_to_natural(mspec: &ModelSpec, free: &[f64]) -> Vec<f64> {
    let ng = mspec.n_gammas();
    let ns = mspec.family.n_shape_params();
    let mut natural = free.to_vec();
    for i in 0..ns {
        if mspec.family.shape_is_logged(i) {
            natural[ng + i] = free[ng + i].exp();
        }
    }
    natural
}

fn natural_to_free(mspec: &ModelSpec, natural: &[f64]) -> Vec<f64> {
    let ng = mspec.n_gammas();
    let ns = mspec.family.n_shape_params();
    let mut free = natural.to_vec();
    for i in 0..ns {
        if mspec.family.shape_is_logged(i) {
            free[ng + i] = natural[ng + i].ln();
        }
    }
    free
}

/// Deterministic warm start: Poisson from the sample mean, richer families
/// from their nearest already-fitted relative.
fn warm_start(mspec: &ModelSpec, data: &CountData, opts: &FitOptions) -> Result<Vec<f64>> {
    let base_gammas = |ll_fit: Option<&FitResult>| -> Vec<f64> {
        match ll_fit {
            Some(f) => f.natural_params[..mspec.n_gammas()].to_vec(),
            None => {
                let mut g = vec![0.0; mspec.n_gammas()];
                g[0] = data.mean_count().max(0.05).ln();
                g
            }
        }
    };
    let mut natural: Vec<f64>;
    match mspec.family {
        Family::Poisson => {
            natural = base_gammas(None);
        }
        Family::Weibull | Family::Gamma => {
            let pre = fit_with(
                &ModelSpec {
                    family: Family::Poisson,
                    covariates: mspec.covariates.clone(),
                    hurdle: false,
                },
                data,
                opts,
            )?;
            natural = base_gammas(Some(&pre));
            natural.push(1.0);
        }
        Family::GenGamma => {
            let pre = fit_with(
                &ModelSpec {
                    family: Family::Weibull,
                    covariates: mspec.covariates.clone(),
                    hurdle: false,
                },
                data,
                opts,
            )?;
            let beta = pre.natural_params[pre.natural_params.len() - 1];
            natural = base_gammas(Some(&pre));
            // GenGamma with q = 1, sigma = 1/beta is exactly that Weibull.
            natural.push(1.0 / beta);
            natural.push(1.0);
        }
        Family::BurrXII => {
            let pre = fit_with(
                &ModelSpec {
                    family: Family::Weibull,
                    covariates: mspec.covariates.clone(),
                    hurdle: false,
                },
                data,
                opts,
            )?;
            let beta = pre.natural_params[pre.natural_params.len() - 1];
            natural = base_gammas(Some(&pre));
            natural.push(beta);
            natural.push(1.0);
        }
    }
    if mspec.hurdle {
        natural.push(0.0);
    }
    Ok(natural)
}

/// Maximum-likelihood fit with default options.
pub fn fit(mspec: &ModelSpec, data: &CountData) -> Result<FitResult> {
    fit_with(mspec, data, &FitOptions::default())
}

/// Maximum-likelihood fit: simplex plus quasi-Newton over the
/// reparametrized space, standard errors from the central-difference
/// Hessian in reporting space.
pub fn fit_with(mspec: &ModelSpec, data: &CountData, opts: &FitOptions) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::Data("cannot fit an empty dataset".into()));
    }
    let design = mspec.resolve(data)?;
    let start_natural = warm_start(mspec, data, opts)?;
    let start_free = natural_to_free(mspec, &start_natural);

    let cost = |free: &[f64]| -> f64 {
        let natural = free_to_natural(mspec, free);
        match log_likelihood_resolved(mspec, data, &design, &natural, opts.base_n) {
            Ok(ll) => -ll,
            Err(_) => f64::INFINITY,
        }
    };
    let optim_opts = OptimOptions {
        max_iters: opts.max_iters,
        f_tol: opts.tol,
        g_tol: 1e-4,
    };
    let outcome = optim::minimize(cost, &start_free, optim_opts);
    if !outcome.value.is_finite() {
        return Err(Error::NonConvergence {
            iterations: outcome.iterations,
        });
    }
    let natural = free_to_natural(mspec, &outcome.x);
    let ll = -outcome.value;
    let k = mspec.n_params();
    let n = data.len();

    let (names, reporting) = reporting_space(mspec, &natural);
    let std_errors = standard_errors(mspec, data, &design, &reporting, opts.base_n);
    let coefficients = names
        .into_iter()
        .zip(reporting.iter())
        .enumerate()
        .map(|(i, (name, &estimate))| Coefficient {
            name,
            estimate,
            std_error: std_errors.as_ref().map(|se| se[i]),
        })
        .collect();

    Ok(FitResult {
        family: mspec.family,
        covariates: mspec.covariates.clone(),
        hurdle: mspec.hurdle,
        coefficients,
        log_likelihood: ll,
        aic: -2.0 * ll + 2.0 * k as f64,
        bic: -2.0 * ll + k as f64 * (n as f64).ln(),
        n_params: k,
        n_obs: n,
        converged: outcome.converged,
        iterations: outcome.iterations,
        natural_params: natural,
        base_n: opts.base_n,
    })
}

/// Reporting space: intercept-only models report the scale exp(intercept)
/// (the way count-model tables are usually printed); regressions report the
/// coefficients themselves. Shapes and the hurdle shift stay natural.
fn reporting_space(mspec: &ModelSpec, natural: &[f64]) -> (Vec<String>, Vec<f64>) {
    let mut names = Vec::with_capacity(mspec.n_params());
    let mut values = Vec::with_capacity(mspec.n_params());
    if mspec.covariates.is_empty() {
        names.push("scale".to_string());
        values.push(natural[0].exp());
    } else {
        names.push("intercept".to_string());
        values.push(natural[0]);
        for (j, c) in mspec.covariates.iter().enumerate() {
            names.push(c.clone());
            values.push(natural[j + 1]);
        }
    }
    let ng = mspec.n_gammas();
    for (i, shape_name) in mspec.family.shape_names().iter().enumerate() {
        names.push((*shape_name).to_string());
        values.push(natural[ng + i]);
    }
    if mspec.hurdle {
        names.push("hurdle".to_string());
        values.push(natural[ng + mspec.family.n_shape_params()]);
    }
    (names, values)
}

fn reporting_to_natural(mspec: &ModelSpec, reporting: &[f64]) -> Option<Vec<f64>> {
    let mut natural = reporting.to_vec();
    if mspec.covariates.is_empty() {
        if !(reporting[0] > 0.0) {
            return None;
        }
        natural[0] = reporting[0].ln();
    }
    Some(natural)
}

fn standard_errors(
    mspec: &ModelSpec,
    data: &CountData,
    design: &[&[f64]],
    reporting: &[f64],
    base_n: usize,
) -> Option<Vec<f64>> {
    let cost = |rep: &[f64]| -> f64 {
        let Some(natural) = reporting_to_natural(mspec, rep) else {
            return f64::INFINITY;
        };
        match log_likelihood_resolved(mspec, data, design, &natural, base_n) {
            Ok(ll) => -ll,
            Err(_) => f64::INFINITY,
        }
    };
    let hessian = optim::central_hessian(cost, reporting);
    if hessian
        .iter()
        .any(|row| row.iter().any(|v| !v.is_finite()))
    {
        return None;
    }
    let cov = optim::cholesky_inverse(&hessian)?;
    Some((0..reporting.len()).map(|i| cov[i][i].sqrt()).collect())
}

/// Predicted pmf at one covariate vector (values in the fit's covariate
/// order; empty for intercept-only fits).
pub fn predict_pmf(
    fit: &FitResult,
    covariate_values: &[f64],
    m_max: usize,
) -> Result<ProbabilityVector> {
    if covariate_values.len() != fit.covariates.len() {
        return Err(Error::Mismatch(format!(
            "fit has {} covariates, got {} values",
            fit.covariates.len(),
            covariate_values.len()
        )));
    }
    let mspec = fit.model_spec();
    let (gammas, shapes, delta) = split_params(&mspec, &fit.natural_params)?;
    let mut xg = gammas[0];
    for (g, x) in gammas[1..].iter().zip(covariate_values.iter()) {
        xg += g * x;
    }
    let alpha = xg.exp();
    match delta {
        Some(d) => {
            let rest = fit.family.spec(alpha, shapes);
            let first = fit.family.spec(alpha * d.exp(), shapes);
            modified_all_probs_extrapolated(
                &ModifiedSpec::new(first, rest)?,
                1.0,
                m_max,
                fit.base_n,
                ExtrapolationStage::Stage2,
            )
        }
        None => engine::count_probabilities(
            &fit.family.spec(alpha, shapes),
            1.0,
            m_max,
            fit.base_n,
            engine::Engine::Direct,
            ExtrapolationStage::Stage2,
        ),
    }
}

/// Likelihood-ratio test result.
#[derive(Debug, Clone, Serialize)]
pub struct LrTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Likelihood-ratio test of a restricted model against a nesting full one.
pub fn lr_test(restricted: &FitResult, full: &FitResult) -> Result<LrTest> {
    if full.n_obs != restricted.n_obs {
        return Err(Error::NotNested(format!(
            "models were fitted to different row counts ({} vs {})",
            restricted.n_obs, full.n_obs
        )));
    }
    if full.n_params <= restricted.n_params {
        return Err(Error::NotNested(format!(
            "full model must have more parameters ({} vs {})",
            full.n_params, restricted.n_params
        )));
    }
    let df = full.n_params - restricted.n_params;
    let raw = 2.0 * (full.log_likelihood - restricted.log_likelihood);
    if raw < -1e-6 {
        return Err(Error::NotNested(format!(
            "full model has lower log-likelihood (difference {raw:.3e}); models are not nested"
        )));
    }
    let statistic = raw.max(0.0);
    let p_value = special::reg_upper_gamma(df as f64 / 2.0, statistic / 2.0)?;
    Ok(LrTest {
        statistic,
        df,
        p_value,
    })
}

/// One goodness-of-fit cell after merging.
#[derive(Debug, Clone, Serialize)]
pub struct GofCell {
    /// Smallest count in the cell; the last cell is open-ended.
    pub from_count: u32,
    pub observed: f64,
    pub expected: f64,
}

/// Pearson chi-squared test of a fitted model against the observed counts.
#[derive(Debug, Clone, Serialize)]
pub struct GofTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub cells: Vec<GofCell>,
}

/// Builds cells for counts 0..=max observed (last cell open-ended), merges
/// from the right until every expected count reaches 5, and scores.
fn bin_and_score(observed: &[f64], expected: &[f64], n_params: usize) -> Result<GofTest> {
    debug_assert_eq!(observed.len(), expected.len());
    let mut cells: Vec<GofCell> = observed
        .iter()
        .zip(expected.iter())
        .enumerate()
        .map(|(m, (&o, &e))| GofCell {
            from_count: m as u32,
            observed: o,
            expected: e,
        })
        .collect();
    while cells.len() > 1 && cells.last().expect("non-empty").expected < 5.0 {
        let last = cells.pop().expect("non-empty");
        let prev = cells.last_mut().expect("len > 1");
        prev.observed += last.observed;
        prev.expected += last.expected;
    }
    if cells.len() < n_params + 2 {
        return Err(Error::InsufficientCells {
            cells: cells.len(),
            params: n_params,
        });
    }
    let statistic: f64 = cells
        .iter()
        .map(|c| {
            let d = c.observed - c.expected;
            d * d / c.expected
        })
        .sum();
    let df = cells.len() - 1 - n_params;
    let p_value = special::reg_upper_gamma(df as f64 / 2.0, statistic / 2.0)?;
    Ok(GofTest {
        statistic,
        df,
        p_value,
        cells,
    })
}

/// Pearson goodness of fit: observed count frequencies against the fitted
/// model's expected frequencies, cells merged from the right until each
/// expects at least 5 observations; df = cells - 1 - fitted parameters.
pub fn gof_chisq(fit: &FitResult, data: &CountData) -> Result<GofTest> {
    if data.any_censored() {
        return Err(Error::Data(
            "goodness of fit over censored rows is not defined here; drop them first".into(),
        ));
    }
    let mspec = fit.model_spec();
    let design = mspec.resolve(data)?;
    let (gammas, _, _) = split_params(&mspec, &fit.natural_params)?;
    let max_count = data.counts.iter().copied().max().unwrap_or(0) as usize;

    let mut observed = vec![0.0; max_count + 1];
    for &c in data.counts.iter() {
        observed[c as usize] += 1.0;
    }

    // Expected frequencies: group rows sharing a scale, one pmf per group.
    let mut groups: HashMap<u64, u64> = HashMap::new();
    for i in 0..data.len() {
        let mut xg = gammas[0];
        for (j, col) in design.iter().enumerate() {
            xg += gammas[j + 1] * col[i];
        }
        *groups
            .entry(quantize_sig(xg.exp(), 12).to_bits())
            .or_insert(0) += 1;
    }
    let mut keys: Vec<(u64, u64)> = groups.into_iter().collect();
    keys.sort_unstable_by_key(|&(k, _)| k);
    let pmfs: Vec<Result<Vec<f64>>> = keys
        .par_iter()
        .map(|&(bits, _)| {
            let alpha = f64::from_bits(bits);
            let mspec = fit.model_spec();
            let (_, shapes, delta) = split_params(&mspec, &fit.natural_params)?;
            let pv = match delta {
                Some(d) => modified_all_probs_extrapolated(
                    &ModifiedSpec::new(
                        fit.family.spec(alpha * d.exp(), shapes),
                        fit.family.spec(alpha, shapes),
                    )?,
                    1.0,
                    max_count,
                    fit.base_n,
                    ExtrapolationStage::Stage2,
                )?,
                None => engine::count_probabilities(
                    &fit.family.spec(alpha, shapes),
                    1.0,
                    max_count,
                    fit.base_n,
                    engine::Engine::Direct,
                    ExtrapolationStage::Stage2,
                )?,
            };
            Ok(pv.clamped())
        })
        .collect();
    let mut expected = vec![0.0; max_count + 1];
    for ((_, mult), pmf) in keys.iter().zip(pmfs) {
        let pmf = pmf?;
        for (slot, p) in expected.iter_mut().zip(pmf.iter()) {
            *slot += *mult as f64 * p;
        }
    }
    // The open-ended final cell absorbs the tail mass beyond max_count.
    let total_expected: f64 = expected.iter().sum();
    let tail = (data.len() as f64 - total_expected).max(0.0);
    if let Some(last) = expected.last_mut() {
        *last += tail;
    }
    bin_and_score(&observed, &expected, fit.n_params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{gamma_count_pmf, poisson_pmf};

    #[test]
    fn poisson_loglik_matches_closed_form() {
        let data = CountData::from_counts(&[1, 3]).unwrap();
        let mspec = ModelSpec::intercept_only(Family::Poisson);
        let ll = log_likelihood(&mspec, &data, &[2.0f64.ln()]).unwrap();
        let want = (2.0 * (-2.0f64).exp()).ln() + (8.0 * (-2.0f64).exp() / 6.0).ln();
        assert!((ll - want).abs() < 1e-6, "{ll} vs {want}");
    }

    #[test]
    fn gamma_loglik_matches_closed_form_oracle() {
        let counts = [0u32, 1, 1, 2, 3, 0, 4, 2, 1, 5];
        let data = CountData::from_counts(&counts).unwrap();
        let mspec = ModelSpec::intercept_only(Family::Gamma);
        let (alpha, shape) = (2.2f64, 1.4);
        let ll = log_likelihood(&mspec, &data, &[alpha.ln(), shape]).unwrap();
        let want: f64 = counts
            .iter()
            .map(|&c| gamma_count_pmf(shape, alpha, 1.0, c as usize).ln())
            .sum();
        assert!((ll - want).abs() < 1e-4, "{ll} vs {want}");
    }

    #[test]
    fn censored_rows_use_tail_mass() {
        let data = CountData::new(
            vec![2, 2],
            Some(vec![false, true]),
            Vec::new(),
            Vec::new(),
        )
        .unwrap();
        let mspec = ModelSpec::intercept_only(Family::Poisson);
        let lambda = 1.7f64;
        let ll = log_likelihood(&mspec, &data, &[lambda.ln()]).unwrap();
        let p2 = poisson_pmf(lambda, 1.0, 2);
        let p_ge_2 = 1.0 - poisson_pmf(lambda, 1.0, 0) - poisson_pmf(lambda, 1.0, 1);
        let want = p2.ln() + p_ge_2.ln();
        assert!((ll - want).abs() < 1e-6, "{ll} vs {want}");
    }

    #[test]
    fn csv_round_trip_with_covariates_and_censoring() {
        let csv = "count,age,censored,urban\n2,31.5,0,1\n0,22.0,1,0\n4,45.25,0,1\n";
        let data = CountData::from_csv_reader(csv.as_bytes(), "count").unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.counts(), &[2, 0, 4]);
        assert_eq!(data.censored(), &[false, true, false]);
        assert_eq!(data.covariate_names(), &["age", "urban"]);
        assert_eq!(data.column("age").unwrap(), &[31.5, 22.0, 45.25]);
        assert_eq!(data.column("urban").unwrap(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn csv_errors_carry_position() {
        let bad_count = "count,x\nfoo,1\n";
        let err = CountData::from_csv_reader(bad_count.as_bytes(), "count").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2"), "{msg}");
        let bad_cov = "count,x\n1,1\n2,oops\n";
        let err = CountData::from_csv_reader(bad_cov.as_bytes(), "count").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 3") && msg.contains('x'), "{msg}");
        let missing = "n,x\n1,2\n";
        assert!(CountData::from_csv_reader(missing.as_bytes(), "count").is_err());
    }

    #[test]
    fn poisson_fit_recovers_sample_mean() {
        let data = CountData::from_counts(&[1, 3]).unwrap();
        let fitted = fit(&ModelSpec::intercept_only(Family::Poisson), &data).unwrap();
        assert!(fitted.converged);
        let scale = fitted.coefficients[0].estimate;
        assert!((scale - 2.0).abs() < 1e-4, "scale = {scale}");
        assert!((fitted.aic - (-2.0 * fitted.log_likelihood + 2.0)).abs() < 1e-12);
        let want_bic = -2.0 * fitted.log_likelihood + (2.0f64).ln();
        assert!((fitted.bic - want_bic).abs() < 1e-12);
    }

    #[test]
    fn covariate_scaling_leaves_likelihood_invariant() {
        let counts = [1u32, 0, 2, 3, 1, 0, 2, 4];
        let x: Vec<f64> = vec![0.1, -0.4, 0.9, 1.3, 0.2, -0.8, 0.5, 1.1];
        let scaled: Vec<f64> = x.iter().map(|v| v * 10.0).collect();
        let data_a = CountData::new(
            counts.to_vec(),
            None,
            vec!["x".into()],
            vec![x],
        )
        .unwrap();
        let data_b = CountData::new(
            counts.to_vec(),
            None,
            vec!["x".into()],
            vec![scaled],
        )
        .unwrap();
        let mspec = ModelSpec::with_covariates(Family::Weibull, vec!["x"]);
        let ll_a = log_likelihood(&mspec, &data_a, &[0.3, 0.7, 1.2]).unwrap();
        let ll_b = log_likelihood(&mspec, &data_b, &[0.3, 0.07, 1.2]).unwrap();
        assert!((ll_a - ll_b).abs() < 1e-8, "{ll_a} vs {ll_b}");
    }

    #[test]
    fn hurdle_with_zero_shift_reduces_to_plain_model() {
        let counts = [0u32, 1, 2, 0, 3, 1, 1, 0];
        let data = CountData::from_counts(&counts).unwrap();
        let plain = ModelSpec::intercept_only(Family::Weibull);
        let hurdle = ModelSpec::intercept_only(Family::Weibull).with_hurdle();
        let ll_plain = log_likelihood(&plain, &data, &[0.4, 1.2]).unwrap();
        let ll_hurdle = log_likelihood(&hurdle, &data, &[0.4, 1.2, 0.0]).unwrap();
        assert!(
            (ll_plain - ll_hurdle).abs() < 1e-8,
            "{ll_plain} vs {ll_hurdle}"
        );
    }

    #[test]
    fn lr_test_arithmetic_and_nesting_checks() {
        let mut a = FitResult {
            family: Family::Poisson,
            covariates: vec![],
            hurdle: false,
            coefficients: vec![],
            log_likelihood: -100.0,
            aic: 202.0,
            bic: 202.0,
            n_params: 1,
            n_obs: 50,
            converged: true,
            iterations: 10,
            natural_params: vec![0.0],
            base_n: 36,
        };
        let mut b = a.clone();
        b.n_params = 2;
        b.log_likelihood = -95.0;
        let t = lr_test(&a, &b).unwrap();
        assert!((t.statistic - 10.0).abs() < 1e-12);
        assert_eq!(t.df, 1);
        assert!(t.p_value > 0.0 && t.p_value < 0.01);
        // Same size in both directions is not nested.
        assert!(lr_test(&b, &a).is_err());
        // Full model scoring worse than restricted breaks nesting too.
        a.log_likelihood = -90.0;
        assert!(lr_test(&a, &b).is_err());
        // Identical likelihoods give statistic 0, p = 1.
        b.log_likelihood = a.log_likelihood;
        let t = lr_test(&a, &b).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert!((t.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_fit_scores_zero() {
        let observed = [40.0, 30.0, 20.0, 10.0];
        let gof = bin_and_score(&observed, &observed, 1).unwrap();
        assert_eq!(gof.statistic, 0.0);
        assert_eq!(gof.df, 2);
        assert!((gof.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binning_merges_thin_tail_cells() {
        let observed = [50.0, 30.0, 15.0, 3.0, 1.0, 1.0];
        let expected = [48.0, 31.0, 16.0, 3.0, 1.5, 0.5];
        let gof = bin_and_score(&observed, &expected, 1).unwrap();
        // The last three cells merge into the m >= 3 cell.
        assert_eq!(gof.cells.len(), 4);
        let last = gof.cells.last().unwrap();
        assert_eq!(last.from_count, 3);
        assert!((last.observed - 5.0).abs() < 1e-12);
        assert!((last.expected - 5.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_cells_is_an_error() {
        let data = CountData::from_counts(&[1, 3]).unwrap();
        let fitted = fit(&ModelSpec::intercept_only(Family::Poisson), &data).unwrap();
        match gof_chisq(&fitted, &data) {
            Err(Error::InsufficientCells { .. }) => {}
            other => panic!("expected insufficient-cells error, got {other:?}"),
        }
    }

    #[test]
    fn quantization_caches_nearby_scales() {
        assert_eq!(
            quantize_sig(2.383749999999999, 12),
            quantize_sig(2.3837500000000004, 12)
        );
        assert_ne!(quantize_sig(2.38375, 12), quantize_sig(2.38376, 12));
    }

    #[test]
    fn family_round_trips_strings() {
        for name in ["poisson", "weibull", "gamma", "gengamma", "burrxii"] {
            let f: Family = name.parse().unwrap();
            assert_eq!(f.to_string(), name);
        }
        assert!("negbin".parse::<Family>().is_err());
    }

    #[test]
    fn predict_pmf_matches_poisson_at_fitted_scale() {
        let data = CountData::from_counts(&[2, 3, 2, 1, 4, 2, 3, 2]).unwrap();
        let fitted = fit(&ModelSpec::intercept_only(Family::Poisson), &data).unwrap();
        let scale = fitted.coefficients[0].estimate;
        let pv = predict_pmf(&fitted, &[], 6).unwrap();
        for m in 0..=6 {
            let want = poisson_pmf(scale, 1.0, m);
            assert!(
                (pv.raw()[m] - want).abs() < 1e-6,
                "m = {m}: {} vs {want}",
                pv.raw()[m]
            );
        }
    }

    #[test]
    fn underflow_is_reported_not_fabricated() {
        let data = CountData::from_counts(&[40]).unwrap();
        let mspec = ModelSpec::intercept_only(Family::Poisson);
        // 40 arrivals at scale e^-15: the grid's first-cell mass to the
        // 40th power is below the double floor.
        match log_likelihood(&mspec, &data, &[-15.0]) {
            Err(Error::Underflow { .. }) => {}
            other => panic!("expected underflow, got {other:?}"),
        }
    }
}
