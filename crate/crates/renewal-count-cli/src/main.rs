//! Command-line front end for the renewal-count library.
//!
//! Five subcommands:
//!
//! * `prob` prints count probabilities P_m(t) for a renewal process (or a
//!   modified one when `--first-dist` is given) as CSV.
//! * `fit` fits a count model to a data CSV by maximum likelihood and prints
//!   a JSON report with coefficients, information criteria, and a Pearson
//!   goodness-of-fit table when one can be formed.
//! * `simulate` draws a Monte Carlo sample of the count distribution with an
//!   explicit seed and prints the empirical pmf as CSV.
//! * `bench` times the convolution engines and prints median-of-repetitions
//!   timings as CSV, data only; nothing here asserts absolute speeds.
//! * `order-study` measures discretization error against a 20000-step
//!   reference grid and prints per-count proportional errors and estimated
//!   convergence orders as CSV.
//!
//! Everything is deterministic given the flags (`simulate` insists on a
//! seed), and `--print-config` echoes the fully resolved flag set, defaults
//! included, to stderr as JSON so a run can be reproduced from its logs.
//!
//! Exit codes: 0 on success; 2 for usage errors (bad flags, unparseable
//! specs or data, out-of-domain inputs); 3 for numerical failures
//! (non-convergence, underflow, special-function breakdown).
//!
//! The environment variable `RENEWAL_COUNT_THREADS` caps internal
//! parallelism; 0 or unset picks the number of available cores.

use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use renewal_count::{
    chain_convolution_count, chain_prob, count_probabilities, depril_prob, fit_with, gof_chisq,
    modified_all_probs_extrapolated, order_study, predict_pmf, simulate_pmf, CountData,
    DistributionSpec, Engine, Error, ExtrapolationStage, Family, FitOptions, ModelSpec,
    ModifiedSpec, Result,
};

#[derive(Parser, Serialize)]
#[command(
    name = "renewal-count",
    version,
    about = "Count probabilities, fitting, and diagnostics for renewal processes"
)]
struct Cli {
    /// Echo the resolved configuration (all defaults filled in) to stderr as
    /// JSON before running.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Print count probabilities P_m(t) as CSV rows `m,probability`.
    Prob(ProbArgs),
    /// Fit a count model to a data CSV and print a JSON report.
    Fit(FitArgs),
    /// Simulate the count distribution and print the empirical pmf as CSV.
    Simulate(SimulateArgs),
    /// Time the convolution engines and print median timings as CSV.
    Bench(BenchArgs),
    /// Print discretization-error orders against a long reference grid.
    OrderStudy(OrderStudyArgs),
}

#[derive(clap::Args, Serialize)]
#[command(group = ArgGroup::new("which_counts").required(true).args(["m", "m_max"]))]
struct ProbArgs {
    /// Inter-arrival distribution, e.g. "weibull(alpha=1,beta=2)".
    #[arg(long)]
    dist: String,

    /// Distribution of the waiting time to the first event, when it differs
    /// from the rest; switches to the modified-renewal computation, which
    /// has a single engine.
    #[arg(long, conflicts_with = "engine")]
    first_dist: Option<String>,

    /// Observation horizon t.
    #[arg(long)]
    t: f64,

    /// Report the single count m.
    #[arg(long)]
    m: Option<u32>,

    /// Report every count from 0 through this value.
    #[arg(long)]
    m_max: Option<usize>,

    /// Convolution engine.
    #[arg(long, value_enum, default_value_t = EngineArg::Direct)]
    engine: EngineArg,

    /// Grid steps at the base discretization level.
    #[arg(long, default_value_t = 96)]
    n_steps: usize,

    /// Richardson extrapolation applied on top of the base grid.
    #[arg(long, value_enum, default_value_t = StageArg::Stage2)]
    extrapolate: StageArg,
}

#[derive(clap::Args, Serialize)]
struct FitArgs {
    /// Path to the data CSV; one row per observation unit.
    data: PathBuf,

    /// Inter-arrival family of the count model.
    #[arg(long, value_enum)]
    family: FamilyArg,

    /// Comma-separated covariate column names entering the scale
    /// log-linearly.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,

    /// Give the first waiting time its own multiplicative scale shift.
    #[arg(long)]
    hurdle: bool,

    /// Column holding the observed counts.
    #[arg(long, default_value = "count")]
    count_column: String,

    /// Grid steps for each likelihood evaluation.
    #[arg(long, default_value_t = 36)]
    base_n: usize,

    /// Optimizer iteration budget.
    #[arg(long, default_value_t = 600)]
    max_iters: usize,

    /// Also write an observed-versus-fitted frequency table (CSV columns
    /// count,observed,fitted) to this path; intercept-only models only.
    #[arg(long)]
    fitted_csv: Option<PathBuf>,
}

#[derive(clap::Args, Serialize)]
struct SimulateArgs {
    /// Inter-arrival distribution, e.g. "gamma(shape=1.5,rate=2)".
    #[arg(long)]
    dist: String,

    /// Distribution of the waiting time to the first event, when it differs
    /// from the rest.
    #[arg(long)]
    first_dist: Option<String>,

    /// Observation horizon t.
    #[arg(long)]
    t: f64,

    /// Number of Monte Carlo draws.
    #[arg(long, default_value_t = 100_000)]
    n_draws: u64,

    /// Generator seed; required so every run is reproducible.
    #[arg(long)]
    seed: u64,
}

#[derive(clap::Args, Serialize)]
struct BenchArgs {
    /// Engines to time, comma separated.
    #[arg(long, value_enum, value_delimiter = ',',
          default_values_t = vec![EngineArg::Direct, EngineArg::DePril, EngineArg::Chain])]
    engines: Vec<EngineArg>,

    /// Counts m to time, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![4, 16, 64])]
    m: Vec<u32>,

    /// Grid sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![48])]
    n_steps: Vec<usize>,

    /// Repetitions per cell; the median is reported.
    #[arg(long, default_value_t = 5)]
    reps: usize,

    /// Inter-arrival distribution being convolved.
    #[arg(long, default_value = "weibull(alpha=1,beta=1.5)")]
    dist: String,

    /// Observation horizon t.
    #[arg(long, default_value_t = 1.0)]
    t: f64,
}

#[derive(clap::Args, Serialize)]
struct OrderStudyArgs {
    /// Weibull shape values to study, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.6, 1.0, 1.2])]
    betas: Vec<f64>,

    /// Grid steps at the coarsest level; finer levels double up to 16x.
    #[arg(long, default_value_t = 100)]
    base_n: usize,

    /// Largest count to study.
    #[arg(long, default_value_t = 14)]
    m_max: usize,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum EngineArg {
    /// All counts up to m in one pass of repeated convolution.
    Direct,
    /// One count at a time by the m-fold convolution recursion.
    #[value(name = "depril")]
    DePril,
    /// One count at a time along the binary decomposition of m.
    Chain,
}

impl EngineArg {
    fn engine(self) -> Engine {
        match self {
            EngineArg::Direct => Engine::Direct,
            EngineArg::DePril => Engine::DePril,
            EngineArg::Chain => Engine::Chain,
        }
    }
}

impl std::fmt::Display for EngineArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.engine().fmt(f)
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum StageArg {
    /// Base grid only.
    None,
    /// Two Richardson steps over grids N, 2N, 4N.
    Stage2,
    /// Three Richardson steps over grids N, 2N, 4N, 8N.
    Stage3,
}

impl StageArg {
    fn stage(self) -> ExtrapolationStage {
        match self {
            StageArg::None => ExtrapolationStage::Raw,
            StageArg::Stage2 => ExtrapolationStage::Stage2,
            StageArg::Stage3 => ExtrapolationStage::Stage3,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FamilyArg {
    Poisson,
    Weibull,
    Gamma,
    #[value(name = "gengamma")]
    GenGamma,
    #[value(name = "burrxii")]
    BurrXII,
}

impl FamilyArg {
    fn family(self) -> Family {
        match self {
            FamilyArg::Poisson => Family::Poisson,
            FamilyArg::Weibull => Family::Weibull,
            FamilyArg::Gamma => Family::Gamma,
            FamilyArg::GenGamma => Family::GenGamma,
            FamilyArg::BurrXII => Family::BurrXII,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            // Bad inputs share the usage exit code with bad flags; only
            // genuinely numerical failures get their own.
            if e.is_usage() || matches!(e, Error::Domain(_)) {
                2
            } else {
                3
            }
        }
    };
    std::process::exit(code);
}

fn run(cli: &Cli) -> Result<()> {
    init_thread_pool()?;
    if cli.print_config {
        let rendered = serde_json::to_string_pretty(&cli.command)
            .map_err(|e| Error::Data(format!("cannot render config: {e}")))?;
        eprintln!("{rendered}");
    }
    match &cli.command {
        Command::Prob(args) => cmd_prob(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Bench(args) => cmd_bench(args),
        Command::OrderStudy(args) => cmd_order_study(args),
    }
}

/// Applies `RENEWAL_COUNT_THREADS` before any parallel work starts. 0 and
/// unset both mean one thread per available core.
fn init_thread_pool() -> Result<()> {
    let Ok(raw) = std::env::var("RENEWAL_COUNT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| Error::InvalidParameter {
        name: "RENEWAL_COUNT_THREADS".into(),
        reason: format!("expected a thread count, got {raw:?}"),
    })?;
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidParameter {
            name: "RENEWAL_COUNT_THREADS".into(),
            reason: e.to_string(),
        })
}

fn cmd_prob(args: &ProbArgs) -> Result<()> {
    let rest: DistributionSpec = args.dist.parse()?;
    let m_max = match (args.m, args.m_max) {
        (Some(m), _) => m as usize,
        (None, Some(m_max)) => m_max,
        (None, None) => unreachable!("clap requires one of --m / --m-max"),
    };
    let stage = args.extrapolate.stage();
    let pv = match &args.first_dist {
        Some(text) => {
            let first: DistributionSpec = text.parse()?;
            let mspec = ModifiedSpec::new(first, rest)?;
            modified_all_probs_extrapolated(&mspec, args.t, m_max, args.n_steps, stage)?
        }
        None => count_probabilities(&rest, args.t, m_max, args.n_steps, args.engine.engine(), stage)?,
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "m,probability").map_err(io_err)?;
    let first_row = if args.m.is_some() { m_max } else { 0 };
    for m in first_row..=m_max {
        writeln!(out, "{m},{}", pv.prob(m)).map_err(io_err)?;
    }
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let data = CountData::from_csv_path(&args.data, &args.count_column)?;
    let mut mspec = if args.covariates.is_empty() {
        ModelSpec::intercept_only(args.family.family())
    } else {
        ModelSpec::with_covariates(args.family.family(), args.covariates.clone())
    };
    if args.hurdle {
        mspec = mspec.with_hurdle();
    }
    let opts = FitOptions {
        base_n: args.base_n,
        max_iters: args.max_iters,
        ..FitOptions::default()
    };
    let fit = fit_with(&mspec, &data, &opts)?;

    if let Some(path) = &args.fitted_csv {
        write_fitted_table(path, &fit, &data)?;
    }

    // The goodness-of-fit table needs uncensored data and enough cells; when
    // it cannot be formed the report carries null instead of failing the fit.
    let gof = gof_chisq(&fit, &data).ok();
    let report = serde_json::json!({ "fit": fit, "gof": gof });
    let rendered = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Data(format!("cannot render report: {e}")))?;
    println!("{rendered}");
    Ok(())
}

/// Observed and expected frequencies per count, before any cell merging.
fn write_fitted_table(
    path: &std::path::Path,
    fit: &renewal_count::FitResult,
    data: &CountData,
) -> Result<()> {
    if !fit.covariates.is_empty() {
        return Err(Error::InvalidParameter {
            name: "fitted-csv".into(),
            reason: "observed-versus-fitted tables need an intercept-only model".into(),
        });
    }
    let max_count = data.counts().iter().copied().max().unwrap_or(0) as usize;
    let mut observed = vec![0u64; max_count + 1];
    for &c in data.counts().iter() {
        observed[c as usize] += 1;
    }
    let pmf = predict_pmf(fit, &[], max_count)?;
    let n = data.counts().len() as f64;
    let mut body = String::from("count,observed,fitted\n");
    for (m, &obs) in observed.iter().enumerate() {
        body.push_str(&format!("{m},{obs},{}\n", n * pmf.prob(m)));
    }
    std::fs::write(path, body)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let rest: DistributionSpec = args.dist.parse()?;
    let mspec = match &args.first_dist {
        Some(text) => ModifiedSpec::new(text.parse()?, rest)?,
        None => ModifiedSpec::homogeneous(rest)?,
    };
    let pmf = simulate_pmf(&mspec, args.t, args.n_draws, args.seed)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "count,frequency,probability,std_error").map_err(io_err)?;
    for (m, &freq) in pmf.counts().iter().enumerate() {
        writeln!(
            out,
            "{m},{freq},{},{}",
            pmf.probability(m),
            pmf.std_error(m)
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    if args.engines.is_empty() {
        return Err(Error::InvalidParameter {
            name: "engines".into(),
            reason: "need at least one engine to time".into(),
        });
    }
    if args.reps == 0 {
        return Err(Error::InvalidParameter {
            name: "reps".into(),
            reason: "need at least one repetition".into(),
        });
    }
    let spec: DistributionSpec = args.dist.parse()?;

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(
        out,
        "engine,m,n_steps,reps,median_seconds,relative,convolutions"
    )
    .map_err(io_err)?;

    // Timings are relative to the first emitted row, so a table is
    // comparable within itself without trusting absolute seconds.
    let mut baseline: Option<f64> = None;
    for &engine in &args.engines {
        for &m in &args.m {
            for &n in &args.n_steps {
                let mut samples = Vec::with_capacity(args.reps);
                for _ in 0..args.reps {
                    let started = Instant::now();
                    match engine {
                        EngineArg::Direct => {
                            count_probabilities(
                                &spec,
                                args.t,
                                m as usize,
                                n,
                                Engine::Direct,
                                ExtrapolationStage::Raw,
                            )?;
                        }
                        EngineArg::DePril => {
                            depril_prob(&spec, args.t, m, n)?;
                        }
                        EngineArg::Chain => {
                            chain_prob(&spec, args.t, m, n)?;
                        }
                    }
                    samples.push(started.elapsed().as_secs_f64());
                }
                samples.sort_by(f64::total_cmp);
                let median = samples[samples.len() / 2];
                let base = *baseline.get_or_insert(median);
                // The direct engine convolves once per count; the recursion
                // builds the m-fold mass without full convolutions.
                let convolutions = match engine {
                    EngineArg::Direct => m as usize,
                    EngineArg::DePril => 0,
                    EngineArg::Chain => chain_convolution_count(m),
                };
                writeln!(
                    out,
                    "{engine},{m},{n},{},{:.9},{:.4},{convolutions}",
                    args.reps,
                    median,
                    median / base
                )
                .map_err(io_err)?;
            }
        }
    }
    Ok(())
}

fn cmd_order_study(args: &OrderStudyArgs) -> Result<()> {
    let rows = order_study(&args.betas, args.base_n, args.m_max)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(
        out,
        "beta,m,raw_err,stage1_err,stage2_err,gamma_raw,gamma_stage1,gamma_stage2"
    )
    .map_err(io_err)?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.beta,
            row.m,
            row.raw_err,
            row.stage1_err,
            row.stage2_err,
            opt_cell(row.gamma_raw),
            opt_cell(row.gamma_stage1),
            opt_cell(row.gamma_stage2)
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn io_err(e: std::io::Error) -> Error {
    Error::Data(format!("cannot write output: {e}"))
}
