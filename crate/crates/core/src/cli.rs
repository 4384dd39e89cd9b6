//! `cic-sampler` command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::benchmark::{
    make_problem, run_experiment, true_rho_oracle, write_summary_csv, Method, ParabolicLimitState, SummaryRow,
};
use crate::cic::{k_min_schedule, select_model_order, write_traces_csv};
use crate::error::{Error, Result};
use crate::estimators::{rho_estimate_batch, BatchStore};
use crate::pipeline::{initial_proposal_for, run_cic_is, PipelineConfig, DEFAULT_BATCH_SIZE, DEFAULT_FINAL_BATCH_SIZE, DEFAULT_TAU};
use crate::rng::{purpose, StreamSeed};

pub const THREADS_ENV: &str = "CIC_SAMPLER_THREADS";

/// Benchmarks with fewer repetitions are marked low-precision in their header.
pub const LOW_PRECISION_REPETITIONS: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "cic-sampler", version, about = "CIC-based adaptive importance sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one adaptive sampling pipeline and write its result JSON and trace CSV.
    Run(RunArgs),
    /// Repeat the pipeline and the baseline and write a summary table.
    Benchmark(BenchmarkArgs),
    /// Draw one batch from the initial proposal and print the model-order search.
    Select(SelectArgs),
    /// Print the reference failure probability for each b.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProblemKind {
    Parabolic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct ShapeArgs {
    #[arg(long, value_enum, default_value = "parabolic")]
    pub problem: ProblemKind,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub e: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SamplingArgs {
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_FINAL_BATCH_SIZE)]
    pub final_batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[arg(long, allow_negative_numbers = true)]
    pub b: f64,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Output prefix: writes `<prefix>.json` and `<prefix>_trace.csv`.
    #[arg(long, default_value = "cic_run")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [1.5, 2.0, 2.5])]
    pub b_list: Vec<f64>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long, default_value_t = 500)]
    pub repetitions: usize,
    #[arg(long, value_delimiter = ',', default_value = "cic-is,ce-ais-gm")]
    pub methods: Vec<String>,
    /// Written to standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[arg(long, allow_negative_numbers = true)]
    pub b: f64,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[arg(long, allow_negative_numbers = true, conflicts_with = "b_list", required_unless_present = "b_list")]
    pub b: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub b_list: Option<Vec<f64>>,
}

/// Parses `args` (program name first), executes, and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(rendered.as_bytes()) } else { stderr.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}: {}", e.name(), e);
            1
        }
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let mut out = Vec::new();
    let buf = &mut out;
    let status = match &cli.command {
        Command::Run(a) => with_threads(a.sampling.threads, || cmd_run(a, buf)),
        Command::Benchmark(a) => with_threads(a.sampling.threads, || cmd_benchmark(a, buf)),
        Command::Select(a) => with_threads(a.threads, || cmd_select(a, buf)),
        Command::Oracle(a) => cmd_oracle(a, buf),
    };
    stdout.write_all(&out)?;
    status
}

/// Thread count from `CIC_SAMPLER_THREADS`, else `flag`, else machine parallelism.
pub fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    let from_env = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| Error::InvalidConfig(format!("{THREADS_ENV}={v} is not a count")))?),
        Err(_) => None,
    };
    let n = from_env.or(flag).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        return Err(Error::InvalidConfig("thread count must be positive".into()));
    }
    Ok(n)
}

fn with_threads<F>(flag: Option<usize>, f: F) -> Result<()>
where
    F: FnOnce() -> Result<()> + Send,
{
    let n = resolve_threads(flag)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::InvalidConfig(e.to_string()))?;
    pool.install(f)
}

fn limit_state(shape: &ShapeArgs, b: f64) -> Result<ParabolicLimitState> {
    match shape.problem {
        ProblemKind::Parabolic => ParabolicLimitState::with_shape(b, shape.kappa, shape.e),
    }
}

fn pipeline_config(s: &SamplingArgs) -> PipelineConfig {
    PipelineConfig::new(s.tau, s.batch_size, s.final_batch_size, s.seed)
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn with_suffix(prefix: &PathBuf, suffix: &str) -> PathBuf {
    let mut s = prefix.clone().into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_run(a: &RunArgs, stdout: &mut dyn Write) -> Result<()> {
    let ls = limit_state(&a.shape, a.b)?;
    let config = pipeline_config(&a.sampling);
    let result = run_cic_is(&make_problem(&ls), &config)?;

    let json_path = with_suffix(&a.output, ".json");
    let mut json = create(&json_path)?;
    json.write_all(result.to_json().as_bytes())?;
    json.write_all(b"\n")?;
    json.flush()?;

    let csv_path = with_suffix(&a.output, "_trace.csv");
    let mut csv = create(&csv_path)?;
    writeln!(csv, "# seed={} b={} kappa={} e={}", config.master_seed, ls.b, ls.kappa, ls.e)?;
    write_traces_csv(&result.traces, &mut csv)?;
    csv.flush()?;

    writeln!(stdout, "rho_hat={}", result.rho_hat_final)?;
    let ks: Vec<String> = result.k_history.iter().map(|k| k.to_string()).collect();
    writeln!(stdout, "k_history={}", ks.join(","))?;
    writeln!(stdout, "wrote {} {}", json_path.display(), csv_path.display())?;
    Ok(())
}

#[derive(Serialize)]
struct BenchmarkDocument<'a> {
    seed: u64,
    repetitions: usize,
    low_precision: bool,
    rows: &'a [SummaryRow],
}

fn cmd_benchmark(a: &BenchmarkArgs, stdout: &mut dyn Write) -> Result<()> {
    let methods: Vec<Method> = a.methods.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods".into()));
    }
    let config = pipeline_config(&a.sampling);
    let mut rows = Vec::new();
    for &b in &a.b_list {
        let ls = limit_state(&a.shape, b)?;
        let report = run_experiment(&ls, &methods, a.repetitions, config.master_seed, &config)?;
        rows.extend(report.summaries.iter().map(|s| SummaryRow::new(b, s)));
    }
    let low_precision = a.repetitions < LOW_PRECISION_REPETITIONS;

    let mut buf = Vec::new();
    match a.format {
        Format::Csv => {
            let mut comments = vec![format!("seed={} repetitions={}", config.master_seed, a.repetitions)];
            if low_precision {
                comments.push(format!("low-precision: {} repetitions", a.repetitions));
            }
            write_summary_csv(&rows, &comments, &mut buf)?;
        }
        Format::Json => {
            let doc = BenchmarkDocument { seed: config.master_seed, repetitions: a.repetitions, low_precision, rows: &rows };
            buf = serde_json::to_vec_pretty(&doc)?;
            buf.push(b'\n');
        }
    }
    match &a.output {
        Some(path) => {
            let mut f = create(path)?;
            f.write_all(&buf)?;
            f.flush()?;
        }
        None => stdout.write_all(&buf)?,
    }
    Ok(())
}

fn cmd_select(a: &SelectArgs, stdout: &mut dyn Write) -> Result<()> {
    let ls = limit_state(&a.shape, a.b)?;
    let problem = make_problem(&ls);
    let config = PipelineConfig::new(1, a.batch_size, a.batch_size, a.seed);
    config.validate(problem.dim())?;
    let seed = StreamSeed::new(a.seed);
    let init = initial_proposal_for(&config, problem.dim(), seed);
    let mut store = BatchStore::new(problem.dim());
    let mut rng = seed.derive_path(&[purpose::SAMPLE_BATCH, 0]).rng();
    store.sample_batch(&init, a.batch_size, &mut rng, |x| problem.log_r(x))?;
    let rho_hat = rho_estimate_batch(&store, 0);
    if rho_hat == 0.0 {
        return Err(Error::NoEffectiveSamples);
    }
    let trace = select_model_order(&store, 0..1, rho_hat, k_min_schedule(1, None), &config.em, seed.derive_path(&[purpose::GRID_SEARCH, 1]))?;

    let mut buf = Vec::new();
    writeln!(buf, "# seed={} b={} kappa={} e={} chosen_k={}", a.seed, ls.b, ls.kappa, ls.e, trace.chosen_k)?;
    write_traces_csv(std::slice::from_ref(&trace), &mut buf)?;
    match &a.output {
        Some(path) => {
            let mut f = create(path)?;
            f.write_all(&buf)?;
            f.flush()?;
        }
        None => stdout.write_all(&buf)?,
    }
    Ok(())
}

/// `v` rounded to 12 significant digits in scientific notation.
pub fn format_significant(v: f64) -> String {
    format!("{v:.11e}")
}

fn cmd_oracle(a: &OracleArgs, stdout: &mut dyn Write) -> Result<()> {
    let bs = match (&a.b, &a.b_list) {
        (Some(b), _) => vec![*b],
        (None, Some(list)) => list.clone(),
        (None, None) => unreachable!("clap requires one of --b, --b-list"),
    };
    for b in bs {
        let ls = limit_state(&a.shape, b)?;
        writeln!(stdout, "{} {}", b, format_significant(true_rho_oracle(&ls)))?;
    }
    Ok(())
}
