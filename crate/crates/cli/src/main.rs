use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Subset covariance estimation under approximate factor models.
#[derive(Debug, Parser)]
#[command(name = "factorcov", version, about)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores). FACTORCOV_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the covariance of a subset of variables from a CSV panel.
    Estimate(EstimateArgs),
    /// Monte-Carlo comparison of the estimators on a simulated design.
    Simulate(SimulateArgs),
    /// Error and wall time of divide-and-conquer against the other estimators.
    Benchmark(BenchmarkArgs),
    /// Choose the number of factors.
    SelectK(SelectKArgs),
    /// Misclassification rates of factor-covariance LDA over random splits.
    Classify(ClassifyArgs),
    /// Compare factor information of the full panel and of a subset.
    Fisher(FisherArgs),
}

#[derive(Debug, Clone, Args)]
struct CsvArgs {
    /// First row holds time labels (default: detect).
    #[arg(long, conflicts_with = "no_header")]
    header: bool,
    #[arg(long)]
    no_header: bool,
    /// First column holds variable ids (default: detect).
    #[arg(long, conflicts_with = "no_ids")]
    ids: bool,
    #[arg(long)]
    no_ids: bool,
    /// Reject empty cells.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EstimatorArg {
    #[value(name = "1")]
    Method1,
    #[value(name = "2")]
    Method2,
    Dc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RateArg {
    PaperLiteral,
    TheoryAware,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlignArg {
    Procrustes,
    Literal,
}

#[derive(Debug, Args)]
struct ThresholdArgs {
    /// Threshold constant, or "auto" for the smallest value keeping the estimate positive definite.
    /// A numeric value is raised along the grid only if needed for positive definiteness.
    #[arg(long = "c", default_value = "auto")]
    c: String,
    /// Use the numeric constant exactly, even if the estimate is not positive definite.
    #[arg(long)]
    fixed_c: bool,
    #[arg(long, value_enum, default_value = "paper-literal")]
    rate_mode: RateArg,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    input: PathBuf,
    #[arg(long, value_enum, default_value = "2")]
    method: EstimatorArg,
    /// Number of factors, or "auto" (information criterion with the gp1 penalty).
    #[arg(long, default_value = "auto")]
    k: String,
    /// Target variables, e.g. "0..49,100,200..205". Defaults to all variables.
    #[arg(long, conflicts_with = "subset_file")]
    subset: Option<String>,
    /// File containing a subset specification.
    #[arg(long)]
    subset_file: Option<PathBuf>,
    /// Number of groups for divide-and-conquer.
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, value_enum, default_value = "procrustes")]
    align: AlignArg,
    /// Seed for the random divide-and-conquer partition (contiguous groups when absent).
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    threshold: ThresholdArgs,
    #[command(flatten)]
    csv: CsvArgs,
    /// Output directory for covariance.csv, loadings.csv, factors.csv, summary.json and timings.json.
    #[arg(long, short = 'o', default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    s: usize,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also run divide-and-conquer with this many groups.
    #[arg(long)]
    dc_m: Option<usize>,
    /// Draw idiosyncratic variances from U(25, 75) instead of a common value.
    #[arg(long)]
    heteroscedastic: bool,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Output file (default: standard output).
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
    /// Also write mean wall times per method to this JSON file.
    #[arg(long)]
    timings: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// Sample sizes; each sets s = T^0.6, p = T^1.4 and M = T^0.2.
    #[arg(long, value_delimiter = ',', default_value = "200,350,500")]
    t: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV with columns T,method,metric,mean,sd,wall_ms (default: standard output).
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
    /// JSON report with designs, rows, per-stage timings and speedups.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CriterionArg {
    Gp1,
    Gp2,
    EigenRatio,
}

#[derive(Debug, Args)]
struct SelectKArgs {
    input: PathBuf,
    /// Largest number of factors considered.
    #[arg(long, default_value_t = 15)]
    n: usize,
    #[arg(long, value_enum, default_value = "gp1")]
    criterion: CriterionArg,
    /// Demean each variable before computing the criterion.
    #[arg(long)]
    center: bool,
    #[command(flatten)]
    csv: CsvArgs,
    /// JSON output (default: standard output).
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
    /// Criterion curve as CSV with columns k,value.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CenteringArg {
    Class,
    Pooled,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    /// Expression panel: variables in rows, subjects in columns.
    input: PathBuf,
    /// One 0/1 label per line, aligned with the columns (1 = case).
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Number of variables kept by the t-statistic screener.
    #[arg(long, default_value_t = 50)]
    s_max: usize,
    #[arg(long, default_value_t = 100)]
    splits: usize,
    #[arg(long, default_value_t = 0.25)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "class")]
    centering: CenteringArg,
    #[command(flatten)]
    threshold: ThresholdArgs,
    #[command(flatten)]
    csv: CsvArgs,
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FisherArgs {
    /// JSON model: {"loadings": [[...], ...], "idio_cov": {"diagonal": [...]} | {"dense": [[...], ...]}}.
    model: PathBuf,
    #[arg(long)]
    subset: String,
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = commands::configure_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Estimate(a) => commands::estimate(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::SelectK(a) => commands::select_k(a),
        Command::Classify(a) => commands::classify(a),
        Command::Fisher(a) => commands::fisher(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
