use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crowdtime::{Error, TimeTransform};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "crowdtime", version, about = "Time-aware aggregation of crowdsourced labels")]
struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one aggregator and write labels.csv, workers.csv, run.json and,
    /// for the time-aware model, durations.csv and validity.csv.
    Aggregate(AggregateArgs),
    /// Compare aggregators against gold labels.
    Evaluate(EvaluateArgs),
    /// Quality-versus-time tables from judgments with gold labels.
    AnalyzeTime(AnalyzeTimeArgs),
    /// Generate a synthetic dataset with planted spammers.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Judgment CSV: task_id,worker_id,label,time_seconds.
    #[arg(long)]
    judgments: PathBuf,
    /// Gold CSV: task_id,gold_label.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Number of classes; labels are 0..C-1.
    #[arg(long, default_value_t = 2, conflicts_with = "class_names")]
    classes: usize,
    /// Comma-separated class names, in index order.
    #[arg(long, value_delimiter = ',')]
    class_names: Option<Vec<String>>,
}

#[derive(Args, Debug, Clone)]
struct SamplerArgs {
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
    #[arg(long, default_value_t = 500)]
    burnin: usize,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Master seed; falls back to CROWDTIME_SEED, then 0.
    #[arg(long, env = "CROWDTIME_SEED", default_value_t = 0)]
    seed: u64,
    /// Representation of completion times seen by the time-aware model.
    #[arg(long, default_value_t = TimeTransform::Log)]
    time_transform: TimeTransform,
    #[arg(long, default_value_t = 2)]
    communities: usize,
    #[arg(long, default_value_t = 10.0)]
    community_concentration: f64,
}

/// Prior overrides; unset values keep their defaults.
#[derive(Args, Debug, Clone, Default)]
struct HyperArgs {
    /// Class-proportion pseudo-counts: one value for all classes or C values.
    #[arg(long = "hp.p0", value_delimiter = ',')]
    p0: Option<Vec<f64>>,
    /// Spam label pseudo-counts: one value for all classes or C values.
    #[arg(long = "hp.s0", value_delimiter = ',')]
    s0: Option<Vec<f64>>,
    #[arg(long = "hp.pi0-diag")]
    pi0_diag: Option<f64>,
    #[arg(long = "hp.pi0-offdiag")]
    pi0_offdiag: Option<f64>,
    #[arg(long = "hp.alpha0")]
    alpha0: Option<f64>,
    #[arg(long = "hp.beta0")]
    beta0: Option<f64>,
    /// Lower-threshold prior mean, in transformed units.
    #[arg(long = "hp.sigma0-mean", allow_negative_numbers = true)]
    sigma0_mean: Option<f64>,
    #[arg(long = "hp.gamma0-precision")]
    gamma0_precision: Option<f64>,
    /// Upper-threshold prior mean, in transformed units.
    #[arg(long = "hp.lambda0-mean", allow_negative_numbers = true)]
    lambda0_mean: Option<f64>,
    #[arg(long = "hp.delta0-precision")]
    delta0_precision: Option<f64>,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// mv, vd, random, onecoin, bcc, cbcc, bccprop or bcctime.
    #[arg(long)]
    model: String,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated models, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    models: Vec<String>,
    /// Judgment fractions for a subsampling curve, e.g. 0.2,0.5,1.0.
    #[arg(long, value_delimiter = ',')]
    subsample: Option<Vec<f64>>,
    /// Subsamples per fraction.
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AnalyzeTimeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Cumulative time thresholds in seconds. Defaults to log-spaced edges
    /// between the fastest and slowest judgment.
    #[arg(long, value_delimiter = ',')]
    bin_edges: Option<Vec<f64>>,
    /// Number of default edges.
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Tasks with fewer judgments are left out of the correlation table.
    #[arg(long, default_value_t = 5)]
    min_judgments: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 200)]
    tasks: usize,
    #[arg(long, default_value_t = 30)]
    workers: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 0.2)]
    spammer_fraction: f64,
    #[arg(long, default_value_t = 0.85)]
    accuracy: f64,
    /// Chance that a reliable worker's judgment is genuine.
    #[arg(long, default_value_t = 1.0)]
    propensity: f64,
    /// Planted window in seconds.
    #[arg(long, default_value_t = 10.0)]
    window_lower: f64,
    #[arg(long, default_value_t = 50.0)]
    window_upper: f64,
    /// Per-task shift of the window, uniform in +/- this many log-seconds.
    #[arg(long, default_value_t = 0.0)]
    window_jitter: f64,
    /// Spam times fall up to this factor beyond the window.
    #[arg(long, default_value_t = 50.0)]
    outlier_scale: f64,
    #[arg(long, default_value_t = 6)]
    judgments_per_task: usize,
    #[arg(long, env = "CROWDTIME_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Aggregate(a) => commands::aggregate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::AnalyzeTime(a) => commands::analyze_time(a),
        Command::Simulate(a) => commands::simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(exit_code(&e))
        }
    }
}
