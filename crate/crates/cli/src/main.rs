//! Command-line front end: `run`, `sweep` and `compare-ef` execute a
//! configuration file and write CSV/JSON artifacts into its output
//! directory.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure
//! (non-finite values; the message carries the failing round).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use compams::config::{self, ConfigError, RunConfigFile};
use compams::metrics::{metrics_to_csv, sweep_to_csv, write_atomic, RunSummary};
use compams::simulator::{self, RunOutput, SimConfig, SimError, SweepTarget};

#[derive(Parser)]
#[command(name = "compams", version, about = "Distributed AMSGrad with compressed gradient averaging and error feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (.toml or .json).
    config: PathBuf,
    /// Override a config value by dotted path, e.g. --set compressor.ratio=0.01
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for --set seed=N
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run; writes metrics.csv and summary.json.
    Run(CommonArgs),
    /// Rerun over several worker counts; writes speedup.csv.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Worker counts, e.g. --workers 1,2,4,8
        #[arg(long, value_delimiter = ',', required = true)]
        workers: Vec<usize>,
        /// Stop when the true loss reaches this value.
        #[arg(long, conflicts_with = "target_grad")]
        target_loss: Option<f64>,
        /// Stop when the true squared gradient norm reaches this value.
        #[arg(long)]
        target_grad: Option<f64>,
    },
    /// Paired runs with and without error feedback; writes ef_on.csv and
    /// ef_off.csv.
    CompareEf(CommonArgs),
}

enum AppError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e.to_string())
    }
}

impl From<SimError> for AppError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => AppError::Config(e.to_string()),
            _ => AppError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Io(e.to_string())
    }
}

fn threads_from_env() -> Result<usize, AppError> {
    match std::env::var("COMPAMS_THREADS") {
        Ok(raw) => raw.trim().parse().map_err(|_| {
            AppError::Config(format!("COMPAMS_THREADS must be a non-negative integer, got `{raw}`"))
        }),
        Err(_) => Ok(0),
    }
}

fn prepare(common: &CommonArgs) -> Result<(RunConfigFile, SimConfig, PathBuf), AppError> {
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    let file = config::load(&common.config, &overrides)?;
    let sim = file.build(threads_from_env()?)?;
    let out_dir = common.out.clone().unwrap_or_else(|| file.output_dir.clone());
    Ok((file, sim, out_dir))
}

fn run_and_report(sim: &SimConfig) -> Result<RunOutput, AppError> {
    let out = simulator::run(sim)?;
    eprintln!(
        "{} rounds in {:.3}s, final loss {:.6e}",
        out.metrics.last().map(|m| m.t).unwrap_or(0),
        out.elapsed.as_secs_f64(),
        out.metrics.last().map(|m| m.loss).unwrap_or(f64::NAN),
    );
    Ok(out)
}

fn cmd_run(common: &CommonArgs) -> Result<(), AppError> {
    let (file, sim, out_dir) = prepare(common)?;
    let out = run_and_report(&sim)?;
    write_atomic(&out_dir.join("metrics.csv"), &metrics_to_csv(&out.metrics))?;
    let summary = RunSummary::new(&file, &out.metrics);
    write_atomic(&out_dir.join("summary.json"), &summary.to_json())?;
    Ok(())
}

fn cmd_sweep(
    common: &CommonArgs,
    workers: &[usize],
    target_loss: Option<f64>,
    target_grad: Option<f64>,
) -> Result<(), AppError> {
    let (_file, sim, out_dir) = prepare(common)?;
    let target = match (target_loss, target_grad) {
        (Some(v), None) => SweepTarget::Loss(v),
        (None, Some(v)) => SweepTarget::GradNormSq(v),
        (None, None) => {
            return Err(AppError::Config("sweep needs --target-loss or --target-grad".into()))
        }
        (Some(_), Some(_)) => unreachable!("clap forbids both targets"),
    };
    if workers.iter().any(|&n| n == 0) {
        return Err(AppError::Config("worker counts must be >= 1".into()));
    }
    let rows = simulator::run_sweep(&sim, workers, target)?;
    for row in &rows {
        eprintln!(
            "n={}: lr={:.3e}, reached={}, iterations={:?}",
            row.n, row.lr, row.reached, row.iterations_to_target
        );
    }
    write_atomic(&out_dir.join("speedup.csv"), &sweep_to_csv(&rows))?;
    Ok(())
}

fn cmd_compare_ef(common: &CommonArgs) -> Result<(), AppError> {
    let (_file, sim, out_dir) = prepare(common)?;
    let (on, off) = simulator::compare_ef(&sim)?;
    write_atomic(&out_dir.join("ef_on.csv"), &metrics_to_csv(&on.metrics))?;
    write_atomic(&out_dir.join("ef_off.csv"), &metrics_to_csv(&off.metrics))?;
    eprintln!(
        "final grad_norm_sq: with EF {:.6e}, without EF {:.6e}",
        on.metrics.last().map(|m| m.grad_norm_sq).unwrap_or(f64::NAN),
        off.metrics.last().map(|m| m.grad_norm_sq).unwrap_or(f64::NAN),
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(common) => cmd_run(common),
        Command::Sweep { common, workers, target_loss, target_grad } => {
            cmd_sweep(common, workers, *target_loss, *target_grad)
        }
        Command::CompareEf(common) => cmd_compare_ef(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(AppError::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(AppError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
