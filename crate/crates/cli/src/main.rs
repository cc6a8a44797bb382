use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;

/// Distances between learned representations.
#[derive(Parser, Debug)]
#[command(name = "repsim", version, about)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Worker threads (REPSIM_THREADS overrides; default: logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file (default: standard output).
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// CSV inputs start with a header line.
    #[arg(long, global = true)]
    pub has_header: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Clone)]
pub struct MetricArgs {
    /// Metric kind; repeat for several.
    #[arg(long = "metric", value_delimiter = ',')]
    pub metrics: Vec<repsim::MetricKind>,
    /// Ridge strengths for lambda-dependent metrics (default 0,1e-6,1e-4,1e-2,1).
    #[arg(long = "lambda", value_delimiter = ',', allow_negative_numbers = true)]
    pub lambdas: Vec<f64>,
    /// Kernel for gulp_kernel: `linear` or `rbf:<bandwidth>`.
    #[arg(long)]
    pub kernel: Option<repsim::Kernel>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load, check and normalize representation files.
    Validate {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Distance between two representations.
    Dist {
        #[command(flatten)]
        metric: MetricArgs,
        a: PathBuf,
        b: PathBuf,
    },
    /// Pairwise distance matrix over a collection.
    Distmat {
        #[command(flatten)]
        metric: MetricArgs,
        #[arg(required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
    },
    /// Classical MDS of a distance matrix (JSON) or of a collection.
    Embed {
        #[command(flatten)]
        metric: MetricArgs,
        #[arg(long, default_value_t = 2)]
        dims: usize,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Average-linkage dendrogram of a distance matrix (JSON) or of a collection.
    Cluster {
        #[command(flatten)]
        metric: MetricArgs,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Probe generalization study, or the uniform bound check with `--bound`.
    Probe {
        #[command(flatten)]
        metric: MetricArgs,
        /// Ridge strength of the downstream probes.
        #[arg(long, default_value_t = 1e-2)]
        task_lambda: f64,
        /// Random tasks (default 20, or 1000 with `--bound`).
        #[arg(long)]
        tasks: Option<usize>,
        #[arg(long, default_value_t = 0.625)]
        train_fraction: f64,
        /// Check prediction gaps against the squared distance on two inputs.
        #[arg(long)]
        bound: bool,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Relative error of subsampled estimates against the full sample.
    Converge {
        #[arg(long, allow_negative_numbers = true)]
        lambda: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        a: PathBuf,
        b: PathBuf,
    },
    /// Write seeded synthetic representations.
    Synth {
        #[arg(long)]
        family: repsim::SynthFamily,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// Subspace rank for `lowrank` (default k).
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        rho: f64,
    },
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, String> {
    match std::env::var("REPSIM_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!(
                "REPSIM_THREADS must be a positive integer, got {v:?}"
            )),
        },
        Err(_) => match flag {
            Some(0) => Err("--threads must be positive".to_string()),
            other => Ok(other),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match thread_count(cli.global.threads) {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        }
        Ok(None) => {}
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
