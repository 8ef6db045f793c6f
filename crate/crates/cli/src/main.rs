use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dtr_core::consistency::TauVector;
use dtr_core::surrogate::SurrogateSpec;

mod commands;
mod config;

/// Two-stage treatment regime experiments: simulate, train, evaluate, benchmark.
#[derive(Debug, Parser)]
#[command(name = "dtr", version)]
pub struct Cli {
    /// Master seed; overrides the config file's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file. Commands that print JSON write it here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for replications (default: one per CPU).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Ipw,
    Dr,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Propensity {
    Known,
    Fitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QFormArg {
    Linear,
    Mlp,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset from one of the simulation settings.
    Simulate {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
        setting: u8,
        #[arg(long)]
        n: usize,
    },
    /// Fit a policy pair; writes its JSON and an `epoch,objective` trace.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset CSV; otherwise one is simulated from `--setting`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
        setting: Option<u8>,
        /// Training size when simulating.
        #[arg(long)]
        n: Option<usize>,
        /// Policy class for both stages.
        #[arg(long)]
        class: Option<String>,
        #[arg(long)]
        surrogate: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Comma-separated surrogate keys to choose from by cross-validation.
        #[arg(long, value_delimiter = ',')]
        cv_surrogates: Option<Vec<String>>,
    },
    /// Estimate the value of a saved policy pair.
    Evaluate {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        policy: PathBuf,
        /// Observed data, needed by ipw and dr.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Generative setting, needed by mc.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
        setting: Option<u8>,
        #[arg(long, default_value_t = dtr_core::experiment::DEFAULT_N_EVAL)]
        n_eval: usize,
        #[arg(long, value_enum, default_value_t = Propensity::Known)]
        propensity: Propensity,
        /// Outcome model family fitted for dr.
        #[arg(long, value_enum, default_value_t = QFormArg::Linear)]
        q_form: QFormArg,
    },
    /// Replicated generate/train/evaluate runs from a config file.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `reps`.
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Surrogate maximiser signs against the optimal rule for one τ.
    Consistency {
        #[arg(long)]
        surrogate: SurrogateSpec,
        /// Four comma-separated weights τ(+,+), τ(+,−), τ(−,+), τ(−,−).
        #[arg(long, allow_hyphen_values = true)]
        tau: TauVector,
    },
    /// Collects the aggregate rows of benchmark CSVs into one table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
