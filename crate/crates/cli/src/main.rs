//! `trisampler` command-line entry point.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "trisampler",
    version,
    about = "Negative sampling experiments for dense retrieval"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct GlobalArgs {
    /// JSON config with sections data, index, sampler, trainer, eval
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. --set trainer.steps=0
    #[arg(long = "set", value_name = "PATH=VALUE", global = true)]
    overrides: Vec<String>,
    /// Root seed; overrides the config's seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus, queries and qrels
    Gen {
        /// JSON dataset spec; defaults apply to missing fields
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve the top documents of every query into a run file
    Index {
        /// Trained encoder (JSON); raw vectors are used without one
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample negatives for every (query, positive) pair
    Sample {
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the toy dual encoder
    Train,
    /// Score a run file against qrels
    Eval,
    /// Train every configured sampler on every seed and tabulate
    Compare,
}

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub const USAGE: u8 = 2;
    pub const NUMERIC: u8 = 3;
    pub const IO: u8 = 4;

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: Self::USAGE,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: Self::IO,
            message: message.into(),
        }
    }
}

impl From<trisampler::Error> for CliError {
    fn from(e: trisampler::Error) -> Self {
        let code = match e {
            trisampler::Error::Io { .. } => Self::IO,
            trisampler::Error::Diverged { .. } => Self::NUMERIC,
            _ => Self::USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { CliError::USAGE } else { 0 });
        }
    };
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(CliError::USAGE);
        }
    }
    let result = match cli.command {
        Command::Gen { spec, out } => commands::gen(&cli.global, spec.as_deref(), &out),
        Command::Index { encoder, out } => commands::index(&cli.global, encoder.as_deref(), out),
        Command::Sample { encoder, out } => commands::sample(&cli.global, encoder.as_deref(), out),
        Command::Train => commands::train(&cli.global),
        Command::Eval => commands::eval(&cli.global),
        Command::Compare => commands::compare(&cli.global),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
