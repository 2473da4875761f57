//! Command-line experiment runner: dataset generation, training, evaluation
//! and ablation sweeps driven by one JSON configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_eval, cmd_generate, cmd_sweep, cmd_train, read_sweep, sweep_variants, SweepAxis, SweepRow,
    ARCHITECTURES, CHECKPOINT_FILE, MANIFEST_FILE, METRICS_FILE, REPORT_FILE, SWEEP_FILE,
};
pub use config::{DataSource, ExperimentConfig, OpenMaxParams};

use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "hybrid-osr", version, about = "Open-set manipulation classification experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train on the split's closed-set training samples.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on closed-set and open-set test samples.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and evaluate variants along one axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `patch_size` or `architecture`.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values (default: every valid value).
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

/// Runs one command and returns the path of its main artifact.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    match &cli.command {
        Command::Generate { common } => cmd_generate(&common.load()?),
        Command::Train { common, resume } => cmd_train(&common.load()?, resume.as_deref()),
        Command::Eval { common, checkpoint } => cmd_eval(&common.load()?, checkpoint),
        Command::Sweep {
            common,
            axis,
            values,
            seeds,
        } => {
            let axis: SweepAxis = axis.parse()?;
            cmd_sweep(&common.load()?, axis, values.as_deref(), *seeds)
        }
    }
}

/// 0 on success, 1 for configuration or input problems, 2 for failures
/// while computing.
pub fn exit_code(result: &Result<PathBuf>) -> u8 {
    match result {
        Ok(_) => 0,
        Err(e) if e.is_user_error() => 1,
        Err(_) => 2,
    }
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = run(&cli);
    match &result {
        Ok(path) => println!("{}", path.display()),
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result))
}

