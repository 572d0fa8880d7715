//! `hsrnet` command-line tool.
//!
//! Exit status: 0 success, 1 invalid usage or configuration, 2 runtime
//! failure (I/O, divergence, failed gradient check).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    pub fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) => m,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl From<hsrnet::Error> for Failure {
    fn from(e: hsrnet::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "hsrnet",
    version,
    about = "Hyperspectral/multispectral fusion toolkit"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the `output_dir` key
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Degrade reference cubes into LR-HSI / HR-MSI pairs
    Simulate,
    /// Train one network variant
    Train {
        /// Continue from the configured checkpoint
        #[arg(long)]
        resume: bool,
    },
    /// Fuse an LR-HSI with an HR-MSI using a trained checkpoint
    Fuse {
        #[arg(long)]
        lr: PathBuf,
        #[arg(long)]
        msi: PathBuf,
        /// Overrides the `checkpoint` key
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare an estimate against a reference cube
    Evaluate {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        /// Print the column header first
        #[arg(long)]
        header: bool,
    },
    /// Train all three variants on the same data and compare them
    Ablate,
    /// Finite-difference check of every backward pass
    Gradcheck {
        /// Corrupt weight gradients by 1% to demonstrate failure
        #[arg(long)]
        inject_fault: bool,
    },
}

fn resolve_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Validation(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = resolve_config(&cli.common)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Train { resume } => commands::train(&cfg, resume),
        Command::Fuse {
            lr,
            msi,
            checkpoint,
        } => commands::fuse(&cfg, &lr, &msi, checkpoint.as_deref()),
        Command::Evaluate {
            reference,
            estimate,
            header,
        } => commands::evaluate(&cfg, &reference, &estimate, header),
        Command::Ablate => commands::ablate(&cfg),
        Command::Gradcheck { inject_fault } => commands::gradcheck(&cfg, inject_fault),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
