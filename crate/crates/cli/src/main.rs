//! `fusereg` command line: training, registration inference, evaluation,
//! and synthetic benchmark generation.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 runtime failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "fusereg", version, about = "Unsupervised deformable 3D registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run config (TOML).
    Train {
        /// Run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's data seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Force fully deterministic execution (the default backend is
        /// already bit-deterministic; this flag asserts it).
        #[arg(long)]
        deterministic: bool,
    },
    /// Register a moving volume to a fixed volume with a trained model.
    Register {
        /// Checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Moving volume (NIfTI).
        #[arg(long)]
        moving: PathBuf,
        /// Fixed volume (NIfTI).
        #[arg(long)]
        fixed: PathBuf,
        /// Output directory for the warped volume and the field.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate stored fields or a checkpoint over a pairs manifest.
    Evaluate {
        /// Pairs manifest (JSON).
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding one `<case-id>.field.nii.gz` per case.
        #[arg(long, conflicts_with = "checkpoint")]
        fields: Option<PathBuf>,
        /// Run inference with this checkpoint instead of reading fields.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output report path (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic benchmark with known ground truth.
    Synth {
        /// Grid shape, e.g. 32x48x32 (extents divisible by 16).
        #[arg(long)]
        shape: String,
        /// Number of cases.
        #[arg(long)]
        count: usize,
        /// Peak displacement component in voxels.
        #[arg(long, default_value_t = 3.0)]
        max_disp: f64,
        /// Gaussian smoothness of the random fields, in voxels.
        #[arg(long, default_value_t = 5.0)]
        smoothness: f64,
        /// Generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    let result = match cli.command {
        Command::Train {
            config,
            seed,
            deterministic,
        } => commands::train(&config, seed, deterministic),
        Command::Register {
            checkpoint,
            moving,
            fixed,
            out,
        } => commands::register(&checkpoint, &moving, &fixed, &out),
        Command::Evaluate {
            manifest,
            fields,
            checkpoint,
            out,
        } => commands::evaluate(&manifest, fields.as_deref(), checkpoint.as_deref(), &out),
        Command::Synth {
            shape,
            count,
            max_disp,
            smoothness,
            seed,
            out,
        } => commands::synth(&shape, count, max_disp, smoothness, seed, &out),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CommandError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(commands::CommandError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
