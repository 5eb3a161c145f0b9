//! `stanlab`: synthesise data, train, evaluate and explain from one binary.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stanlab::model::Mode;
use stanlab::StanError;

#[derive(Debug, Parser)]
#[command(name = "stanlab", version, about = "Space-time attention experiments over precomputed features")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML or JSON file with [synth], [model], [train] and [perturb] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data generation, initialisation, shuffling and noise.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Modalities the model uses.
    #[arg(long, global = true, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Dataset split to read.
    #[arg(long, global = true)]
    pub split: Option<String>,
    /// Run directory; must be new or empty.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: StanError| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Relevant,
    Irrelevant,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PointingArg {
    Soft,
    Binary,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a planted-event dataset (manifest plus AVTF features).
    Synth,
    /// Train a model on the train split, selecting on val when present.
    Train {
        /// Dataset manifest.
        #[arg(long)]
        data: PathBuf,
    },
    /// Top-1, mAP and F-score of a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// TVD perturbation curves with the attention held fixed.
    Perturb {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        target: TargetArg,
        /// Comma-separated noise levels; overrides the config grid.
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Pointing-game MAE of the time attention per split.
    Point {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "pointing", value_enum, default_value = "both")]
        pointing: PointingArg,
    },
    /// Write the attention maps of one clip.
    ExportAttn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        clip: String,
        /// Side of the upsampled space maps.
        #[arg(long, default_value_t = 224)]
        size: usize,
    },
}

/// Exit code for an error class: 2 config, 3 data, 4 runtime.
fn exit_code(e: &StanError) -> (u8, &'static str) {
    match e {
        StanError::Config(_) => (2, "config"),
        StanError::Format { .. }
        | StanError::Checkpoint(_)
        | StanError::Load { .. } | StanError::Io { .. } | StanError::Json(_) => (3, "data"),
        StanError::Dimension { .. } | StanError::Contract(_) => (4, "runtime"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&msg);
            eprintln!("{}", serde_json::json!({ "error": "config", "code": 2, "message": first }));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Synth => commands::synth(&cli.global),
        Command::Train { data } => commands::train(&cli.global, &data),
        Command::Eval { checkpoint, data } => commands::eval(&cli.global, &checkpoint, &data),
        Command::Perturb {
            checkpoint,
            data,
            target,
            sigmas,
            trials,
        } => commands::perturb(&cli.global, &checkpoint, &data, target, sigmas, trials),
        Command::Point {
            checkpoint,
            data,
            pointing,
        } => commands::point(&cli.global, &checkpoint, &data, pointing),
        Command::ExportAttn {
            checkpoint,
            data,
            clip,
            size,
        } => commands::export_attn(&cli.global, &checkpoint, &data, &clip, size),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = exit_code(&e);
            eprintln!("{}", serde_json::json!({ "error": kind, "code": code, "message": e.to_string() }));
            ExitCode::from(code)
        }
    }
}
