//! `munit` command-line entry point.
//!
//! Numeric results go to stdout as JSON, logs to stderr. Exit code 0 on
//! success, 1 on runtime failure, 2 on usage errors.

mod commands;
mod evaluate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "munit", version, about = "Multimodal unsupervised image-to-image translation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render the synthetic two-domain dataset.
    GenData(GenData),
    /// Train a translator.
    Train(Train),
    /// Translate one image with sampled or reference styles.
    Translate(Translate),
    /// Write several translations of one image with prior styles.
    Sample(Sample),
    /// Score a checkpoint with CIS, IS and diversity.
    Evaluate(Evaluate),
    /// Run one or all optimality probes.
    Probe(Probe),
    /// Finite-difference check of every differentiable kernel.
    GradCheck(GradCheck),
}

#[derive(Args, Debug)]
pub struct Common {
    /// Seed for all randomness of this command.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct GenData {
    /// Dataset config (`key=value` lines); defaults apply otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct Train {
    /// Training config (`key=value` lines); defaults apply otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root holding `domain1/` and `domain2/`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Resume from this checkpoint stem instead of starting fresh.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct Translate {
    /// Checkpoint stem (without `.json`/`.bin`).
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Domain of the input image.
    #[arg(long)]
    pub domain: u8,
    /// Output PNG; with `--n` above 1, files are suffixed `_<i>`.
    #[arg(long)]
    pub out: PathBuf,
    /// Take the style from this target-domain image instead of the prior.
    #[arg(long)]
    pub style_from: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct Sample {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub domain: u8,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct Evaluate {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset root; the test split supplies inputs, the train split trains
    /// the mode classifier.
    #[arg(long)]
    pub data: PathBuf,
    /// Metric protocol config (`key=value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for the report and the trained classifier.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Source domain of the translations.
    #[arg(long, default_value_t = 1)]
    pub domain: u8,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct Probe {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Probe name, or `all`.
    #[arg(long, default_value = "all")]
    pub which: String,
    /// Probe config (`key=value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Probe workspace for cached controls and reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trained deterministic-cycle ablation; trained into the workspace
    /// when absent and needed.
    #[arg(long)]
    pub ablation: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct GradCheck {
    /// Seeds per kernel.
    #[arg(long, default_value_t = 20)]
    pub n: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 2 } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("json output"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
