//! `hdm`: explain, evaluate and render saliency maps from the command line.

mod evaluate;
mod explain;
mod render;
mod setup;
mod testbed;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Process exit codes. Usage errors exit with 2 through clap.
pub mod exit {
    pub const FAILURE: u8 = 1;
    pub const INPUT: u8 = 3;
    pub const CONFIG: u8 = 4;
    pub const NUMERIC: u8 = 5;
}

#[derive(Debug, Parser)]
#[command(
    name = "hdm",
    version,
    about = "Hierarchical dynamic mask saliency maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Explain one image: stage masks, mixed map, renders and a run log.
    Explain(explain::ExplainArgs),
    /// Score saliency maps listed in a manifest and write a JSONL report.
    Evaluate(evaluate::EvaluateArgs),
    /// Render a saliency file as a heatmap, overlay or mask image.
    Render(render::RenderArgs),
    /// Export the planted-patch dataset, its manifest and a fitted model.
    Testbed(testbed::TestbedArgs),
    /// Print the resolved configuration as TOML.
    Config(ConfigArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Natural,
    Medical,
    Desk,
}

impl From<PresetArg> for hdm_core::Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Natural => hdm_core::Preset::Natural,
            PresetArg::Medical => hdm_core::Preset::Medical,
            PresetArg::Desk => hdm_core::Preset::Desk,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PatchArg {
    Single,
    Dual,
}

impl From<PatchArg> for hdm_core::testbed::PatchMode {
    fn from(p: PatchArg) -> Self {
        match p {
            PatchArg::Single => hdm_core::testbed::PatchMode::Single,
            PatchArg::Dual => hdm_core::testbed::PatchMode::Dual,
        }
    }
}

/// Hyperparameter selection shared by `explain` and `evaluate`.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML config file; takes precedence over --preset.
    #[arg(long, env = "HDM_CONFIG")]
    pub config: Option<PathBuf>,
    /// Built-in hyperparameter set.
    #[arg(long, value_enum, default_value_t = PresetArg::Desk)]
    pub preset: PresetArg,
    /// Override the number of stages.
    #[arg(long)]
    pub stages: Option<usize>,
}

/// Where the classifier comes from. Without `--model` the planted-patch
/// linear model is fitted from `--seed`.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Linear model JSON as written by `hdm testbed`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, value_enum, default_value_t = PatchArg::Single)]
    pub patches: PatchArg,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use hdm_core::Error as E;
    let core = err.chain().find_map(|e| e.downcast_ref::<E>());
    match core {
        Some(E::Numeric { .. } | E::Training(_)) => exit::NUMERIC,
        Some(E::Config(_) | E::Capability(_)) => exit::CONFIG,
        Some(
            E::Input(_)
            | E::Format { .. }
            | E::UnsupportedVersion { .. }
            | E::Io { .. }
            | E::Image { .. },
        ) => exit::INPUT,
        None => exit::FAILURE,
    }
}

/// The error chain joined by ": ", skipping causes already quoted by
/// the message above them.
fn describe(err: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !text.ends_with(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Explain(args) => explain::run(&args),
        Command::Evaluate(args) => evaluate::run(&args),
        Command::Render(args) => render::run(&args),
        Command::Testbed(args) => testbed::run(&args),
        Command::Config(args) => {
            setup::load_config(&args).map(|cfg| print!("{}", cfg.to_toml_string()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
