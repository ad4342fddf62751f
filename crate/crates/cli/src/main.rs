use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "sfvit", version, about = "Integer-only linear-attention ViT toolkit: census, PTQ, inference and accelerator simulation")]
pub struct Cli {
    /// Output directory for reports, artifacts and the run manifest.
    #[arg(long, global = true, env = "SFVIT_OUT_DIR", default_value = "sfvit-out")]
    pub out: PathBuf,
    /// Seed for weight initialization and synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Count MACs per operation kind.
    Census {
        model: PathBuf,
        /// Print JSON instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Calibrate and quantize a model, writing the quantization artifact.
    Quantize {
        model: PathBuf,
        /// `synthetic`, `synthetic:<count>` or a directory of `.tqt` input tensors.
        #[arg(long, default_value = "synthetic")]
        calib: String,
        #[arg(long)]
        no_migration: bool,
        #[arg(long)]
        no_shifting: bool,
        #[arg(long, value_enum, default_value_t = Divisor::Log2_4)]
        divisor: Divisor,
    },
    /// Run inference in float, integer or cross-check mode.
    Infer {
        model: PathBuf,
        /// Quantization artifact (`quant.json` or its directory).
        #[arg(long)]
        quant: Option<PathBuf>,
        /// `synthetic:<count>` or a directory of `.tqt` input tensors.
        #[arg(long, default_value = "synthetic:4")]
        inputs: String,
        #[arg(long, value_enum, default_value_t = Mode::Int)]
        mode: Mode,
    },
    /// Simulate the accelerator on a model.
    Simulate {
        model: PathBuf,
        /// Engine configuration JSON; defaults to the 16-core 200 MHz design.
        #[arg(long)]
        engine: Option<PathBuf>,
        /// Engine overrides, `key=value`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// One report per value, `key=a,b,c`.
        #[arg(long)]
        sweep: Option<String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Divisor {
    Uniform8,
    #[value(name = "log2-4")]
    Log2_4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Float,
    Int,
    Crosscheck,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use sfvit_core::ErrorClass;
    match err.downcast_ref::<sfvit_core::Error>().map(sfvit_core::Error::class) {
        Some(ErrorClass::Config) => 2,
        Some(ErrorClass::Calibration) => 3,
        Some(ErrorClass::Artifact) => 4,
        Some(ErrorClass::Simulation) => 5,
        _ => 1,
    }
}

pub fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
