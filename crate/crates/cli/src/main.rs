use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use transtate_cli::{run, Formats, RunSpec};

/// Monte Carlo transport through transition states between two GOE spaces.
#[derive(Debug, Parser)]
#[command(name = "transtate", version)]
struct Cli {
    /// Flat `key: value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// isolated, overlapping or custom
    #[arg(long)]
    preset: Option<String>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    energy_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    energy_max: Option<f64>,
    #[arg(long)]
    energy_points: Option<usize>,
    /// Output directory
    #[arg(long, default_value = "out")]
    output: PathBuf,
    /// csv, json or both
    #[arg(long, default_value = "both")]
    format: Formats,
    /// Run the exactness suite only
    #[arg(long)]
    check_only: bool,
    /// Worker threads; results do not depend on it
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut overrides = Vec::new();
    let mut push = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            overrides.push((key.to_string(), v));
        }
    };
    push("seed", cli.seed.map(|v| v.to_string()));
    push("realizations", cli.realizations.map(|v| v.to_string()));
    push("energy_min", cli.energy_min.map(|v| v.to_string()));
    push("energy_max", cli.energy_max.map(|v| v.to_string()));
    push("energy_points", cli.energy_points.map(|v| v.to_string()));
    push("workers", cli.workers.map(|v| v.to_string()));
    let spec = RunSpec {
        config_path: cli.config,
        preset: cli.preset,
        overrides,
        output_dir: cli.output,
        formats: cli.format,
        check_only: cli.check_only,
    };
    ExitCode::from(run(&spec) as u8)
}
