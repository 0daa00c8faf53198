use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vo_cli::config::{preset, PRESETS};
use vo_cli::{cmd_compare, cmd_convert_tartanair, cmd_evaluate, cmd_run, EXIT_ERROR};

#[derive(Parser)]
#[command(name = "rgbd-vo", version, about = "RGB-D visual odometry and trajectory evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a TUM-layout sequence described by a TOML run configuration.
    Run { config: PathBuf },
    /// Absolute trajectory error of an estimate against ground truth.
    Evaluate {
        estimate: PathBuf,
        ground_truth: PathBuf,
        /// Print a JSON record instead of the text report.
        #[arg(long)]
        json: bool,
        /// Also write a top-down SVG plot.
        #[arg(long, value_name = "SVG")]
        plot: Option<PathBuf>,
        #[arg(long, default_value_t = 0.02)]
        max_difference: f64,
    },
    /// Render a comparison table from a manifest of runs.
    Compare {
        manifest: PathBuf,
        #[arg(long, value_name = "CSV")]
        csv: Option<PathBuf>,
    },
    /// Convert a TartanAir trajectory directory to TUM layout.
    ConvertTartanair { input: PathBuf, output: PathBuf },
    /// Print a preset run configuration.
    Preset { name: String },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config } => cmd_run(&config),
        Command::Evaluate {
            estimate,
            ground_truth,
            json,
            plot,
            max_difference,
        } => cmd_evaluate(&estimate, &ground_truth, json, plot.as_deref(), max_difference),
        Command::Compare { manifest, csv } => cmd_compare(&manifest, csv.as_deref()),
        Command::ConvertTartanair { input, output } => cmd_convert_tartanair(&input, &output),
        Command::Preset { name } => match preset(&name) {
            Some(cfg) => {
                print!("{}", cfg.to_toml());
                0
            }
            None => {
                eprintln!("error: unknown preset `{name}`; available: {}", PRESETS.join(", "));
                EXIT_ERROR
            }
        },
    };
    ExitCode::from(code as u8)
}
