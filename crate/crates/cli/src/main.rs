use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kinrecover_cli::{commands, CliError, PipelineConfig};

/// Recover robot joint motion from 2D keypoints, and build the synthetic
/// data to train and test that recovery.
#[derive(Parser)]
#[command(name = "kinrecover", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat JSON config of dotted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set rig.radius=4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render seeded motion from every rig camera into a dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep the `distill_k` most distinct frames of a dataset.
    Distill {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the configured keypoint noise to a dataset.
    Noise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the 2D-to-3D lifter; also writes `<out>.loss.json`.
    TrainLifter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover a motion file from one camera's keypoints; also writes
    /// `<out>.diagnostics.json`.
    Recover {
        #[arg(long)]
        input: PathBuf,
        /// Lift with this network instead of the configured 3D source.
        #[arg(long)]
        lifter: Option<PathBuf>,
        #[arg(long)]
        camera: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a recovered motion file against ground-truth records.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        camera: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize, recover and score in one go.
    Roundtrip {
        /// Pixel noise levels to sweep (comma separated).
        #[arg(long, value_delimiter = ',')]
        noise_sigma: Vec<f64>,
        /// Sequences per noise level.
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long)]
        lifter: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    let config = PipelineConfig::load(cli.common.config.as_deref(), &cli.common.sets)?;
    match cli.command {
        Command::Synth { out } => commands::synth(&config, &out),
        Command::Distill { input, out } => commands::distill(&config, &input, &out),
        Command::Noise { input, out } => commands::noise(&config, &input, &out),
        Command::TrainLifter { input, out } => commands::train_lifter(&config, &input, &out),
        Command::Recover {
            input,
            lifter,
            camera,
            out,
        } => commands::recover(&config, &input, lifter.as_deref(), camera.as_deref(), &out),
        Command::Eval {
            pred,
            truth,
            camera,
            out,
        } => commands::eval(&config, &pred, &truth, camera.as_deref(), &out),
        Command::Roundtrip {
            noise_sigma,
            trials,
            lifter,
            out,
        } => commands::roundtrip(&config, &noise_sigma, trials, lifter.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
