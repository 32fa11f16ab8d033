mod commands;
mod config;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Outcome;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "qholo", version, about = "Metasurface quantum hologram experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (JSON, angles in degrees) or a run manifest.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Design the two phase masks with the modified Gerchberg-Saxton loop.
    Design(Common),
    /// Combine the masks and the lens into one metasurface profile.
    Synth(Common),
    /// Heralded images for each idler polarizer, plus the no-eraser image.
    Herald(Common),
    /// Signal polarizer sweeps with the eraser on and off.
    Sweep(Common),
    /// Simulated SPAD acquisition of an intensity map.
    Frames(Common),
    /// Intensity drop, contrast and correlation of heralded images.
    Analyze(Common),
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("QHOLO_THREADS") else {
        return Ok(());
    };
    let n: usize = value.trim().parse().map_err(|_| format!("QHOLO_THREADS must be a positive integer, got '{value}'"))?;
    if n == 0 {
        return Err("QHOLO_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let (common, run): (&Common, fn(&ExperimentConfig) -> anyhow::Result<Outcome>) = match &cli.command {
        Command::Design(c) => (c, commands::cmd_design),
        Command::Synth(c) => (c, commands::cmd_synth),
        Command::Herald(c) => (c, commands::cmd_herald),
        Command::Sweep(c) => (c, commands::cmd_sweep),
        Command::Frames(c) => (c, commands::cmd_frames),
        Command::Analyze(c) => (c, commands::cmd_analyze),
    };
    let result = ExperimentConfig::load(&common.config).and_then(|mut cfg| {
        if let Some(out) = &common.out {
            cfg.out = out.clone();
        }
        run(&cfg)
    });
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: design did not converge; artifacts were written");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
