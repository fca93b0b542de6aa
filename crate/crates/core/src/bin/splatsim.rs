use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use splatsim_core::mpm::Threading;
use splatsim_core::{scene, SimError};

/// Worker thread count for the parallel stages.
const THREADS_ENV: &str = "SPLATSIM_THREADS";

#[derive(Parser)]
#[command(name = "splatsim", version, about = "Gaussian splat MPM simulator")]
struct Cli {
    /// Single-threaded reference mode (sequential particle-order transfers).
    #[arg(long, global = true)]
    reference: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write frames, renders and diagnostics.
    Simulate { config: PathBuf },
    /// Check a config without running; prints a JSON report.
    Validate { config: PathBuf },
    /// Write the input plus fill kernels to `<output>/filled.ply`.
    Fill { config: PathBuf },
    /// Render exported frames, e.g. `7`, `0..10`, `0..=10`.
    Render { config: PathBuf, frames: String },
    /// Per-field differences between two splat files; prints JSON.
    Diff { a: PathBuf, b: PathBuf },
}

fn exit_code(e: &SimError) -> u8 {
    match e {
        SimError::Config { .. } | SimError::Parameter(_) | SimError::Timestep(_) => 2,
        SimError::NumericalBlowup { .. } | SimError::DegenerateDeformation { .. } => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), SimError> {
    let threading = if cli.reference { Threading::Reference } else { Threading::Parallel };
    match cli.command {
        Command::Simulate { config } => {
            let s = scene::run(&config, threading)?;
            println!(
                "wrote {} frames ({} steps, {} fill kernels) to {}",
                s.frames_written,
                s.steps,
                s.fill_count,
                s.output_dir.display()
            );
        }
        Command::Validate { config } => {
            let report = scene::validate(&config);
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if let Some(first) = report.errors.first() {
                return Err(SimError::config(&first.path, &first.message));
            }
        }
        Command::Fill { config } => {
            let (path, n) = scene::fill_preview(&config)?;
            println!("{n} fill kernels; wrote {}", path.display());
        }
        Command::Render { config, frames } => {
            let range = scene::parse_frame_range(&frames)?;
            for p in scene::render_frames(&config, range)? {
                println!("{}", p.display());
            }
        }
        Command::Diff { a, b } => {
            let d = scene::diff_frames(&a, &b)?;
            println!("{}", serde_json::to_string_pretty(&d).expect("diff serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = if cli.reference {
        Some(1)
    } else {
        std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok())
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
