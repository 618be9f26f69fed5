//! `sepx`: train positive-eigenvalue Koopman eigenfunctions and extract
//! separatrices from their zero sets.

mod commands;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use commands::LocateMode;
use sepx_core::error::Error;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "sepx",
    about = "Separatrix localization via Koopman eigenfunctions",
    version
)]
struct Cli {
    /// Cap the worker thread pool (results are identical at any count)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (falls back to config [output] dir, then $SEPX_OUT_DIR)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for model init, sampling, and attractor discovery
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Levelset2d,
    Seedpoint,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a config file; writes model.ckpt and train_record.csv
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Extract the separatrix from a trained model
    Locate {
        /// Checkpoint path, or `oracle` for the analytic 1D reference
        #[arg(long)]
        checkpoint: String,
        /// System name, with parameters as `name:key=val,...`
        #[arg(long)]
        system: String,
        #[arg(long, value_enum, default_value_t = Mode::Levelset2d)]
        mode: Mode,
        /// Grid nodes per axis
        #[arg(long, default_value_t = 400)]
        grid: usize,
        /// `x0,y0,x1,y1` (defaults to the system's sampling box or slice frame)
        #[arg(long, allow_hyphen_values = true)]
        bbox: Option<String>,
    },
    /// Validate a model with randomized attractor-joining curves
    Curves {
        #[arg(long)]
        checkpoint: String,
        #[arg(long)]
        system: String,
        #[arg(long, default_value_t = 50)]
        n_curves: usize,
        /// Tangent noise scale
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        /// Grid points per curve
        #[arg(long, default_value_t = 100)]
        grid: usize,
    },
    /// Smallest state perturbation into a target basin, with baselines
    Perturb {
        #[arg(long)]
        checkpoint: String,
        #[arg(long)]
        system: String,
        /// Comma-separated start state
        #[arg(long, allow_hyphen_values = true)]
        x_base: String,
        /// Target attractor id (defaults to the other basin of a 2-attractor system)
        #[arg(long)]
        target: Option<usize>,
    },
    /// Train one model per eigenvalue and tabulate final losses
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated eigenvalues
        #[arg(long)]
        lambda: String,
    },
    /// Ground-truth basin map on a grid (no model needed)
    Basins {
        #[arg(long)]
        system: String,
        #[arg(long, allow_hyphen_values = true)]
        bbox: Option<String>,
        #[arg(long, default_value_t = 400)]
        grid: usize,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::InvalidInput(_) => 2,
        Error::NonFinite(_) | Error::Blowup { .. } | Error::NoConvergence(_) | Error::Geometry(_) => 4,
        Error::Verification(_) => 5,
    }
}

fn run(cli: Cli) -> sepx_core::Result<i32> {
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_deref();
    match cli.cmd {
        Cmd::Train { config } => commands::cmd_train(&config, cli.seed, out),
        Cmd::Sweep { config, lambda } => commands::cmd_sweep(&config, &lambda, cli.seed, out),
        Cmd::Locate { checkpoint, system, mode, grid, bbox } => {
            let mode = match mode {
                Mode::Levelset2d => LocateMode::Levelset2d,
                Mode::Seedpoint => LocateMode::Seedpoint,
            };
            commands::cmd_locate(&checkpoint, &system, mode, grid, bbox.as_deref(), seed, out)
        }
        Cmd::Curves { checkpoint, system, n_curves, sigma, grid } => {
            commands::cmd_curves(&checkpoint, &system, n_curves, sigma, grid, seed, out)
        }
        Cmd::Perturb { checkpoint, system, x_base, target } => {
            commands::cmd_perturb(&checkpoint, &system, &x_base, target, seed, out)
        }
        Cmd::Basins { system, bbox, grid } => {
            commands::cmd_basins(&system, bbox.as_deref(), grid, seed, out)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = sepx_core::par::set_threads(t) {
            eprintln!("error: cannot set thread count: {e}");
            std::process::exit(2);
        }
    }
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
