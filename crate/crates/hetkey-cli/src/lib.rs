//! Sweep driver, config parsing and file formats around the `hetkey` core.

pub mod config;
pub mod sweep;

use clap::Parser;

/// Computes certified secret-key rates for a discretized-heterodyne QKD
/// protocol over a grid of channel and block-size parameters.
#[derive(Parser, Debug)]
#[command(name = "hetkey", version, about)]
pub struct Cli {
    /// Path to the sweep configuration file.
    pub config: std::path::PathBuf,

    /// Output CSV path (defaults to the config's `run.output`, or stdout).
    #[arg(short, long)]
    pub output: Option<std::path::PathBuf>,

    /// Override the rate mode from the config (`asymptotic` or `finite`).
    #[arg(long)]
    pub mode: Option<String>,

    /// Worker threads for the sweep (defaults to the number of cores).
    #[arg(long)]
    pub threads: Option<usize>,

    /// Override the sampling seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Override the SDP solver tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
}

/// Runs the CLI and exits with the documented status code.
pub fn cli_main() {
    let cli = Cli::parse();
    std::process::exit(sweep::run(&cli));
}
