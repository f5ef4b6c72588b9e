use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};

use overdamped::config::parse_config;
use overdamped::harness::{run, RunOptions, Subcommand};

/// Langevin dynamics and its overdamped limit: simulation and diagnostics.
#[derive(Parser)]
#[command(name = "overdamped", version)]
enum Cli {
    /// Write the reference and Langevin ensembles as CSV.
    Simulate(Common),
    /// Check the generator identity and rest terms at random phase points.
    Residuals(Common),
    /// Weak errors of the Langevin ensembles against the reference.
    Converge(Common),
    /// Momentum moments and suprema.
    Moments(Common),
    /// Martingale-ladder statistics.
    Ladder(Common),
    /// Tightness modulus of increments.
    Modulus(Common),
    /// Expectations of the rest terms along trajectories.
    RestTerms(Common),
    /// The crystal family `V + alpha chi(k q)` against the reference in `V`.
    Crystal(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Root of the artifact tree.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Accept initial momenta violating the initial moment bound.
    #[arg(long)]
    allow_heavy_tails: bool,
}

fn main() -> ExitCode {
    let (sub, args) = match Cli::parse() {
        Cli::Simulate(a) => (Subcommand::Simulate, a),
        Cli::Residuals(a) => (Subcommand::Residuals, a),
        Cli::Converge(a) => (Subcommand::Converge, a),
        Cli::Moments(a) => (Subcommand::Moments, a),
        Cli::Ladder(a) => (Subcommand::Ladder, a),
        Cli::Modulus(a) => (Subcommand::Modulus, a),
        Cli::RestTerms(a) => (Subcommand::RestTerms, a),
        Cli::Crystal(a) => (Subcommand::Crystal, a),
    };
    let opts = RunOptions {
        out_dir: args.out,
        workers: args.workers,
        seed: args.seed,
    };
    let result = parse_config(&args.config, args.allow_heavy_tails).and_then(|cfg| run(sub, &cfg, &opts));
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
