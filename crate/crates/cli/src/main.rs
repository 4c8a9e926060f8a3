use std::path::PathBuf;

use clap::{Args, Parser, Subcommand as ClapSubcommand};
use nlflow_cli::config::{Overrides, Subcommand};

#[derive(Parser)]
#[command(name = "nlflow", version, about = "Nonlocal diffusion flows and regularity diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Check kernel, potential and operator consistency for a configuration.
    Validate(Common),
    /// Integrate the flow for each seed and check its invariants.
    Run(Common),
    /// Run the regularity detectors and oscillation fits on a seeded ensemble.
    Diagnose(Common),
    /// Smooth a CSV or PGM field with the configured flow.
    Denoise(Common),
    /// Fit the regularity constants on a seeded ensemble.
    Calibrate(Common),
}

#[derive(Args)]
struct Common {
    /// key = value configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seeds, e.g. `1..20` or `1,4,9`.
    #[arg(long, value_name = "LIST")]
    seed: Option<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() {
    let cli = Cli::parse();
    let (sub, common) = match cli.command {
        Command::Validate(c) => (Subcommand::Validate, c),
        Command::Run(c) => (Subcommand::Run, c),
        Command::Diagnose(c) => (Subcommand::Diagnose, c),
        Command::Denoise(c) => (Subcommand::Denoise, c),
        Command::Calibrate(c) => (Subcommand::Calibrate, c),
    };
    if let Err(e) = nlflow_cli::configure_threads() {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
    let overrides = Overrides {
        config: common.config,
        seeds: common.seed,
        out: common.out,
        set: common.set,
    };
    std::process::exit(nlflow_cli::run(sub, &overrides));
}
