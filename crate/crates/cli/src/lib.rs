//! Configuration, field I/O, experiment pipelines and reports for the `nlflow` tool.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod report;

use config::{parse_config, Overrides, Subcommand};
use error::CliError;
use report::Session;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "NLFLOW_THREADS";

/// Sizes the global pool from `NLFLOW_THREADS` when set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(text) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, found `{text}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))
}

/// Parses, executes and writes outputs; returns the process exit code.
pub fn run(subcommand: Subcommand, overrides: &Overrides) -> i32 {
    let cfg = match parse_config(subcommand, overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let mut session = Session::new();
    let outcome = experiment::execute(&cfg, &mut session);
    let written = session.write(&cfg, outcome.as_ref().err());
    let report = cfg.out_dir.join("report.json");
    if let Err(e) = outcome {
        eprintln!("{e}");
        if written.is_ok() {
            eprintln!("partial report written to {}", report.display());
        }
        return e.exit_code();
    }
    if let Err(e) = written {
        eprintln!("{e}");
        return e.exit_code();
    }
    let failures = session.failures();
    if failures.is_empty() {
        println!("{}: pass ({})", subcommand.name(), report.display());
        0
    } else {
        println!("{}: {} verdict(s) failed ({})", subcommand.name(), failures.len(), report.display());
        for f in failures {
            println!("  {f}");
        }
        1
    }
}
