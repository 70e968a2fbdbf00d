mod args;
mod commands;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use args::Cli;
use commands::FileConfig;

/// Sizes the global worker pool from `FI2P_THREADS` when it is set.
fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("FI2P_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| fi2p_core::Error::Usage(format!("FI2P_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker threads")
}

fn main_inner(cli: Cli) -> Result<()> {
    configure_threads()?;
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    commands::run(cli.command, file)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let usage = matches!(e.downcast_ref::<fi2p_core::Error>(), Some(fi2p_core::Error::Usage(_)));
            // One line: the outermost message plus any causes it does not already spell out.
            let mut msg = String::new();
            for part in e.chain().map(ToString::to_string) {
                if !msg.contains(&part) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&part);
                }
            }
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
