//! The `manytask` command line.
//!
//! stdout carries only machine-readable output (JSON lines or CSV); progress
//! and diagnostics go to stderr.

pub mod args;
pub mod bench;
pub mod config;
pub mod model;
pub mod service;
pub mod submit;

use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::Result;

pub use args::{Cli, Command};
pub use config::RunConfig;

/// Exit status of a command that ran to completion but did not succeed.
pub const EXIT_INCOMPLETE: i32 = 1;

/// Runs one parsed invocation and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Serve(a) => service::serve(cfg, a),
        Command::Worker(a) => service::worker(cfg, a),
        Command::Provision(a) => service::provision(cfg, cli.config.as_deref(), a),
        Command::Submit(a) => submit::submit(cfg, a),
        Command::Resume(a) => submit::resume(cfg, a),
        Command::Status(a) => submit::status(cfg, a),
        Command::Stats(a) => submit::stats(cfg, a),
        Command::Bench(a) => bench::bench(cfg, a),
        Command::Trace(a) => bench::trace(a),
        Command::Model(a) => model::model(cfg, a),
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            Ok(0)
        }
    }
}

/// Flag raised by SIGINT or SIGTERM.
pub fn termination_flag() -> Result<Arc<AtomicBool>> {
    let flag = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGINT, signal_hook::consts::SIGTERM] {
        signal_hook::flag::register(sig, flag.clone())?;
    }
    Ok(flag)
}

pub(crate) fn print_json(v: &impl serde::Serialize) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, v)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("creating {}: {e}", dir.display()))
}
