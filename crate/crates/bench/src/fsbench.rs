//! Concurrent filesystem operation benchmark.
//!
//! Every mode makes its effects durable (fsync of files and of the parent
//! directory), so a memory-backed directory and a disk-backed one differ the
//! way a node-local ramdisk and a shared filesystem do.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Barrier};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::report::BenchReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsMode {
    Read,
    ReadWrite,
    InvokeScript,
    MkdirRm,
}

impl std::str::FromStr for FsMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "read" => FsMode::Read,
            "read_write" => FsMode::ReadWrite,
            "invoke_script" => FsMode::InvokeScript,
            "mkdir_rm" => FsMode::MkdirRm,
            _ => return Err(format!("unknown fs mode {s:?} (read, read_write, invoke_script, mkdir_rm)")),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FsParams {
    pub mode: FsMode,
    pub procs: Vec<usize>,
    /// Bytes per operation; ignored by the metadata modes.
    pub data_sizes: Vec<u64>,
    pub ops_per_actor: usize,
    pub trials: u32,
    pub target_dir: PathBuf,
}

struct ActorOutcome {
    ops: usize,
    bytes: u64,
    errors: usize,
}

fn sync_dir(dir: &Path) -> std::io::Result<()> {
    File::open(dir)?.sync_all()
}

fn actor(mode: FsMode, dir: &Path, id: usize, ops: usize, barrier: &Barrier) -> ActorOutcome {
    let mut out = ActorOutcome { ops: 0, bytes: 0, errors: 0 };
    let input = dir.join(format!("in-{id}"));
    let script = dir.join(format!("task-{id}.sh"));
    barrier.wait();
    let mut buf = vec![0u8; 1 << 20];
    for k in 0..ops {
        let r: std::io::Result<u64> = (|| match mode {
            FsMode::Read => {
                let mut f = File::open(&input)?;
                let mut n = 0u64;
                loop {
                    let got = f.read(&mut buf)?;
                    if got == 0 {
                        break Ok(n);
                    }
                    n += got as u64;
                }
            }
            FsMode::ReadWrite => {
                let data = fs::read(&input)?;
                let dest = dir.join(format!("out-{id}-{k}"));
                let mut f = File::create(&dest)?;
                f.write_all(&data)?;
                f.sync_all()?;
                drop(f);
                fs::remove_file(&dest)?;
                Ok(2 * data.len() as u64)
            }
            FsMode::InvokeScript => {
                // stage the wrapper script as a task sandbox would, then run it
                let mut f = OpenOptions::new().create(true).write(true).truncate(true).open(&script)?;
                f.write_all(b"#!/bin/sh\nexit 0\n")?;
                f.sync_all()?;
                drop(f);
                fs::set_permissions(&script, fs::Permissions::from_mode(0o755))?;
                let st = Command::new("sh").arg(&script).stdin(Stdio::null()).stdout(Stdio::null()).status()?;
                fs::remove_file(&script)?;
                sync_dir(dir)?;
                if st.success() {
                    Ok(0)
                } else {
                    Err(std::io::Error::other(format!("script exited with {st}")))
                }
            }
            FsMode::MkdirRm => {
                let d = dir.join(format!("d-{id}-{k}"));
                fs::create_dir(&d)?;
                sync_dir(dir)?;
                fs::remove_dir(&d)?;
                sync_dir(dir)?;
                Ok(0)
            }
        })();
        match r {
            Ok(b) => {
                out.ops += 1;
                out.bytes += b;
            }
            Err(e) => {
                log::debug!("fs op failed: {e}");
                out.errors += 1;
            }
        }
    }
    out
}

/// One trial at `procs`-way concurrency. Returns (elapsed s, ops, bytes, errors).
fn trial(mode: FsMode, dir: &Path, procs: usize, size: u64, ops: usize) -> Result<(f64, usize, u64, usize)> {
    if matches!(mode, FsMode::Read | FsMode::ReadWrite) {
        let block = vec![0xa5u8; size.min(1 << 20) as usize];
        for id in 0..procs {
            let mut f = File::create(dir.join(format!("in-{id}")))?;
            let mut left = size;
            while left > 0 {
                let n = left.min(block.len() as u64) as usize;
                f.write_all(&block[..n])?;
                left -= n as u64;
            }
            f.sync_all()?;
        }
    }
    let barrier = Arc::new(Barrier::new(procs + 1));
    let handles: Vec<_> = (0..procs)
        .map(|id| {
            let b = barrier.clone();
            let dir = dir.to_path_buf();
            std::thread::spawn(move || actor(mode, &dir, id, ops, &b))
        })
        .collect();
    barrier.wait();
    let t0 = Instant::now();
    let outcomes: Vec<ActorOutcome> = handles.into_iter().map(|h| h.join().expect("fs actor panicked")).collect();
    let elapsed = t0.elapsed().as_secs_f64();
    for id in 0..procs {
        let _ = fs::remove_file(dir.join(format!("in-{id}")));
    }
    Ok((
        elapsed,
        outcomes.iter().map(|o| o.ops).sum(),
        outcomes.iter().map(|o| o.bytes).sum(),
        outcomes.iter().map(|o| o.errors).sum(),
    ))
}

pub fn fs_point(procs: usize, size: u64) -> String {
    format!("procs={procs},size={size}")
}

/// Aggregate Mb/s (read modes) or ops/sec (metadata modes) across
/// concurrency levels and sizes. Per-operation errors are counted, not fatal.
pub fn fs_bench(params: &FsParams) -> Result<BenchReport> {
    if params.procs.iter().any(|&p| p == 0) || params.ops_per_actor == 0 || params.trials == 0 {
        return Err(invalid_arg("procs, ops_per_actor and trials must be positive"));
    }
    let sizes = match params.mode {
        FsMode::Read | FsMode::ReadWrite => params.data_sizes.clone(),
        _ => vec![0],
    };
    fs::create_dir_all(&params.target_dir)?;
    let work = tempfile::Builder::new().prefix("fsbench").tempdir_in(&params.target_dir)?;
    let mut report = BenchReport::new(format!("fs_{}", serde_json::to_value(params.mode)?.as_str().unwrap_or("mode")));
    report.param("mode", params.mode).param("procs", &params.procs).param("data_sizes", &sizes);
    report.param("ops_per_actor", params.ops_per_actor).param("target_dir", &params.target_dir);
    for &procs in &params.procs {
        for &size in &sizes {
            let point = fs_point(procs, size);
            for t in 0..params.trials {
                let (elapsed, ops, bytes, errors) = trial(params.mode, work.path(), procs, size, params.ops_per_actor)?;
                let secs = elapsed.max(1e-9);
                let mbps = bytes as f64 * 8.0 / 1e6 / secs;
                let ops_s = ops as f64 / secs;
                report.add_trial(
                    point.clone(),
                    t,
                    [
                        ("aggregate_mbps", mbps),
                        ("per_actor_mbps", mbps / procs as f64),
                        ("ops_per_sec", ops_s),
                        ("per_actor_ops_per_sec", ops_s / procs as f64),
                        ("errors", errors as f64),
                        ("elapsed", elapsed),
                    ],
                );
            }
        }
    }
    report.summarize();
    Ok(report)
}
