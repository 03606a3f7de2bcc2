//! Client-side commands: submit, resume, status and stats.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use manytask_bench::WorkloadTrace;
use manytask_core::dispatch::{self, compare_runs, Client, RunStatus};
use manytask_core::proto::{SubmitStatus, TaskId, TaskSpec};
use serde_json::json;

use crate::args::{ResumeArgs, StatsArgs, StatusArgs, SubmitArgs};
use crate::config::RunConfig;
use crate::{print_json, EXIT_INCOMPLETE};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(10);

/// Reads a submission file: a JSONL trace when the first non-blank line is a
/// JSON object, otherwise one command per line.
pub fn load_specs(path: &Path, run_id: &str, time_scale: f64) -> Result<Vec<TaskSpec>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let lines: Vec<String> = std::io::BufReader::new(file).lines().collect::<std::io::Result<_>>()?;
    let first = lines.iter().map(|l| l.trim()).find(|l| !l.is_empty());
    if first.is_some_and(|l| l.starts_with('{')) {
        let trace = WorkloadTrace::read_jsonl(path)?;
        return Ok(trace.to_specs(run_id, time_scale));
    }
    Ok(lines
        .iter()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, cmd)| TaskSpec::new(TaskId::derive(run_id, i as u64, cmd.as_bytes()), cmd))
        .collect())
}

fn connect(cfg: &RunConfig, override_addr: Option<&str>) -> Result<Client> {
    let addr = override_addr.unwrap_or(&cfg.dispatcher.address);
    Client::connect_retry(addr, CONNECT_TIMEOUT).with_context(|| format!("connecting to dispatcher at {addr}"))
}

fn tally(entries: &[(TaskId, SubmitStatus)]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for (_, s) in entries {
        *m.entry(format!("{s:?}").to_lowercase()).or_insert(0) += 1;
    }
    m
}

fn summary(run: &RunStatus) -> serde_json::Value {
    json!({
        "run_id": run.run_id,
        "submitted": run.submitted,
        "done": run.done,
        "failed": run.failed,
        "complete": run.complete,
        "failed_tasks": run.failed_tasks.iter().map(|t| t.to_hex()).collect::<Vec<_>>(),
        "metrics": run.metrics,
    })
}

fn wait_and_report(client: &mut Client, run_id: &str, timeout: Option<f64>) -> Result<i32> {
    let mut last = Instant::now();
    let run = client.wait(run_id, Duration::from_millis(100), timeout.map(Duration::from_secs_f64), |st| {
        if last.elapsed() >= Duration::from_secs(1) {
            last = Instant::now();
            eprintln!(
                "{run_id}: {}/{} done, {} failed, {} running, {} queued",
                st.done, st.submitted, st.failed, st.running, st.queued
            );
        }
    })?;
    eprintln!("{run_id}: {} done, {} failed of {}", run.done, run.failed, run.submitted);
    print_json(&summary(&run))?;
    Ok(if run.failed == 0 && run.done == run.submitted { 0 } else { EXIT_INCOMPLETE })
}

pub fn submit(cfg: RunConfig, a: SubmitArgs) -> Result<i32> {
    let run_id = a.run_id.clone().unwrap_or_else(|| format!("run-{:08x}", rand::random::<u32>()));
    let scale = a.time_scale.unwrap_or(cfg.bench.time_scale);
    if !(scale > 0.0 && scale.is_finite()) {
        bail!("time scale must be positive");
    }
    let specs = load_specs(&a.file, &run_id, scale)?;
    let mut client = connect(&cfg, a.dispatcher.as_deref())?;
    client.hello(&run_id)?;
    let entries = client.submit(&run_id, &specs)?;
    let counts = tally(&entries);
    eprintln!("run {run_id}: {} tasks submitted {counts:?}", specs.len());
    if a.no_wait {
        print_json(&json!({ "run_id": run_id, "submitted": specs.len(), "status": counts }))?;
        return Ok(0);
    }
    if specs.is_empty() {
        print_json(&json!({ "run_id": run_id, "submitted": 0, "done": 0, "failed": 0, "complete": true }))?;
        return Ok(0);
    }
    wait_and_report(&mut client, &run_id, a.timeout)
}

pub fn resume(cfg: RunConfig, a: ResumeArgs) -> Result<i32> {
    let mut client = connect(&cfg, a.dispatcher.as_deref())?;
    client.hello(&a.run_id)?;
    let entries = client.resume(&a.run_id)?;
    eprintln!("run {}: resumed {:?}", a.run_id, tally(&entries));
    if a.no_wait {
        print_json(&json!({ "run_id": a.run_id, "status": tally(&entries) }))?;
        return Ok(0);
    }
    wait_and_report(&mut client, &a.run_id, a.timeout)
}

fn offline(cfg: &RunConfig, run_id: &str) -> Result<RunStatus> {
    let path = dispatch::runlog_path(&cfg.dispatcher.log_path, run_id);
    dispatch::offline_status(&path, run_id).with_context(|| format!("reading run log {}", path.display()))
}

pub fn status(cfg: RunConfig, a: StatusArgs) -> Result<i32> {
    if a.offline {
        let Some(run_id) = a.run_id.as_deref() else { bail!("--offline needs a run id") };
        print_json(&offline(&cfg, run_id)?)?;
        return Ok(0);
    }
    let mut client = connect(&cfg, a.dispatcher.as_deref())?;
    let st = client.status(a.run_id.as_deref().unwrap_or(""))?;
    print_json(&st)?;
    Ok(0)
}

pub fn stats(cfg: RunConfig, a: StatsArgs) -> Result<i32> {
    let run = offline(&cfg, &a.run_id)?;
    let Some(reference) = a.against.as_deref() else {
        print_json(&json!({ "run_id": run.run_id, "metrics": run.metrics }))?;
        return Ok(0);
    };
    let base = offline(&cfg, reference)?;
    let cores = a.cores.unwrap_or(run.metrics.cores);
    let ref_cores = a.ref_cores.unwrap_or(base.metrics.cores);
    let cmp = compare_runs(&base.metrics, ref_cores, &run.metrics, cores)?;
    print_json(&json!({
        "run_id": run.run_id,
        "metrics": run.metrics,
        "reference": { "run_id": base.run_id, "cores": ref_cores, "metrics": base.metrics },
        "cores": cores,
        "speedup": cmp.speedup,
        "efficiency": cmp.efficiency,
    }))?;
    Ok(0)
}
