//! Benchmark and trace-generation commands.

use std::path::PathBuf;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use manytask_bench::{
    efficiency_bench, export_active_series, export_timeline, fs_bench, generate_trace, replay, throughput_bench,
    BenchReport, EfficiencyParams, FsMode, FsParams, LiveConfig, LiveSystem, ReplayTarget, SimOverrides,
    ThroughputParams, TraceParams, WorkloadTrace,
};
use manytask_core::worker::ExecBackend;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{BenchArgs, TraceArgs};
use crate::config::RunConfig;
use crate::{ensure_dir, print_json, EXIT_INCOMPLETE};

/// Applies `key=value` overrides to the serialized form of `base`. Values
/// are parsed as TOML, falling back to a bare string.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, sets: &[String]) -> Result<T> {
    let mut table = toml::Table::try_from(base)?;
    for s in sets {
        let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("expected KEY=VALUE, got {s:?}"))?;
        let value = match format!("v = {v}").parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(v.to_string()),
        };
        table.insert(k.trim().to_string(), value);
    }
    table.try_into().context("invalid parameters")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayParams {
    /// Trace file; generated from `kind`, `n` and `seed` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    pub kind: String,
    pub n: usize,
    pub seed: u64,
    /// `sim` or `live`.
    pub target: String,
    pub processors: usize,
    pub dispatch_rate: f64,
    pub bundle_size: usize,
    pub per_task_latency: f64,
    /// Live target: local workers, and the duration multiplier.
    pub workers: usize,
    pub time_scale: f64,
    pub backend: ExecBackend,
    pub timeout_s: f64,
}

fn replay_defaults(cfg: &RunConfig) -> ReplayParams {
    ReplayParams {
        trace: None,
        kind: "dock".into(),
        n: 1000,
        seed: cfg.bench.seed,
        target: "sim".into(),
        processors: 64,
        dispatch_rate: 1000.0,
        bundle_size: 1,
        per_task_latency: 0.0,
        workers: 16,
        time_scale: cfg.bench.time_scale,
        backend: ExecBackend::Builtin,
        timeout_s: 3600.0,
    }
}

fn finish(report: &BenchReport, out: &std::path::Path, extra: serde_json::Value) -> Result<i32> {
    ensure_dir(out)?;
    let (csv, json_path) = report.write(out)?;
    eprintln!("{}: wrote {} and {}", report.name, csv.display(), json_path.display());
    for n in &report.notes {
        eprintln!("note: {n}");
    }
    print_json(&json!({
        "benchmark": report.name,
        "valid": report.valid,
        "csv": csv,
        "json": json_path,
        "derived": report.derived,
        "extra": extra,
    }))?;
    Ok(if report.valid { 0 } else { EXIT_INCOMPLETE })
}

pub fn bench(cfg: RunConfig, a: BenchArgs) -> Result<i32> {
    let out = a.out.clone().unwrap_or_else(|| cfg.bench.out_dir.clone());
    match a.name.as_str() {
        "throughput" => {
            let p: ThroughputParams = overlay(&ThroughputParams::default(), &a.set)?;
            finish(&throughput_bench(&p)?, &out, json!(null))
        }
        "efficiency" => {
            let p: EfficiencyParams = overlay(&EfficiencyParams::default(), &a.set)?;
            finish(&efficiency_bench(&p)?, &out, json!(null))
        }
        "fs" => {
            let base = FsParams {
                mode: FsMode::Read,
                procs: vec![1, 2, 4, 8],
                data_sizes: vec![1 << 10, 1 << 14, 1 << 17, 1 << 20, 1 << 23],
                ops_per_actor: 20,
                trials: 3,
                target_dir: std::env::current_dir()?,
            };
            let p: FsParams = overlay(&base, &a.set)?;
            finish(&fs_bench(&p)?, &out, json!(null))
        }
        "replay" => {
            let p: ReplayParams = overlay(&replay_defaults(&cfg), &a.set)?;
            let trace = match &p.trace {
                Some(path) => WorkloadTrace::read_jsonl(path)?,
                None => generate_trace(&TraceParams::default_for(&p.kind)?, p.n, p.seed)?,
            };
            let outcome = match p.target.as_str() {
                "sim" => replay(
                    &trace,
                    ReplayTarget::Sim(SimOverrides {
                        processors: p.processors,
                        dispatch_rate: p.dispatch_rate,
                        bundle_size: p.bundle_size,
                        per_task_latency: p.per_task_latency,
                        shared_io: None,
                    }),
                )?,
                "live" => {
                    let mut sys = LiveSystem::start(LiveConfig {
                        workers: p.workers,
                        bundle_size: p.bundle_size,
                        backend: p.backend,
                        ..Default::default()
                    })?;
                    let r = replay(
                        &trace,
                        ReplayTarget::Live {
                            system: &mut sys,
                            time_scale: p.time_scale,
                            timeout: Duration::from_secs_f64(p.timeout_s),
                        },
                    );
                    sys.shutdown();
                    r?
                }
                other => bail!("unknown replay target {other:?} (sim, live)"),
            };
            ensure_dir(&out)?;
            let timeline = out.join(format!("{}_timeline.csv", outcome.report.name));
            let active = out.join(format!("{}_active.csv", outcome.report.name));
            export_timeline(&outcome.timeline, std::fs::File::create(&timeline)?)?;
            export_active_series(&outcome.timeline, std::fs::File::create(&active)?)?;
            finish(&outcome.report, &out, json!({ "timeline": timeline, "active": active, "metrics": outcome.metrics }))
        }
        other => bail!("unknown benchmark {other:?} (throughput, efficiency, fs, replay)"),
    }
}

pub fn trace(a: TraceArgs) -> Result<i32> {
    let params: TraceParams = overlay(&TraceParams::default_for(&a.kind)?, &a.set)?;
    let t = generate_trace(&params, a.n, a.seed)?;
    t.write_jsonl(&a.out)?;
    eprintln!("{} {} tasks, mean {:.3}s, sd {:.3}s", a.kind, t.entries.len(), t.mean(), t.sd());
    print_json(&json!({
        "path": a.out,
        "kind": t.meta.kind,
        "n": t.entries.len(),
        "seed": t.meta.seed,
        "mean": t.mean(),
        "sd": t.sd(),
        "micro_tasks": t.micro_tasks(),
    }))?;
    Ok(0)
}
