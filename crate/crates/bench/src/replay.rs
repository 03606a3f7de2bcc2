//! Workload replay against a live system or the simulator, and per-slot
//! timeline export.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use manytask_core::dispatch::{Event, RunMetrics};
use manytask_core::proto::{InputRef, OutputRef, TaskSpec};
use manytask_core::worker::ExecBackend;
use manytask_model::{des_run_durations, SharedIo, SimConfig, SimResult};
use serde::Serialize;

use crate::error::{invalid_arg, BenchError, Result};
use crate::live::LiveSystem;
use crate::report::BenchReport;
use crate::trace::WorkloadTrace;

pub const DEFAULT_TIME_SCALE: f64 = 0.1;

pub enum ReplayTarget<'a> {
    /// Each entry sleeps for `duration * time_scale` on the running system.
    Live { system: &'a mut LiveSystem, time_scale: f64, timeout: Duration },
    Sim(SimOverrides),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimOverrides {
    pub processors: usize,
    pub dispatch_rate: f64,
    pub bundle_size: usize,
    pub per_task_latency: f64,
    pub shared_io: Option<SharedIo<f64>>,
}

impl SimOverrides {
    pub fn new(processors: usize, dispatch_rate: f64) -> Self {
        SimOverrides { processors, dispatch_rate, bundle_size: 1, per_task_latency: 0.0, shared_io: None }
    }
}

/// One task on one execution slot, seconds from the start of the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelineRow {
    pub slot: usize,
    pub task_id: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub report: BenchReport,
    pub metrics: RunMetrics,
    pub timeline: Vec<TimelineRow>,
    /// Present for simulator replays.
    pub sim: Option<SimResult<f64>>,
}

/// Whole-run summary of a simulation in the same shape the dispatcher reports.
pub fn sim_metrics(res: &SimResult<f64>, tasks: usize, processors: usize) -> RunMetrics {
    let mut m = RunMetrics {
        completed: tasks,
        makespan: res.makespan,
        busy: res.work,
        speedup: res.speedup,
        efficiency: res.efficiency,
        cores: processors as u64,
        ..Default::default()
    };
    if res.makespan > 0.0 {
        m.throughput = tasks as f64 / res.makespan;
    }
    m
}

fn empty_outcome(mut report: BenchReport) -> ReplayOutcome {
    report.notes.push("empty trace; nothing replayed".into());
    ReplayOutcome { report, metrics: RunMetrics::default(), timeline: Vec::new(), sim: None }
}

fn add_metrics(report: &mut BenchReport, m: &RunMetrics, mean_task: f64) {
    report.add_trial(
        "replay",
        0,
        [
            ("completed", m.completed as f64),
            ("failed", m.failed as f64),
            ("makespan", m.makespan),
            ("throughput", m.throughput),
            ("efficiency", m.efficiency),
            ("speedup", m.speedup),
            ("busy", m.busy),
            ("mean_task_time", mean_task),
        ],
    );
    report.summarize();
    report.derived.insert("efficiency".into(), m.efficiency);
    report.derived.insert("speedup".into(), m.speedup);
}

pub fn replay(trace: &WorkloadTrace, target: ReplayTarget<'_>) -> Result<ReplayOutcome> {
    let mut report = BenchReport::new(format!("replay_{}", trace.meta.kind));
    report.param("trace_kind", &trace.meta.kind).param("trace_params", &trace.meta.params);
    report.param("n", trace.entries.len()).param("seed", trace.meta.seed).param("fit", &trace.meta.fit);
    match target {
        ReplayTarget::Sim(o) => {
            report.param("target", "sim").param("sim", &o);
            if trace.entries.is_empty() {
                return Ok(empty_outcome(report));
            }
            let mut cfg = SimConfig::new(o.processors, trace.entries.len(), trace.as_dist(), o.dispatch_rate);
            cfg.bundle_size = o.bundle_size;
            cfg.per_task_latency = o.per_task_latency;
            cfg.shared_io = o.shared_io;
            cfg.record_tasks = true;
            let res = des_run_durations(&cfg, trace.durations())?;
            let metrics = sim_metrics(&res, trace.entries.len(), o.processors);
            add_metrics(&mut report, &metrics, res.mean_task_time);
            let mut timeline: Vec<TimelineRow> = res
                .tasks
                .iter()
                .map(|t| TimelineRow {
                    slot: t.processor,
                    task_id: trace.entries[t.index].task_id.to_hex(),
                    start: t.started,
                    end: t.finished,
                })
                .collect();
            sort_rows(&mut timeline);
            Ok(ReplayOutcome { report, metrics, timeline, sim: Some(res) })
        }
        ReplayTarget::Live { system, time_scale, timeout } => {
            if !(time_scale.is_finite() && time_scale > 0.0) {
                return Err(invalid_arg("time scale must be positive"));
            }
            report.param("target", "live").param("time_scale", time_scale);
            report.param("processors", system.processors());
            if trace.entries.is_empty() {
                return Ok(empty_outcome(report));
            }
            let run_id = format!("replay-{}-{:08x}", trace.meta.kind, rand::random::<u32>());
            let specs = live_specs(trace, &run_id, time_scale, system)?;
            let run = system.run(&run_id, &specs, timeout)?;
            if run.status.failed > 0 {
                report.invalidate(format!("{} tasks failed", run.status.failed));
            }
            let metrics = run.status.metrics.clone();
            let mean = if metrics.completed > 0 { metrics.busy / metrics.completed as f64 } else { 0.0 };
            add_metrics(&mut report, &metrics, mean);
            let names: HashMap<_, _> =
                specs.iter().zip(&trace.entries).map(|(s, e)| (s.id, e.task_id.to_hex())).collect();
            let mut timeline = timeline_from_events(&run.events);
            for row in &mut timeline {
                if let Some(n) = row.task_id.parse().ok().and_then(|id| names.get(&id)) {
                    row.task_id = n.clone();
                }
            }
            Ok(ReplayOutcome { report, metrics, timeline, sim: None })
        }
    }
}

/// Specs for a live replay. Entries with an I/O profile read a synthesized
/// private input and write a synthesized output, which needs the process
/// backend.
fn live_specs(trace: &WorkloadTrace, run_id: &str, time_scale: f64, system: &LiveSystem) -> Result<Vec<TaskSpec>> {
    let mut specs = trace.to_specs(run_id, time_scale);
    if trace.entries.iter().all(|e| e.io.read_bytes == 0 && e.io.write_bytes == 0) {
        return Ok(specs);
    }
    if system.config().backend != ExecBackend::Process {
        return Err(invalid_arg("replaying I/O profiles requires the process backend"));
    }
    let data: PathBuf = system.log_dir().join(format!("../replay-data/{run_id}"));
    fs::create_dir_all(data.join("out"))?;
    let mut inputs: BTreeMap<u64, PathBuf> = BTreeMap::new();
    for (spec, e) in specs.iter_mut().zip(&trace.entries) {
        let secs = e.duration * time_scale;
        let mut cmd = format!("sleep {secs:.6}");
        if e.io.read_bytes > 0 {
            let path = match inputs.get(&e.io.read_bytes) {
                Some(p) => p.clone(),
                None => {
                    let p = data.join(format!("in-{}", e.io.read_bytes));
                    let f = fs::File::create(&p)?;
                    f.set_len(e.io.read_bytes)?;
                    inputs.insert(e.io.read_bytes, p.clone());
                    p
                }
            };
            spec.inputs.push(InputRef { name: "in.dat".into(), source: path.display().to_string(), cacheable: false });
            cmd = format!("cat in.dat > /dev/null && {cmd}");
        }
        if e.io.write_bytes > 0 {
            cmd = format!("{cmd} && head -c {} /dev/zero > out.dat", e.io.write_bytes);
            let dest = data.join("out").join(format!("{}", e.index));
            spec.outputs.push(OutputRef { name: "out.dat".into(), dest: dest.display().to_string() });
        }
        spec.command = format!("sh -c {}", shell_quote(&cmd)).into_bytes();
    }
    Ok(specs)
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn sort_rows(rows: &mut [TimelineRow]) {
    rows.sort_by(|a, b| a.slot.cmp(&b.slot).then(a.start.total_cmp(&b.start)));
}

/// Rebuilds per-slot occupancy from run-log completions. Within a worker,
/// tasks are packed onto the lowest slot free at their start time, and
/// workers get consecutive slot ranges.
pub fn timeline_from_events(events: &[Event]) -> Vec<TimelineRow> {
    let mut per_worker: BTreeMap<u64, Vec<(u64, u64, String)>> = BTreeMap::new();
    for e in events {
        if let Event::Finished { task, worker, started, finished, .. } = e {
            per_worker.entry(*worker).or_default().push((*started, *finished, task.to_hex()));
        }
    }
    let origin = per_worker.values().flatten().map(|r| r.0).min().unwrap_or(0);
    let secs = |ns: u64| ns.saturating_sub(origin) as f64 * 1e-9;
    let mut rows = Vec::new();
    let mut base = 0;
    for (_, mut tasks) in per_worker {
        tasks.sort();
        let mut slot_end: Vec<u64> = Vec::new();
        for (start, end, id) in tasks {
            let k = match slot_end.iter().position(|&e| e <= start) {
                Some(k) => k,
                None => {
                    slot_end.push(0);
                    slot_end.len() - 1
                }
            };
            slot_end[k] = end;
            rows.push(TimelineRow { slot: base + k, task_id: id, start: secs(start), end: secs(end) });
        }
        base += slot_end.len();
    }
    sort_rows(&mut rows);
    rows
}

/// Gantt rows: `slot,task_id,start,end`.
pub fn export_timeline<W: Write>(rows: &[TimelineRow], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["slot", "task_id", "start", "end"])?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(BenchError::Io)
}

/// Number of running tasks after each change, as `(time, active)` steps.
pub fn active_series(rows: &[TimelineRow]) -> Vec<(f64, usize)> {
    let mut edges: Vec<(f64, i64)> = rows.iter().flat_map(|r| [(r.start, 1), (r.end, -1)]).collect();
    // ends sort before starts at the same instant
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<(f64, usize)> = Vec::new();
    let mut active = 0i64;
    for (t, d) in edges {
        active += d;
        match out.last_mut() {
            Some(last) if last.0 == t => last.1 = active as usize,
            _ => out.push((t, active as usize)),
        }
    }
    out
}

pub fn export_active_series<W: Write>(rows: &[TimelineRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time", "active"])?;
    for (t, a) in active_series(rows) {
        out.write_record([t.to_string(), a.to_string()])?;
    }
    out.flush().map_err(BenchError::Io)
}
