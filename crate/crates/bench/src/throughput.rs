//! Live throughput and efficiency benchmarks.

use std::time::Duration;

use manytask_core::proto::{DispatchMode, TaskId, TaskSpec};
use manytask_core::worker::ExecBackend;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::live::{LiveConfig, LiveRun, LiveSystem};
use crate::report::BenchReport;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThroughputParams {
    pub workers: usize,
    pub cores_per_worker: u32,
    pub n_tasks: usize,
    pub payload_sizes: Vec<usize>,
    pub bundle_sizes: Vec<usize>,
    pub trials: u32,
    pub backend: ExecBackend,
    pub mode: DispatchMode,
    pub command: String,
    pub timeout_s: u64,
}

impl Default for ThroughputParams {
    fn default() -> Self {
        ThroughputParams {
            workers: 16,
            cores_per_worker: 1,
            n_tasks: 100_000,
            payload_sizes: vec![10],
            bundle_sizes: vec![1],
            trials: 1,
            backend: ExecBackend::Builtin,
            mode: DispatchMode::Push,
            command: "sleep 0".into(),
            timeout_s: 600,
        }
    }
}

pub fn throughput_point(bundle: usize, payload: usize) -> String {
    format!("bundle={bundle},payload={payload}")
}

fn run_id(name: &str, point: &str, trial: u32) -> String {
    let clean: String = point.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect();
    format!("{name}-{clean}-{trial}-{:08x}", rand::random::<u32>())
}

fn record(report: &mut BenchReport, run: &LiveRun, expected: usize) {
    if run.status.failed > 0 || run.status.done != expected {
        report.invalidate(format!(
            "run {}: {} done, {} failed of {expected}",
            run.status.run_id, run.status.done, run.status.failed
        ));
    }
}

/// Sustained completions per second, measured from the dispatcher's run log.
pub fn throughput_bench(params: &ThroughputParams) -> Result<BenchReport> {
    if params.workers == 0 || params.cores_per_worker == 0 || params.trials == 0 {
        return Err(invalid_arg("workers, cores and trials must be positive"));
    }
    let mut report = BenchReport::new("throughput");
    report.param("workers", params.workers).param("cores_per_worker", params.cores_per_worker);
    report.param("n_tasks", params.n_tasks).param("payload_sizes", &params.payload_sizes);
    report.param("bundle_sizes", &params.bundle_sizes).param("backend", params.backend);
    report.param("mode", params.mode).param("command", &params.command);
    if params.n_tasks == 0 {
        report.notes.push("no tasks requested; nothing dispatched".into());
        return Ok(report);
    }
    for &bundle in &params.bundle_sizes {
        let mut sys = LiveSystem::start(LiveConfig {
            workers: params.workers,
            cores_per_worker: params.cores_per_worker,
            bundle_size: bundle,
            mode: params.mode,
            backend: params.backend,
            ..Default::default()
        })?;
        for &payload in &params.payload_sizes {
            let point = throughput_point(bundle, payload);
            for trial in 0..params.trials {
                let id = run_id("tp", &point, trial);
                let specs: Vec<TaskSpec> = (0..params.n_tasks)
                    .map(|i| {
                        let mut s = TaskSpec::new(TaskId::derive(&id, i as u64, params.command.as_bytes()), params.command.as_str());
                        s.payload = vec![b'x'; payload];
                        s
                    })
                    .collect();
                let run = sys.run(&id, &specs, Duration::from_secs(params.timeout_s))?;
                record(&mut report, &run, params.n_tasks);
                let m = &run.status.metrics;
                log::info!("{point} trial {trial}: {:.0} tasks/s", m.throughput);
                report.add_trial(
                    point.clone(),
                    trial,
                    [
                        ("throughput", m.throughput),
                        ("instant_throughput", m.instant_throughput),
                        ("makespan", m.makespan),
                        ("completed", m.completed as f64),
                        ("failed", run.status.failed as f64),
                        ("client_elapsed", run.client_elapsed.as_secs_f64()),
                    ],
                );
            }
        }
        sys.shutdown();
    }
    report.summarize();
    for p in report.points() {
        if let Some(v) = report.mean(&p, "throughput") {
            report.derived.insert(format!("throughput[{p}]"), v);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfficiencyParams {
    pub workers: usize,
    pub cores_per_worker: u32,
    pub task_lengths: Vec<f64>,
    /// Tasks per point, as a multiple of the processor count.
    pub waves: usize,
    pub trials: u32,
    pub bundle_size: usize,
    pub backend: ExecBackend,
    pub timeout_s: u64,
}

impl Default for EfficiencyParams {
    fn default() -> Self {
        EfficiencyParams {
            workers: 64,
            cores_per_worker: 1,
            task_lengths: vec![0.1, 0.5, 1.0, 2.0, 4.0],
            waves: 4,
            trials: 1,
            bundle_size: 1,
            backend: ExecBackend::Builtin,
            timeout_s: 600,
        }
    }
}

pub fn efficiency_point(t: f64) -> String {
    format!("t={t}")
}

/// Efficiency `n*t / (P*makespan)` of sleep-`t` workloads.
pub fn efficiency_bench(params: &EfficiencyParams) -> Result<BenchReport> {
    if params.task_lengths.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(invalid_arg("task lengths must be positive"));
    }
    if params.workers == 0 || params.cores_per_worker == 0 || params.waves == 0 || params.trials == 0 {
        return Err(invalid_arg("workers, cores, waves and trials must be positive"));
    }
    let mut report = BenchReport::new("efficiency");
    report.param("workers", params.workers).param("cores_per_worker", params.cores_per_worker);
    report.param("task_lengths", &params.task_lengths).param("waves", params.waves);
    report.param("bundle_size", params.bundle_size).param("backend", params.backend);
    let mut sys = LiveSystem::start(LiveConfig {
        workers: params.workers,
        cores_per_worker: params.cores_per_worker,
        bundle_size: params.bundle_size,
        backend: params.backend,
        ..Default::default()
    })?;
    let procs = sys.processors();
    let n = procs * params.waves;
    report.param("processors", procs).param("tasks_per_point", n);
    for &t in &params.task_lengths {
        let point = efficiency_point(t);
        let cmd = format!("sleep {t}");
        for trial in 0..params.trials {
            let id = run_id("eff", &point, trial);
            let specs: Vec<TaskSpec> =
                (0..n).map(|i| TaskSpec::new(TaskId::derive(&id, i as u64, cmd.as_bytes()), cmd.as_str())).collect();
            let run = sys.run(&id, &specs, Duration::from_secs(params.timeout_s))?;
            record(&mut report, &run, n);
            let m = &run.status.metrics;
            let eff = if m.makespan > 0.0 { n as f64 * t / (procs as f64 * m.makespan) } else { 0.0 };
            log::info!("{point} trial {trial}: efficiency {eff:.3}");
            report.add_trial(
                point.clone(),
                trial,
                [
                    ("efficiency", eff),
                    ("measured_efficiency", m.efficiency),
                    ("makespan", m.makespan),
                    ("throughput", m.throughput),
                ],
            );
        }
    }
    sys.shutdown();
    report.summarize();
    for &t in &params.task_lengths {
        let p = efficiency_point(t);
        if let Some(v) = report.mean(&p, "efficiency") {
            report.derived.insert(format!("efficiency[{p}]"), v);
        }
    }
    Ok(report)
}
