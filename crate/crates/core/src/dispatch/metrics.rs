use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::runlog::Event;
use crate::proto::TaskId;
use crate::time::ns_to_secs;

/// Window for instantaneous throughput, ending at the most recent completion.
pub const INSTANT_WINDOW_NS: u64 = 1_000_000_000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub completed: usize,
    pub failed: usize,
    /// First dispatch to last successful completion, seconds.
    pub makespan: f64,
    /// Completions per second over the makespan.
    pub throughput: f64,
    /// Completions per second over the last second of the run.
    pub instant_throughput: f64,
    /// Sum of task execution times, seconds.
    pub busy: f64,
    pub speedup: f64,
    pub efficiency: f64,
    pub cores: u64,
    pub first_dispatch_ns: Option<u64>,
    pub last_finish_ns: Option<u64>,
}

/// Folds run-log events into [`RunMetrics`]. The dispatcher feeds it as it
/// logs, and replay feeds it from disk, so both views agree.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    first_dispatch: Option<u64>,
    last_finish: Option<u64>,
    completed: HashSet<TaskId>,
    failed: HashSet<TaskId>,
    busy_ns: u128,
    cores: HashMap<u64, u32>,
    window: VecDeque<u64>,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a Event>) -> Self {
        let mut m = Self::new();
        for e in events {
            m.observe(e);
        }
        m
    }

    pub fn observe(&mut self, event: &Event) {
        match *event {
            Event::WorkerRegistered { worker, cores, .. } => {
                self.cores.insert(worker, cores);
            }
            Event::Dispatched { t, .. } => {
                self.first_dispatch = Some(self.first_dispatch.map_or(t, |f| f.min(t)));
            }
            Event::Finished { t, task, started, finished, .. } => {
                if !self.completed.insert(task) {
                    return;
                }
                self.failed.remove(&task);
                self.busy_ns += finished.saturating_sub(started) as u128;
                let last = self.last_finish.map_or(t, |l| l.max(t));
                self.last_finish = Some(last);
                self.window.push_back(t);
                while let Some(&front) = self.window.front() {
                    if front + INSTANT_WINDOW_NS <= last {
                        self.window.pop_front();
                    } else {
                        break;
                    }
                }
            }
            Event::FailedAttempt { task, permanent: true, .. } => {
                if !self.completed.contains(&task) {
                    self.failed.insert(task);
                }
            }
            Event::Resumed { .. } => self.failed.clear(),
            _ => {}
        }
    }

    pub fn metrics(&self) -> RunMetrics {
        let cores: u64 = self.cores.values().map(|&c| c as u64).sum();
        let completed = self.completed.len();
        let mut m = RunMetrics {
            completed,
            failed: self.failed.len(),
            busy: self.busy_ns as f64 * 1e-9,
            cores,
            first_dispatch_ns: self.first_dispatch,
            last_finish_ns: self.last_finish,
            ..Default::default()
        };
        if let (Some(first), Some(last)) = (self.first_dispatch, self.last_finish) {
            m.makespan = ns_to_secs(last.saturating_sub(first));
        }
        if completed > 0 && m.makespan > 0.0 {
            m.throughput = completed as f64 / m.makespan;
            m.speedup = m.busy / m.makespan;
            if cores > 0 {
                m.efficiency = m.speedup / cores as f64;
            }
            let span = INSTANT_WINDOW_NS.min(self.last_finish.unwrap_or(0).saturating_sub(self.first_dispatch.unwrap_or(0)));
            if span > 0 {
                m.instant_throughput = self.window.len() as f64 / ns_to_secs(span);
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid comparison: {0}")]
pub struct InvalidComparison(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub speedup: f64,
    pub efficiency: f64,
}

/// Speedup of `big` relative to `reference`, scaled by the reference core
/// count: `P_ref * makespan_ref / makespan_big`. Both runs must have executed
/// the same number of tasks.
pub fn compare_runs(
    reference: &RunMetrics,
    ref_cores: u64,
    big: &RunMetrics,
    big_cores: u64,
) -> Result<Comparison, InvalidComparison> {
    if ref_cores == 0 || big_cores == 0 {
        return Err(InvalidComparison("core counts must be positive".into()));
    }
    if reference.completed != big.completed {
        return Err(InvalidComparison(format!(
            "workloads differ: {} vs {} completed tasks",
            reference.completed, big.completed
        )));
    }
    if !(reference.makespan > 0.0 && big.makespan > 0.0) {
        return Err(InvalidComparison("makespans must be positive".into()));
    }
    let speedup = ref_cores as f64 * reference.makespan / big.makespan;
    Ok(Comparison { speedup, efficiency: speedup / big_cores as f64 })
}
