//! The dispatcher: queues submitted tasks, assigns them to workers over
//! persistent connections, applies the failure policy and records every
//! transition in a per-run log that can rebuild the run after a crash.

mod client;
mod metrics;
mod runlog;
mod scheduler;
mod service;

pub use client::Client;
pub use metrics::{compare_runs, Comparison, InvalidComparison, MetricsAccumulator, RunMetrics, INSTANT_WINDOW_NS};
pub use runlog::{
    read_runlog, runlog_path, Event, FailureAction, Header, Replay, RunLogContents, RunLogWriter, SpecRecord, FORMAT,
    VERSION,
};
pub use scheduler::{
    DispatcherStatus, Output, RunId, RunState, RunStatus, Scheduler, SchedulerConfig, TaskRecord, TaskState,
    WorkerId, WorkerInfo, WorkerState, WorkerStatus,
};
pub use service::{offline_status, start, DispatcherConfig, DispatcherHandle, Stopper, ACK_SUPERSEDED};

/// Run ids name log files, so they are restricted to `[A-Za-z0-9._-]{1,64}`
/// and may not start with a dot.
pub fn validate_run_id(id: &str) -> Result<(), String> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && !id.starts_with('.')
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'));
    if ok {
        Ok(())
    } else {
        Err(format!("invalid run id {id:?}: use 1-64 characters from [A-Za-z0-9._-], not starting with '.'"))
    }
}
