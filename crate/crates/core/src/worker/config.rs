use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::proto::DispatchMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecBackend {
    /// Every task is a child process.
    Process,
    /// `sleep`, `true`, `false` and `exit` run inside the worker; anything
    /// else falls back to a child process.
    Builtin,
}

/// Deliberate failures for exercising the dispatcher's failure policy.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultInjection {
    /// The first N tasks fail with a stale-handle error.
    pub stale_handle_first: u32,
    /// Every Nth task reports a communication error (0 = never).
    pub comm_error_every: u32,
    /// Drop the connection once after this many results (0 = never).
    pub drop_connection_after: u32,
}

impl FaultInjection {
    pub fn is_active(&self) -> bool {
        *self != FaultInjection::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorConfig {
    pub dispatcher: String,
    /// 0 picks a random id.
    pub worker_id: u64,
    pub cores: u32,
    pub mode: DispatchMode,
    /// Local fast storage: `cache/` and `tasks/` live below it.
    pub scratch_dir: PathBuf,
    /// Bytes; 0 disables caching.
    pub cache_capacity: u64,
    /// Extra tasks requested ahead of free slots in pull mode.
    pub prefetch_depth: u32,
    pub exec: ExecBackend,
    pub task_timeout_ms: Option<u64>,
    pub heartbeat_interval_ms: u64,
    /// Give up connecting after this long; unset retries forever.
    pub connect_timeout_ms: Option<u64>,
    pub faults: FaultInjection,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            dispatcher: "127.0.0.1:7070".into(),
            worker_id: 0,
            cores: 1,
            mode: DispatchMode::Push,
            scratch_dir: std::env::temp_dir().join("manytask-scratch"),
            cache_capacity: 256 * 1024 * 1024,
            prefetch_depth: 0,
            exec: ExecBackend::Process,
            task_timeout_ms: None,
            heartbeat_interval_ms: 5000,
            connect_timeout_ms: None,
            faults: FaultInjection::default(),
        }
    }
}

impl ExecutorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.cores == 0 {
            return Err("cores must be >= 1".into());
        }
        if self.heartbeat_interval_ms == 0 {
            return Err("heartbeat_interval_ms must be positive".into());
        }
        if self.task_timeout_ms == Some(0) {
            return Err("task_timeout_ms must be positive when set".into());
        }
        Ok(())
    }
}
