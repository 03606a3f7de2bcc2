//! Task executor: registers with a dispatcher, stages inputs through a
//! scratch cache and runs tasks on a fixed number of slots.

pub mod cache;
pub mod config;
pub mod exec;
pub mod session;

pub use cache::{Cache, CacheEntry, CacheError, Staged};
pub use config::{ExecBackend, ExecutorConfig, FaultInjection};
pub use exec::{exit, Executor};
pub use session::{run, spawn, WorkerControl, WorkerHandle, WorkerSummary};
