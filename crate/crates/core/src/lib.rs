//! Many-task execution: a wire protocol, a dispatcher service, worker
//! executors with a local input cache, and block-granular provisioning.

pub mod dispatch;
pub mod proto;
pub mod provision;
pub mod time;
pub mod worker;

pub use proto::{Body, DispatchMode, ErrorClass, TaskId, TaskResult, TaskSpec, WireMessage};
