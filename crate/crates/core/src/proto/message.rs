use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ProtoError;

/// 16-byte task identifier, rendered as 32 lowercase hex digits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct TaskId(pub [u8; 16]);

impl TaskId {
    pub fn random() -> Self {
        let mut b = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut b);
        TaskId(b)
    }

    /// Stable id for the `index`-th entry of a run, so resubmitting the same
    /// command file yields the same ids.
    pub fn derive(run_id: &str, index: u64, command: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update((run_id.len() as u32).to_le_bytes());
        h.update(run_id.as_bytes());
        h.update(index.to_le_bytes());
        h.update(command);
        let digest = h.finalize();
        let mut b = [0u8; 16];
        b.copy_from_slice(&digest[..16]);
        TaskId(b)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TaskId({})", self.to_hex())
    }
}

impl FromStr for TaskId {
    type Err = ProtoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v = hex::decode(s).map_err(|e| ProtoError::Malformed(format!("task id {s:?}: {e}")))?;
        let arr: [u8; 16] = v
            .try_into()
            .map_err(|_| ProtoError::Malformed(format!("task id {s:?} is not 16 bytes")))?;
        Ok(TaskId(arr))
    }
}

impl Serialize for TaskId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for TaskId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRef {
    pub name: String,
    pub source: String,
    /// Static across tasks; eligible for the worker cache.
    pub cacheable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRef {
    pub name: String,
    pub dest: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub id: TaskId,
    /// Executable and arguments, shell-quoted.
    pub command: Vec<u8>,
    pub payload: Vec<u8>,
    pub inputs: Vec<InputRef>,
    pub outputs: Vec<OutputRef>,
}

impl TaskSpec {
    pub fn new(id: TaskId, command: impl Into<Vec<u8>>) -> Self {
        TaskSpec {
            id,
            command: command.into(),
            payload: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ProtoError> {
        if self.command.is_empty() {
            return Err(ProtoError::Malformed(format!("task {} has an empty command", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    None,
    AppError,
    CommError,
    FailFast,
}

impl ErrorClass {
    pub fn code(self) -> u8 {
        match self {
            ErrorClass::None => 0,
            ErrorClass::AppError => 1,
            ErrorClass::CommError => 2,
            ErrorClass::FailFast => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => ErrorClass::None,
            1 => ErrorClass::AppError,
            2 => ErrorClass::CommError,
            3 => ErrorClass::FailFast,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskResult {
    pub task_id: TaskId,
    pub exit_code: i32,
    pub error_class: ErrorClass,
    pub worker_id: u64,
    /// Unix-epoch nanoseconds.
    pub dispatched: u64,
    pub started: u64,
    pub finished: u64,
    /// Free-form diagnostic, e.g. the tail of stderr.
    pub detail: String,
}

impl TaskResult {
    pub fn validate(&self) -> Result<(), ProtoError> {
        if (self.error_class == ErrorClass::None) != (self.exit_code == 0) {
            return Err(ProtoError::Malformed(format!(
                "result for {}: exit code {} with class {:?}",
                self.task_id, self.exit_code, self.error_class
            )));
        }
        if !(self.dispatched <= self.started && self.started <= self.finished) {
            return Err(ProtoError::Malformed(format!("result for {}: timestamps out of order", self.task_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchMode {
    Push,
    Pull,
}

impl FromStr for DispatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "push" => Ok(DispatchMode::Push),
            "pull" => Ok(DispatchMode::Pull),
            _ => Err(format!("unknown dispatch mode {s:?} (expected push or pull)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitStatus {
    Queued,
    /// Id already known to a live run and not complete.
    Duplicate,
    AlreadyComplete,
    Invalid,
}

impl SubmitStatus {
    pub fn code(self) -> u8 {
        match self {
            SubmitStatus::Queued => 0,
            SubmitStatus::Duplicate => 1,
            SubmitStatus::AlreadyComplete => 2,
            SubmitStatus::Invalid => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => SubmitStatus::Queued,
            1 => SubmitStatus::Duplicate,
            2 => SubmitStatus::AlreadyComplete,
            3 => SubmitStatus::Invalid,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Register = 0x01,
    TaskDispatch = 0x02,
    TaskBundle = 0x03,
    Result = 0x04,
    Heartbeat = 0x05,
    Suspend = 0x06,
    Shutdown = 0x07,
    Ack = 0x08,
    ClientHello = 0x10,
    Submit = 0x11,
    StatusQuery = 0x12,
    Status = 0x13,
    TaskRequest = 0x14,
    Resume = 0x15,
    SubmitReply = 0x16,
}

impl MessageKind {
    pub fn from_code(c: u8) -> Option<Self> {
        use MessageKind::*;
        Some(match c {
            0x01 => Register,
            0x02 => TaskDispatch,
            0x03 => TaskBundle,
            0x04 => Result,
            0x05 => Heartbeat,
            0x06 => Suspend,
            0x07 => Shutdown,
            0x08 => Ack,
            0x10 => ClientHello,
            0x11 => Submit,
            0x12 => StatusQuery,
            0x13 => Status,
            0x14 => TaskRequest,
            0x15 => Resume,
            0x16 => SubmitReply,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Register { cores: u32, mode: DispatchMode, prefetch: u32 },
    TaskDispatch(TaskSpec),
    TaskBundle(Vec<TaskSpec>),
    Result(TaskResult),
    /// Ids of the tasks currently executing on the sender.
    Heartbeat { running: Vec<TaskId> },
    Suspend,
    /// Dispatcher to worker: drain and exit. Worker to dispatcher: draining.
    Shutdown,
    Ack { status: u8, message: String },
    ClientHello { run_id: String },
    Submit { run_id: String, specs: Vec<TaskSpec> },
    StatusQuery { run_id: String },
    /// JSON document, see `dispatch::DispatcherStatus`.
    Status { json: String },
    TaskRequest { max_tasks: u32 },
    Resume { run_id: String },
    SubmitReply { entries: Vec<(TaskId, SubmitStatus)> },
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::Register { .. } => MessageKind::Register,
            Body::TaskDispatch(_) => MessageKind::TaskDispatch,
            Body::TaskBundle(_) => MessageKind::TaskBundle,
            Body::Result(_) => MessageKind::Result,
            Body::Heartbeat { .. } => MessageKind::Heartbeat,
            Body::Suspend => MessageKind::Suspend,
            Body::Shutdown => MessageKind::Shutdown,
            Body::Ack { .. } => MessageKind::Ack,
            Body::ClientHello { .. } => MessageKind::ClientHello,
            Body::Submit { .. } => MessageKind::Submit,
            Body::StatusQuery { .. } => MessageKind::StatusQuery,
            Body::Status { .. } => MessageKind::Status,
            Body::TaskRequest { .. } => MessageKind::TaskRequest,
            Body::Resume { .. } => MessageKind::Resume,
            Body::SubmitReply { .. } => MessageKind::SubmitReply,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub sender_id: u64,
    pub body: Body,
}

impl WireMessage {
    pub fn new(sender_id: u64, body: Body) -> Self {
        WireMessage { sender_id, body }
    }

    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }
}
