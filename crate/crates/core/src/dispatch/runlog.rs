//! Append-only run log: one JSON object per line. The first line is a
//! header `{"format":"manytask-runlog","version":1,...}`; every following
//! line is an [`Event`]. A partial final line (crash mid-write) is ignored
//! on read and trimmed before appending.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::proto::{ErrorClass, InputRef, OutputRef, TaskId, TaskResult, TaskSpec};

pub const FORMAT: &str = "manytask-runlog";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub run_id: String,
    pub created: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureAction {
    RetrySameQueue,
    PropagateToClient,
    SuspendWorkerAndRetry,
}

/// Task description as stored in the log; byte fields are base64.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecRecord {
    pub command: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub payload: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<InputRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<OutputRef>,
}

impl SpecRecord {
    pub fn from_spec(s: &TaskSpec) -> Self {
        SpecRecord {
            command: B64.encode(&s.command),
            payload: B64.encode(&s.payload),
            inputs: s.inputs.clone(),
            outputs: s.outputs.clone(),
        }
    }

    pub fn to_spec(&self, id: TaskId) -> io::Result<TaskSpec> {
        let dec = |s: &str| B64.decode(s).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e));
        Ok(TaskSpec {
            id,
            command: dec(&self.command)?,
            payload: dec(&self.payload)?,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
        })
    }
}

/// Timestamps are Unix-epoch nanoseconds. `t` is dispatcher time except for
/// `Started`, which carries the worker-reported start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    WorkerRegistered { t: u64, worker: u64, cores: u32 },
    Submitted { t: u64, task: TaskId, spec: SpecRecord },
    Dispatched { t: u64, task: TaskId, worker: u64, attempt: u32 },
    Started { t: u64, task: TaskId, worker: u64 },
    Finished { t: u64, task: TaskId, worker: u64, started: u64, finished: u64 },
    FailedAttempt {
        t: u64,
        task: TaskId,
        worker: u64,
        exit_code: i32,
        error_class: ErrorClass,
        action: FailureAction,
        permanent: bool,
        #[serde(default, skip_serializing_if = "String::is_empty")]
        detail: String,
    },
    WorkerSuspended { t: u64, worker: u64, consecutive_failures: u32 },
    WorkerLost { t: u64, worker: u64, requeued: usize },
    Resumed { t: u64, requeued: usize },
}

impl Event {
    pub fn time(&self) -> u64 {
        match self {
            Event::WorkerRegistered { t, .. }
            | Event::Submitted { t, .. }
            | Event::Dispatched { t, .. }
            | Event::Started { t, .. }
            | Event::Finished { t, .. }
            | Event::FailedAttempt { t, .. }
            | Event::WorkerSuspended { t, .. }
            | Event::WorkerLost { t, .. }
            | Event::Resumed { t, .. } => *t,
        }
    }
}

pub fn runlog_path(log_dir: &Path, run_id: &str) -> PathBuf {
    log_dir.join(format!("{run_id}.runlog"))
}

pub struct RunLogWriter {
    out: BufWriter<File>,
    line: Vec<u8>,
    pending: usize,
}

impl RunLogWriter {
    /// Opens `path` for appending, writing a header if the file is new and
    /// dropping any partial final line left by a crash.
    pub fn open(path: &Path, run_id: &str, now: u64) -> io::Result<Self> {
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path)?;
        let len = file.metadata()?.len();
        if len == 0 {
            let header = Header { format: FORMAT.into(), version: VERSION, run_id: run_id.into(), created: now };
            let mut line = serde_json::to_vec(&header)?;
            line.push(b'\n');
            file.write_all(&line)?;
        } else {
            let keep = complete_prefix_len(&mut file, len)?;
            if keep < len {
                log::warn!("{}: dropping {} bytes of partial final line", path.display(), len - keep);
                file.set_len(keep)?;
            }
            file.seek(SeekFrom::End(0))?;
        }
        Ok(RunLogWriter { out: BufWriter::with_capacity(256 * 1024, file), line: Vec::with_capacity(256), pending: 0 })
    }

    pub fn append(&mut self, event: &Event) -> io::Result<()> {
        self.line.clear();
        serde_json::to_writer(&mut self.line, event)?;
        self.line.push(b'\n');
        self.out.write_all(&self.line)?;
        self.pending += 1;
        Ok(())
    }

    pub fn pending(&self) -> usize {
        self.pending
    }

    pub fn flush(&mut self) -> io::Result<()> {
        if self.pending > 0 {
            self.out.flush()?;
            self.pending = 0;
        }
        Ok(())
    }
}

impl Drop for RunLogWriter {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

/// Length of the file up to and including its last newline.
fn complete_prefix_len(file: &mut File, len: u64) -> io::Result<u64> {
    let mut pos = len;
    let mut buf = [0u8; 4096];
    while pos > 0 {
        let n = buf.len().min(pos as usize);
        pos -= n as u64;
        file.seek(SeekFrom::Start(pos))?;
        file.read_exact(&mut buf[..n])?;
        if let Some(i) = buf[..n].iter().rposition(|&b| b == b'\n') {
            return Ok(pos + i as u64 + 1);
        }
    }
    Ok(0)
}

#[derive(Debug, Clone)]
pub struct RunLogContents {
    pub header: Header,
    pub events: Vec<Event>,
    /// A partial final line was skipped.
    pub truncated: bool,
}

pub fn read_runlog(path: &Path) -> io::Result<RunLogContents> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.split(b'\n').peekable();
    let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {msg}", path.display()));
    let first = lines.next().ok_or_else(|| bad("empty run log".into()))??;
    let header: Header = serde_json::from_slice(&first).map_err(|e| bad(format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(bad(format!("not a run log (format {:?})", header.format)));
    }
    if header.version != VERSION {
        return Err(bad(format!("unsupported run log version {}", header.version)));
    }
    let mut events = Vec::new();
    let mut truncated = false;
    let mut lineno = 1;
    while let Some(line) = lines.next() {
        let line = line?;
        lineno += 1;
        if line.is_empty() {
            continue;
        }
        match serde_json::from_slice::<Event>(&line) {
            Ok(ev) => events.push(ev),
            Err(_) if lines.peek().is_none() => truncated = true,
            Err(e) => return Err(bad(format!("line {lineno}: {e}"))),
        }
    }
    Ok(RunLogContents { header, events, truncated })
}

/// State of a run reconstructed from its log.
#[derive(Debug, Clone, Default)]
pub struct Replay {
    /// Submitted tasks in first-submission order.
    pub specs: Vec<TaskSpec>,
    /// Successful results, keyed by task.
    pub done: HashMap<TaskId, TaskResult>,
    /// Tasks whose last outcome was a permanent failure.
    pub failed: HashSet<TaskId>,
}

impl Replay {
    pub fn from_events(events: &[Event]) -> io::Result<Self> {
        let mut r = Replay::default();
        let mut seen = HashSet::new();
        let mut dispatched_at: HashMap<TaskId, u64> = HashMap::new();
        for ev in events {
            match ev {
                Event::Submitted { task, spec, .. } => {
                    if seen.insert(*task) {
                        r.specs.push(spec.to_spec(*task)?);
                    }
                }
                Event::Dispatched { t, task, .. } => {
                    dispatched_at.insert(*task, *t);
                }
                Event::Finished { task, worker, started, finished, .. } => {
                    r.failed.remove(task);
                    let dispatched = dispatched_at.get(task).copied().unwrap_or(*started).min(*started);
                    r.done.entry(*task).or_insert(TaskResult {
                        task_id: *task,
                        exit_code: 0,
                        error_class: ErrorClass::None,
                        worker_id: *worker,
                        dispatched,
                        started: *started,
                        finished: *finished,
                        detail: String::new(),
                    });
                }
                Event::FailedAttempt { task, permanent: true, .. } => {
                    if !r.done.contains_key(task) {
                        r.failed.insert(*task);
                    }
                }
                Event::Resumed { .. } => r.failed.clear(),
                _ => {}
            }
        }
        Ok(r)
    }

    pub fn is_done(&self, id: &TaskId) -> bool {
        self.done.contains_key(id)
    }

    /// Submitted tasks that have not completed successfully, in order.
    pub fn remaining(&self) -> impl Iterator<Item = &TaskSpec> {
        self.specs.iter().filter(|s| !self.done.contains_key(&s.id))
    }
}
