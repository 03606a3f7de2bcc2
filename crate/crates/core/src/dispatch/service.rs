//! TCP front end for the [`Scheduler`].
//!
//! Threads: one acceptor, a reader and a writer per connection, and a single
//! core thread that owns the scheduler and the run logs. Readers forward
//! decoded frames in batches; the core applies a whole batch, dispatches
//! once, then hands outgoing frames to the writers.

use std::collections::HashMap;
use std::io::{self, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use serde::{Deserialize, Serialize};

use super::runlog::{read_runlog, runlog_path, Replay, RunLogWriter};
use super::scheduler::{DispatcherStatus, Output, RunId, RunStatus, Scheduler, SchedulerConfig, WorkerId};
use super::metrics::MetricsAccumulator;
use super::validate_run_id;
use crate::proto::{encode_frame_into, Body, DispatchMode, FrameReader, SubmitStatus, TaskId, WireMessage, DEFAULT_MAX_FRAME};
use crate::time::now_ns;

/// Ack status telling a worker session it was replaced by a newer
/// registration under the same id.
pub const ACK_SUPERSEDED: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DispatcherConfig {
    pub address: String,
    /// Restrict workers to one mode; unset accepts both.
    pub mode: Option<DispatchMode>,
    pub bundle_size: usize,
    pub max_retries: u32,
    pub suspend_threshold: u32,
    pub failfast_patterns: Vec<String>,
    /// Directory holding one `<run_id>.runlog` per run.
    pub log_dir: PathBuf,
    pub heartbeat_interval_ms: u64,
    pub heartbeat_misses: u32,
    pub flush_events: usize,
    pub flush_interval_ms: u64,
    pub max_frame: usize,
}

impl Default for DispatcherConfig {
    fn default() -> Self {
        let sched = SchedulerConfig::default();
        DispatcherConfig {
            address: "127.0.0.1:7070".into(),
            mode: None,
            bundle_size: sched.bundle_size,
            max_retries: sched.max_retries,
            suspend_threshold: sched.suspend_threshold,
            failfast_patterns: sched.failfast_patterns,
            log_dir: PathBuf::from("runlogs"),
            heartbeat_interval_ms: 5000,
            heartbeat_misses: 3,
            flush_events: 100,
            flush_interval_ms: 10,
            max_frame: DEFAULT_MAX_FRAME,
        }
    }
}

impl DispatcherConfig {
    pub fn scheduler_config(&self) -> SchedulerConfig {
        SchedulerConfig {
            mode: self.mode,
            bundle_size: self.bundle_size,
            max_retries: self.max_retries,
            suspend_threshold: self.suspend_threshold,
            failfast_patterns: self.failfast_patterns.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.bundle_size == 0 {
            return Err("bundle_size must be >= 1".into());
        }
        if self.suspend_threshold == 0 {
            return Err("suspend_threshold must be >= 1".into());
        }
        if self.heartbeat_interval_ms == 0 || self.heartbeat_misses == 0 {
            return Err("heartbeat interval and misses must be positive".into());
        }
        if self.flush_events == 0 {
            return Err("flush_events must be >= 1".into());
        }
        Ok(())
    }
}

type ConnId = u64;

enum Outbound {
    Frame(WireMessage),
    Close,
}

enum CoreMsg {
    Open { conn: ConnId, tx: Sender<Outbound>, stream: TcpStream },
    Frames { conn: ConnId, msgs: Vec<WireMessage> },
    Closed { conn: ConnId },
    /// Undecodable input; answered with an error ack, then closed.
    Malformed { conn: ConnId, why: String },
    Stop,
}

#[derive(PartialEq, Eq)]
enum Role {
    Unknown,
    Worker(WorkerId),
    Client,
}

struct Conn {
    tx: Sender<Outbound>,
    stream: TcpStream,
    role: Role,
    last_seen: Instant,
}

pub struct DispatcherHandle {
    addr: SocketAddr,
    core_tx: Sender<CoreMsg>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    core: Option<JoinHandle<()>>,
}

impl DispatcherHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, flushes every run log and closes all connections.
    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    /// Blocks until a [`Stopper`] stops the dispatcher.
    pub fn join(mut self) {
        if let Some(c) = self.core.take() {
            let _ = c.join();
        }
        self.stop_threads();
    }

    pub fn stopper(&self) -> Stopper {
        Stopper { core_tx: self.core_tx.clone(), stop: self.stop.clone(), addr: self.addr }
    }

    fn stop_threads(&mut self) {
        self.stopper().stop();
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        if let Some(c) = self.core.take() {
            let _ = c.join();
        }
    }
}

impl Drop for DispatcherHandle {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

/// Cloneable stop trigger, usable from a signal-handling thread.
#[derive(Clone)]
pub struct Stopper {
    core_tx: Sender<CoreMsg>,
    stop: Arc<AtomicBool>,
    addr: SocketAddr,
}

impl Stopper {
    pub fn stop(&self) {
        if !self.stop.swap(true, Ordering::SeqCst) {
            let _ = self.core_tx.send(CoreMsg::Stop);
            // wake the acceptor
            let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        }
    }
}

pub fn start(cfg: DispatcherConfig) -> io::Result<DispatcherHandle> {
    cfg.validate().map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    std::fs::create_dir_all(&cfg.log_dir)?;
    let listener = TcpListener::bind(&cfg.address)?;
    let addr = listener.local_addr()?;
    let (core_tx, core_rx) = unbounded();
    let stop = Arc::new(AtomicBool::new(false));

    let acceptor = {
        let core_tx = core_tx.clone();
        let stop = stop.clone();
        let max_frame = cfg.max_frame;
        thread::Builder::new().name("mt-accept".into()).spawn(move || accept_loop(listener, core_tx, stop, max_frame))?
    };
    let core = {
        let stop = stop.clone();
        thread::Builder::new().name("mt-core".into()).spawn(move || {
            let mut core = Core::new(cfg);
            core.run(core_rx);
            stop.store(true, Ordering::SeqCst);
        })?
    };
    log::info!("dispatcher listening on {addr}");
    Ok(DispatcherHandle { addr, core_tx, stop, acceptor: Some(acceptor), core: Some(core) })
}

fn accept_loop(listener: TcpListener, core_tx: Sender<CoreMsg>, stop: Arc<AtomicBool>, max_frame: usize) {
    let mut next_conn: ConnId = 1;
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(10));
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        let conn = next_conn;
        next_conn += 1;
        if let Err(e) = spawn_conn(conn, stream, &core_tx, max_frame) {
            log::warn!("connection {conn} setup failed: {e}");
        }
    }
}

fn spawn_conn(conn: ConnId, stream: TcpStream, core_tx: &Sender<CoreMsg>, max_frame: usize) -> io::Result<()> {
    let (tx, rx) = unbounded();
    let read_half = stream.try_clone()?;
    let write_half = stream.try_clone()?;
    core_tx
        .send(CoreMsg::Open { conn, tx, stream })
        .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "dispatcher stopped"))?;
    thread::Builder::new().name(format!("mt-w{conn}")).spawn(move || writer_loop(write_half, rx, max_frame))?;
    let core_tx = core_tx.clone();
    thread::Builder::new().name(format!("mt-r{conn}")).spawn(move || {
        let mut reader = FrameReader::with_max(read_half, max_frame);
        loop {
            let mut msgs = Vec::new();
            match reader.read_batch(&mut msgs) {
                Ok(()) if msgs.is_empty() => break,
                Ok(()) => {
                    if core_tx.send(CoreMsg::Frames { conn, msgs }).is_err() {
                        return;
                    }
                }
                Err(e) => {
                    // frames decoded before the bad one still count
                    if !msgs.is_empty() && core_tx.send(CoreMsg::Frames { conn, msgs }).is_err() {
                        return;
                    }
                    if e.kind() == io::ErrorKind::InvalidData {
                        let _ = core_tx.send(CoreMsg::Malformed { conn, why: e.to_string() });
                        return;
                    }
                    log::debug!("connection {conn}: {e}");
                    break;
                }
            }
        }
        let _ = core_tx.send(CoreMsg::Closed { conn });
    })?;
    Ok(())
}

fn writer_loop(stream: TcpStream, rx: Receiver<Outbound>, max_frame: usize) {
    let mut out = BufWriter::with_capacity(64 * 1024, stream);
    let mut buf = Vec::with_capacity(64 * 1024);
    while let Ok(first) = rx.recv() {
        let mut close = false;
        let mut next = Some(first);
        // coalesce everything already queued into one write
        while let Some(item) = next {
            match item {
                Outbound::Frame(msg) => {
                    if let Err(e) = encode_frame_into(&msg, max_frame, &mut buf) {
                        log::error!("dropping unencodable {:?} frame: {e}", msg.kind());
                    }
                }
                Outbound::Close => {
                    close = true;
                    break;
                }
            }
            if buf.len() >= 256 * 1024 {
                break;
            }
            next = rx.try_recv().ok();
        }
        if out.write_all(&buf).and_then(|_| out.flush()).is_err() {
            break;
        }
        buf.clear();
        if close {
            break;
        }
    }
    let _ = out.get_ref().shutdown(Shutdown::Both);
}

struct Core {
    cfg: DispatcherConfig,
    sched: Scheduler,
    conns: HashMap<ConnId, Conn>,
    worker_conn: HashMap<WorkerId, ConnId>,
    logs: HashMap<RunId, RunLogWriter>,
    unflushed: usize,
    first_unflushed: Option<Instant>,
    last_liveness_check: Instant,
    /// Submit statuses produced by the most recent log restore.
    last_restore: Option<Vec<(TaskId, SubmitStatus)>>,
}

impl Core {
    fn new(cfg: DispatcherConfig) -> Self {
        let sched = Scheduler::new(cfg.scheduler_config());
        Core {
            cfg,
            sched,
            conns: HashMap::new(),
            worker_conn: HashMap::new(),
            logs: HashMap::new(),
            unflushed: 0,
            first_unflushed: None,
            last_liveness_check: Instant::now(),
            last_restore: None,
        }
    }

    fn flush_interval(&self) -> Duration {
        Duration::from_millis(self.cfg.flush_interval_ms)
    }

    fn liveness_timeout(&self) -> Duration {
        Duration::from_millis(self.cfg.heartbeat_interval_ms * self.cfg.heartbeat_misses as u64)
    }

    fn run(&mut self, rx: Receiver<CoreMsg>) {
        loop {
            let timeout = match self.first_unflushed {
                Some(t) => self.flush_interval().saturating_sub(t.elapsed()),
                None => Duration::from_millis(self.cfg.heartbeat_interval_ms.min(1000)),
            };
            let first = match rx.recv_timeout(timeout) {
                Ok(m) => Some(m),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => break,
            };
            let mut stop = false;
            if let Some(m) = first {
                stop |= self.handle(m);
                // apply everything already waiting before dispatching
                for _ in 0..1024 {
                    match rx.try_recv() {
                        Ok(m) => stop |= self.handle(m),
                        Err(_) => break,
                    }
                }
            }
            if stop {
                break;
            }
            self.sched.dispatch(now_ns());
            self.drain_outputs();
            self.maybe_flush(false);
            if self.last_liveness_check.elapsed() >= Duration::from_millis(self.cfg.heartbeat_interval_ms.min(1000)) {
                self.check_liveness();
            }
        }
        self.drain_outputs();
        self.maybe_flush(true);
        for c in self.conns.values() {
            let _ = c.tx.send(Outbound::Close);
            let _ = c.stream.shutdown(Shutdown::Read);
        }
        log::info!("dispatcher stopped");
    }

    fn maybe_flush(&mut self, force: bool) {
        let due = self.unflushed >= self.cfg.flush_events
            || self.first_unflushed.is_some_and(|t| t.elapsed() >= self.flush_interval());
        if !(force || due) {
            return;
        }
        for (run, w) in self.logs.iter_mut() {
            if let Err(e) = w.flush() {
                log::error!("flushing run log for {run}: {e}");
            }
        }
        self.unflushed = 0;
        self.first_unflushed = None;
    }

    fn check_liveness(&mut self) {
        self.last_liveness_check = Instant::now();
        let timeout = self.liveness_timeout();
        let stale: Vec<ConnId> = self
            .conns
            .iter()
            .filter(|(_, c)| matches!(c.role, Role::Worker(_)) && c.last_seen.elapsed() > timeout)
            .map(|(id, _)| *id)
            .collect();
        for conn in stale {
            log::warn!("connection {conn}: no heartbeat for {timeout:?}, dropping worker");
            self.close_conn(conn);
        }
    }

    /// Returns true when the core should stop.
    fn handle(&mut self, msg: CoreMsg) -> bool {
        match msg {
            CoreMsg::Open { conn, tx, stream } => {
                self.conns.insert(conn, Conn { tx, stream, role: Role::Unknown, last_seen: Instant::now() });
            }
            CoreMsg::Frames { conn, msgs } => {
                if let Some(c) = self.conns.get_mut(&conn) {
                    c.last_seen = Instant::now();
                }
                for m in msgs {
                    if !self.conns.contains_key(&conn) {
                        break;
                    }
                    self.handle_frame(conn, m);
                }
            }
            CoreMsg::Closed { conn } => self.close_conn(conn),
            CoreMsg::Malformed { conn, why } => self.reject(conn, format!("malformed frame: {why}")),
            CoreMsg::Stop => return true,
        }
        false
    }

    fn close_conn(&mut self, conn: ConnId) {
        let Some(c) = self.conns.remove(&conn) else { return };
        let _ = c.tx.send(Outbound::Close);
        let _ = c.stream.shutdown(Shutdown::Both);
        if let Role::Worker(id) = c.role {
            if self.worker_conn.get(&id) == Some(&conn) {
                self.worker_conn.remove(&id);
                self.sched.worker_lost(id, now_ns());
            }
        }
    }

    fn reply(&self, conn: ConnId, body: Body) {
        if let Some(c) = self.conns.get(&conn) {
            let _ = c.tx.send(Outbound::Frame(WireMessage::new(0, body)));
        }
    }

    fn reject(&mut self, conn: ConnId, why: String) {
        log::warn!("connection {conn}: {why}");
        self.reply(conn, Body::Ack { status: 1, message: why });
        if let Some(c) = self.conns.remove(&conn) {
            let _ = c.tx.send(Outbound::Close);
            if let Role::Worker(id) = c.role {
                if self.worker_conn.get(&id) == Some(&conn) {
                    self.worker_conn.remove(&id);
                    self.sched.worker_lost(id, now_ns());
                }
            }
        }
    }

    fn handle_frame(&mut self, conn: ConnId, msg: WireMessage) {
        let now = now_ns();
        let role_worker = match self.conns[&conn].role {
            Role::Worker(id) => Some(id),
            _ => None,
        };
        match msg.body {
            Body::Register { cores, mode, prefetch } => {
                if self.conns[&conn].role == Role::Client {
                    return self.reject(conn, "client connection cannot register as a worker".into());
                }
                let id = msg.sender_id;
                if let Some(prev) = role_worker {
                    if prev != id {
                        return self.reject(conn, format!("connection already bound to worker {prev}"));
                    }
                }
                // bind before registering so the ack reaches this connection
                let old = self.worker_conn.insert(id, conn);
                self.conns.get_mut(&conn).expect("conn").role = Role::Worker(id);
                if let Err(why) = self.sched.register_worker(id, cores, mode, prefetch, now) {
                    self.worker_conn.remove(&id);
                    if let Some(o) = old {
                        self.worker_conn.insert(id, o);
                    }
                    self.conns.get_mut(&conn).expect("conn").role = Role::Unknown;
                    return self.reject(conn, why);
                }
                if let Some(o) = old.filter(|o| *o != conn) {
                    // superseded session; scheduler already requeued its tasks
                    if let Some(c) = self.conns.remove(&o) {
                        let body = Body::Ack { status: ACK_SUPERSEDED, message: "superseded by a newer session".into() };
                        let _ = c.tx.send(Outbound::Frame(WireMessage::new(0, body)));
                        let _ = c.tx.send(Outbound::Close);
                    }
                }
                // Disconnect outputs for this id refer to the old session
                let outs = self.sched.take_outputs();
                self.apply_outputs(outs.into_iter().filter(|o| !matches!(o, Output::Disconnect { .. })).collect());
            }
            Body::Result(result) => match role_worker {
                Some(id) => {
                    self.sched.complete(id, result, now);
                }
                None => self.reject(conn, "result from a connection that is not a worker".into()),
            },
            Body::Heartbeat { running } => match role_worker {
                Some(id) => self.sched.heartbeat(id, &running),
                None => self.reject(conn, "heartbeat before registration".into()),
            },
            Body::TaskRequest { max_tasks } => match role_worker {
                Some(id) => {
                    if let Err(why) = self.sched.task_request(id, max_tasks, now) {
                        self.reject(conn, why);
                    }
                }
                None => self.reject(conn, "task request before registration".into()),
            },
            Body::Shutdown => {
                if let Some(id) = role_worker {
                    self.sched.worker_draining(id);
                }
            }
            Body::ClientHello { run_id } => {
                if !self.mark_client(conn) {
                    return;
                }
                match self.open_run(&run_id, false, now) {
                    Ok(_) => self.reply(conn, Body::Ack { status: 0, message: run_id }),
                    Err(why) => self.reply(conn, Body::Ack { status: 1, message: why }),
                }
            }
            Body::Submit { run_id, specs } => {
                if !self.mark_client(conn) {
                    return;
                }
                match self.open_run(&run_id, false, now) {
                    Ok(run) => {
                        let entries = self.sched.submit(&run, specs, now);
                        self.reply(conn, Body::SubmitReply { entries });
                    }
                    Err(why) => self.reply(conn, Body::Ack { status: 1, message: why }),
                }
            }
            Body::Resume { run_id } => {
                if !self.mark_client(conn) {
                    return;
                }
                if let Err(why) = validate_run_id(&run_id) {
                    return self.reply(conn, Body::Ack { status: 1, message: why });
                }
                let entries = if self.sched.has_run(&run_id) {
                    let run: RunId = run_id.as_str().into();
                    let mut entries = self.sched.resume_live(&run, now);
                    // a run opened from its log without requeueing holds only
                    // its completed tasks; pick up the rest from the log
                    match self.restore_missing(&run, now) {
                        Ok(more) => entries.extend(more),
                        Err(why) => return self.reply(conn, Body::Ack { status: 1, message: why }),
                    }
                    entries
                } else if runlog_path(&self.cfg.log_dir, &run_id).exists() {
                    match self.open_run(&run_id, true, now) {
                        Ok(_) => self.last_restore.take().unwrap_or_default(),
                        Err(why) => return self.reply(conn, Body::Ack { status: 1, message: why }),
                    }
                } else {
                    return self.reply(conn, Body::Ack { status: 1, message: format!("unknown run {run_id}") });
                };
                self.reply(conn, Body::SubmitReply { entries });
            }
            Body::StatusQuery { run_id } => {
                if !self.mark_client(conn) {
                    return;
                }
                let status = self.status(&run_id);
                match serde_json::to_string(&status) {
                    Ok(json) => self.reply(conn, Body::Status { json }),
                    Err(e) => self.reply(conn, Body::Ack { status: 1, message: e.to_string() }),
                }
            }
            other => self.reject(conn, format!("unexpected {:?} message", other.kind())),
        }
    }

    fn mark_client(&mut self, conn: ConnId) -> bool {
        let c = self.conns.get_mut(&conn).expect("conn");
        match c.role {
            Role::Worker(_) => {
                self.reject(conn, "worker connection cannot act as a client".into());
                false
            }
            _ => {
                c.role = Role::Client;
                true
            }
        }
    }

    /// Makes `run_id` live, loading its log if the run is not in memory.
    fn open_run(&mut self, run_id: &str, requeue: bool, now: u64) -> Result<RunId, String> {
        validate_run_id(run_id)?;
        let run: RunId = run_id.into();
        if self.sched.has_run(run_id) {
            return Ok(run);
        }
        let path = runlog_path(&self.cfg.log_dir, run_id);
        let replay = if path.exists() {
            let contents = read_runlog(&path).map_err(|e| format!("reading {}: {e}", path.display()))?;
            if contents.header.run_id != run_id {
                return Err(format!("{} belongs to run {}", path.display(), contents.header.run_id));
            }
            Some(Replay::from_events(&contents.events).map_err(|e| e.to_string())?)
        } else {
            None
        };
        let writer = RunLogWriter::open(&path, run_id, now).map_err(|e| format!("opening {}: {e}", path.display()))?;
        self.logs.insert(run.clone(), writer);
        match replay {
            Some(r) => {
                let entries = self.sched.restore_run(run.clone(), &r, requeue, now);
                log::info!(
                    "run {run_id}: restored {} tasks ({} complete) from {}",
                    r.specs.len(),
                    r.done.len(),
                    path.display()
                );
                self.last_restore = Some(entries);
            }
            None => self.sched.create_run(run.clone(), now),
        }
        Ok(run)
    }

    fn restore_missing(&mut self, run: &RunId, now: u64) -> Result<Vec<(TaskId, SubmitStatus)>, String> {
        let path = runlog_path(&self.cfg.log_dir, run);
        if let Some(w) = self.logs.get_mut(run) {
            w.flush().map_err(|e| format!("flushing {}: {e}", path.display()))?;
        }
        let contents = read_runlog(&path).map_err(|e| format!("reading {}: {e}", path.display()))?;
        let replay = Replay::from_events(&contents.events).map_err(|e| e.to_string())?;
        let entries = self.sched.restore_run(run.clone(), &replay, true, now);
        Ok(entries.into_iter().filter(|(_, st)| *st == SubmitStatus::Queued).collect())
    }

    fn status(&self, run_id: &str) -> DispatcherStatus {
        let mut st = self.sched.status(None);
        if run_id.is_empty() {
            return st;
        }
        st.run = self.sched.run_status(run_id).or_else(|| {
            validate_run_id(run_id).ok()?;
            offline_status(&runlog_path(&self.cfg.log_dir, run_id), run_id).ok()
        });
        st
    }

    fn drain_outputs(&mut self) {
        let outs = self.sched.take_outputs();
        if !outs.is_empty() {
            self.apply_outputs(outs);
        }
    }

    fn apply_outputs(&mut self, outs: Vec<Output>) {
        for o in outs {
            match o {
                Output::Send { worker, body } => {
                    let Some(conn) = self.worker_conn.get(&worker).copied() else { continue };
                    let ok = self
                        .conns
                        .get(&conn)
                        .is_some_and(|c| c.tx.send(Outbound::Frame(WireMessage::new(0, body))).is_ok());
                    if !ok {
                        self.close_conn(conn);
                    }
                }
                Output::Log { run, event } => {
                    match run {
                        Some(r) => {
                            if let Some(w) = self.logs.get_mut(&r) {
                                if let Err(e) = w.append(&event) {
                                    log::error!("run log {r}: {e}");
                                }
                            }
                        }
                        None => {
                            for (r, w) in self.logs.iter_mut() {
                                if let Err(e) = w.append(&event) {
                                    log::error!("run log {r}: {e}");
                                }
                            }
                        }
                    }
                    self.unflushed += 1;
                    self.first_unflushed.get_or_insert_with(Instant::now);
                }
                Output::Disconnect { worker } => {
                    if let Some(conn) = self.worker_conn.get(&worker).copied() {
                        self.close_conn(conn);
                    }
                }
            }
        }
    }
}

/// Status of a run reconstructed from its log alone.
pub fn offline_status(path: &std::path::Path, run_id: &str) -> io::Result<RunStatus> {
    let contents = read_runlog(path)?;
    let replay = Replay::from_events(&contents.events)?;
    let metrics = MetricsAccumulator::from_events(&contents.events).metrics();
    let done = replay.done.len();
    let failed = replay.failed.len();
    let submitted = replay.specs.len();
    Ok(RunStatus {
        run_id: run_id.to_string(),
        submitted,
        queued: submitted - done - failed,
        dispatched: 0,
        running: 0,
        done,
        failed,
        retrying: 0,
        complete: submitted > 0 && done + failed == submitted,
        offline: true,
        failed_tasks: replay.failed.iter().copied().collect(),
        metrics,
    })
}
