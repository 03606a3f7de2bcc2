use std::collections::VecDeque;
use std::io::{self, BufWriter, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};

use super::config::ExecutorConfig;
use super::exec::Executor;
use crate::dispatch::ACK_SUPERSEDED;
use crate::proto::{encode_frame_into, to_io, FrameReader, DEFAULT_MAX_FRAME};
use crate::proto::{Body, DispatchMode, TaskId, TaskResult, TaskSpec, WireMessage};
use crate::time::now_ns;

const BACKOFF_START: Duration = Duration::from_millis(50);
const BACKOFF_MAX: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerSummary {
    pub worker_id: u64,
    pub tasks_run: u64,
    pub sessions: u32,
    pub source_reads: u64,
}

enum Event {
    Tasks(u32, Vec<TaskSpec>),
    Result(TaskResult),
    Suspend(u32),
    Shutdown(u32),
    Lost(u32),
    Superseded(u32),
    Drain,
    Kill,
}

/// Cloneable remote control for a running worker.
#[derive(Clone)]
pub struct WorkerControl {
    events: Sender<Event>,
    conn: Arc<Mutex<Option<TcpStream>>>,
}

impl WorkerControl {
    /// Finish in-flight tasks, report them, then exit.
    pub fn drain(&self) {
        let _ = self.events.send(Event::Drain);
    }

    /// Exit at once, abandoning running tasks, as a crashed node would.
    pub fn kill(&self) {
        self.drop_connection();
        let _ = self.events.send(Event::Kill);
    }

    /// Sever the current connection; the worker reconnects.
    pub fn drop_connection(&self) {
        if let Some(s) = self.conn.lock().unwrap().as_ref() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

pub struct WorkerHandle {
    pub worker_id: u64,
    control: WorkerControl,
    join: JoinHandle<io::Result<WorkerSummary>>,
}

impl WorkerHandle {
    pub fn control(&self) -> WorkerControl {
        self.control.clone()
    }

    pub fn drain(&self) {
        self.control.drain()
    }

    pub fn kill(&self) {
        self.control.kill()
    }

    pub fn is_finished(&self) -> bool {
        self.join.is_finished()
    }

    pub fn join(self) -> io::Result<WorkerSummary> {
        self.join.join().unwrap_or_else(|_| Err(io::Error::other("worker thread panicked")))
    }
}

/// Starts a worker on a background thread.
pub fn spawn(cfg: ExecutorConfig) -> io::Result<WorkerHandle> {
    cfg.validate().map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    let worker_id = if cfg.worker_id == 0 { rand::random::<u64>().max(1) } else { cfg.worker_id };
    let exec = Arc::new(Executor::new(&cfg, worker_id)?);
    let (tx, rx) = unbounded();
    let control = WorkerControl { events: tx.clone(), conn: Arc::new(Mutex::new(None)) };
    let mut session = Session::new(cfg, worker_id, exec, tx, rx, control.conn.clone());
    let join = thread::Builder::new().name(format!("worker-{worker_id:x}")).spawn(move || session.run())?;
    Ok(WorkerHandle { worker_id, control, join })
}

/// Runs a worker on the calling thread until it drains or fails.
pub fn run(cfg: ExecutorConfig) -> io::Result<WorkerSummary> {
    spawn(cfg)?.join()
}

fn backoff_connect(cfg: &ExecutorConfig, deadline: Option<Instant>, events: &Receiver<Event>) -> io::Result<TcpStream> {
    let mut delay = BACKOFF_START;
    loop {
        match TcpStream::connect(&cfg.dispatcher) {
            Ok(s) => return Ok(s),
            Err(e) => {
                if deadline.is_some_and(|d| Instant::now() + delay > d) {
                    return Err(io::Error::new(
                        e.kind(),
                        format!("dispatcher {} unreachable: {e}", cfg.dispatcher),
                    ));
                }
                log::debug!("connect {}: {e}; retrying in {delay:?}", cfg.dispatcher);
                if let Ok(Event::Kill) = events.recv_timeout(delay) {
                    return Err(io::Error::new(io::ErrorKind::Interrupted, "worker killed"));
                }
                delay = (delay * 2).min(BACKOFF_MAX);
            }
        }
    }
}

struct Session {
    cfg: ExecutorConfig,
    worker_id: u64,
    exec: Arc<Executor>,
    tx: Sender<Event>,
    rx: Receiver<Event>,
    conn: Arc<Mutex<Option<TcpStream>>>,
    local_tx: Sender<(TaskSpec, u64)>,
    local_rx: Receiver<(TaskSpec, u64)>,
    running: Arc<Mutex<Vec<TaskId>>>,
    slots: Vec<JoinHandle<()>>,
    /// Tasks received whose result has not yet been queued for sending.
    outstanding: usize,
    pending: VecDeque<TaskResult>,
    suspended: bool,
    draining: bool,
    /// Last pull request still unanswered.
    requested: Option<u32>,
    sent: u64,
    dropped_once: bool,
    summary: WorkerSummary,
}

impl Session {
    fn new(
        cfg: ExecutorConfig,
        worker_id: u64,
        exec: Arc<Executor>,
        tx: Sender<Event>,
        rx: Receiver<Event>,
        conn: Arc<Mutex<Option<TcpStream>>>,
    ) -> Self {
        let (local_tx, local_rx) = unbounded();
        Session {
            cfg,
            worker_id,
            exec,
            tx,
            rx,
            conn,
            local_tx,
            local_rx,
            running: Arc::new(Mutex::new(Vec::new())),
            slots: Vec::new(),
            outstanding: 0,
            pending: VecDeque::new(),
            suspended: false,
            draining: false,
            requested: None,
            sent: 0,
            dropped_once: false,
            summary: WorkerSummary { worker_id, tasks_run: 0, sessions: 0, source_reads: 0 },
        }
    }

    fn start_slots(&mut self) -> io::Result<()> {
        for i in 0..self.cfg.cores {
            let rx = self.local_rx.clone();
            let tx = self.tx.clone();
            let exec = self.exec.clone();
            let running = self.running.clone();
            let h = thread::Builder::new().name(format!("slot-{i}")).spawn(move || {
                while let Ok((spec, dispatched)) = rx.recv() {
                    running.lock().unwrap().push(spec.id);
                    let result = exec.run(&spec, dispatched);
                    running.lock().unwrap().retain(|id| *id != spec.id);
                    if tx.send(Event::Result(result)).is_err() {
                        break;
                    }
                }
            })?;
            self.slots.push(h);
        }
        Ok(())
    }

    fn run(&mut self) -> io::Result<WorkerSummary> {
        self.start_slots()?;
        let deadline = self.cfg.connect_timeout_ms.map(|ms| Instant::now() + Duration::from_millis(ms));
        let outcome = loop {
            let stream = match backoff_connect(&self.cfg, deadline, &self.rx) {
                Ok(s) => s,
                Err(e) => break Err(e),
            };
            match self.session(stream) {
                Ok(true) => break Ok(()),
                Ok(false) => {}
                Err(e) => break Err(e),
            }
            *self.conn.lock().unwrap() = None;
            self.drop_local_queue();
            if self.draining && self.outstanding == 0 && self.pending.is_empty() {
                break Ok(());
            }
            log::info!("worker {:x}: connection lost, reconnecting", self.worker_id);
        };
        *self.conn.lock().unwrap() = None;
        let killed = matches!(&outcome, Err(e) if e.kind() == io::ErrorKind::Interrupted);
        // Closing the local queue lets idle slots exit.
        let (dead_tx, _) = unbounded();
        self.local_tx = dead_tx;
        if !killed {
            for h in self.slots.drain(..) {
                let _ = h.join();
            }
        }
        self.summary.source_reads = self.exec.cache().source_reads();
        match outcome {
            Ok(()) => Ok(self.summary.clone()),
            Err(_) if killed => {
                log::info!("worker {:x} killed", self.worker_id);
                Ok(self.summary.clone())
            }
            Err(e) => Err(e),
        }
    }

    fn drop_local_queue(&mut self) {
        let mut n = 0;
        while self.local_rx.try_recv().is_ok() {
            n += 1;
        }
        self.outstanding -= n;
        self.requested = None;
    }

    fn register(&mut self, stream: &TcpStream) -> io::Result<FrameReader<TcpStream>> {
        stream.set_nodelay(true)?;
        let hello = WireMessage::new(
            self.worker_id,
            Body::Register { cores: self.cfg.cores, mode: self.cfg.mode, prefetch: self.cfg.prefetch_depth },
        );
        let mut frame = Vec::new();
        encode_frame_into(&hello, DEFAULT_MAX_FRAME, &mut frame).map_err(to_io)?;
        (&*stream).write_all(&frame)?;
        let mut reader = FrameReader::new(stream.try_clone()?);
        stream.set_read_timeout(Some(Duration::from_secs(30)))?;
        let reply = reader.read_message()?;
        stream.set_read_timeout(None)?;
        match reply.map(|m| m.body) {
            Some(Body::Ack { status: 0, .. }) => Ok(reader),
            Some(Body::Ack { message, .. }) => Err(io::Error::new(
                io::ErrorKind::PermissionDenied,
                format!("dispatcher rejected registration: {message}"),
            )),
            Some(other) => Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("expected Ack to Register, got {:?}", other.kind()),
            )),
            None => Err(io::Error::new(io::ErrorKind::UnexpectedEof, "dispatcher closed during registration")),
        }
    }

    /// Returns Ok(true) when the worker should exit, Ok(false) to reconnect.
    fn session(&mut self, stream: TcpStream) -> io::Result<bool> {
        let reader = match self.register(&stream) {
            Ok(r) => r,
            Err(e) if e.kind() == io::ErrorKind::PermissionDenied || e.kind() == io::ErrorKind::InvalidData => {
                return Err(e)
            }
            Err(e) => {
                log::debug!("registration failed: {e}");
                return Ok(false);
            }
        };
        self.summary.sessions += 1;
        let sid = self.summary.sessions;
        *self.conn.lock().unwrap() = Some(stream.try_clone()?);
        let tx = self.tx.clone();
        thread::Builder::new().name("worker-reader".into()).spawn(move || read_loop(reader, tx, sid))?;

        let mut out = Out { w: BufWriter::with_capacity(64 * 1024, stream), frame: Vec::new(), sender: self.worker_id };
        let mut unflushed: Vec<TaskResult> = Vec::new();
        if self.draining {
            out.send(Body::Shutdown)?;
        }
        let hb = Duration::from_millis(self.cfg.heartbeat_interval_ms);
        let mut next_hb = Instant::now() + hb;
        loop {
            let ev = match self.rx.recv_timeout(next_hb.saturating_duration_since(Instant::now())) {
                Ok(ev) => Some(ev),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => unreachable!("session holds a sender"),
            };
            let mut lost = false;
            let mut batch = ev.into_iter().collect::<Vec<_>>();
            batch.extend(self.rx.try_iter().take(4096));
            for ev in batch {
                match ev {
                    Event::Tasks(s, specs) if s == sid => {
                        let now = now_ns();
                        self.outstanding += specs.len();
                        self.requested = None;
                        for spec in specs {
                            let _ = self.local_tx.send((spec, now));
                        }
                    }
                    Event::Tasks(..) => {}
                    Event::Result(r) => {
                        self.outstanding -= 1;
                        self.summary.tasks_run += 1;
                        self.pending.push_back(r);
                    }
                    Event::Suspend(s) if s == sid => {
                        log::warn!("worker {:x} suspended by dispatcher", self.worker_id);
                        self.suspended = true;
                        self.drop_local_queue();
                    }
                    Event::Shutdown(s) if s == sid => self.draining = true,
                    Event::Lost(s) if s == sid => lost = true,
                    Event::Superseded(s) if s == sid => {
                        return Err(io::Error::new(
                            io::ErrorKind::AddrInUse,
                            format!("worker id {:x} registered by a newer session", self.worker_id),
                        ))
                    }
                    Event::Suspend(_) | Event::Shutdown(_) | Event::Lost(_) | Event::Superseded(_) => {}
                    Event::Drain => {
                        if !self.draining {
                            self.draining = true;
                            if out.send(Body::Shutdown).is_err() {
                                lost = true;
                            }
                        }
                    }
                    Event::Kill => return Err(io::Error::new(io::ErrorKind::Interrupted, "worker killed")),
                }
            }
            if !lost {
                lost = self.write_round(&mut out, &mut unflushed, &mut next_hb, hb).is_err();
            }
            if lost {
                // Anything not known to be flushed is sent again next session.
                for r in unflushed.into_iter().rev() {
                    self.pending.push_front(r);
                }
                return Ok(false);
            }
            unflushed.clear();
            if self.draining && self.outstanding == 0 && self.pending.is_empty() {
                let _ = out.w.flush();
                let _ = out.w.get_ref().shutdown(Shutdown::Both);
                return Ok(true);
            }
        }
    }

    fn write_round(
        &mut self,
        out: &mut Out,
        unflushed: &mut Vec<TaskResult>,
        next_hb: &mut Instant,
        hb: Duration,
    ) -> io::Result<()> {
        while let Some(r) = self.pending.pop_front() {
            out.send(Body::Result(r.clone()))?;
            unflushed.push(r);
            self.sent += 1;
        }
        if self.cfg.mode == DispatchMode::Pull && !self.suspended && !self.draining {
            let cap = (self.cfg.cores + self.cfg.prefetch_depth) as usize;
            let free = cap.saturating_sub(self.outstanding) as u32;
            if free > 0 && self.requested != Some(free) {
                out.send(Body::TaskRequest { max_tasks: free })?;
                self.requested = Some(free);
            }
        }
        if Instant::now() >= *next_hb {
            let running = self.running.lock().unwrap().clone();
            out.send(Body::Heartbeat { running })?;
            *next_hb = Instant::now() + hb;
        }
        out.w.flush()?;
        let after = self.cfg.faults.drop_connection_after as u64;
        if after > 0 && !self.dropped_once && self.sent >= after {
            self.dropped_once = true;
            log::warn!("worker {:x}: dropping connection (injected)", self.worker_id);
            let _ = out.w.get_ref().shutdown(Shutdown::Both);
        }
        Ok(())
    }
}

struct Out {
    w: BufWriter<TcpStream>,
    frame: Vec<u8>,
    sender: u64,
}

impl Out {
    fn send(&mut self, body: Body) -> io::Result<()> {
        self.frame.clear();
        encode_frame_into(&WireMessage::new(self.sender, body), DEFAULT_MAX_FRAME, &mut self.frame)
            .map_err(to_io)?;
        self.w.write_all(&self.frame)
    }
}

fn read_loop(mut reader: FrameReader<TcpStream>, tx: Sender<Event>, sid: u32) {
    let mut batch = Vec::new();
    loop {
        batch.clear();
        match reader.read_batch(&mut batch) {
            Ok(()) if batch.is_empty() => break,
            Ok(()) => {}
            Err(e) => {
                log::debug!("worker read: {e}");
                break;
            }
        }
        let mut tasks = Vec::new();
        for msg in batch.drain(..) {
            let ev = match msg.body {
                Body::TaskDispatch(spec) => {
                    tasks.push(spec);
                    continue;
                }
                Body::TaskBundle(specs) => {
                    tasks.extend(specs);
                    continue;
                }
                Body::Suspend => Event::Suspend(sid),
                Body::Shutdown => Event::Shutdown(sid),
                Body::Ack { status: 0, .. } => continue,
                Body::Ack { status: ACK_SUPERSEDED, .. } => Event::Superseded(sid),
                other => {
                    log::warn!("worker ignoring unexpected {:?}", other.kind());
                    continue;
                }
            };
            if !tasks.is_empty() {
                let _ = tx.send(Event::Tasks(sid, std::mem::take(&mut tasks)));
            }
            let _ = tx.send(ev);
        }
        if !tasks.is_empty() && tx.send(Event::Tasks(sid, tasks)).is_err() {
            return;
        }
    }
    let _ = tx.send(Event::Lost(sid));
}
