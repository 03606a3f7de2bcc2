//! An in-process dispatcher plus local workers, driven as a single client.

use std::io;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use manytask_core::dispatch::{self, Client, DispatcherConfig, DispatcherHandle, Event, RunStatus, WorkerStatus};
use manytask_core::proto::{DispatchMode, TaskSpec};
use manytask_core::worker::{self, ExecBackend, ExecutorConfig, WorkerHandle};

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub workers: usize,
    pub cores_per_worker: u32,
    pub bundle_size: usize,
    pub mode: DispatchMode,
    pub prefetch_depth: u32,
    pub backend: ExecBackend,
    /// Holds run logs and worker scratch space; a temporary directory when unset.
    pub work_dir: Option<PathBuf>,
    pub cache_capacity: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            workers: 4,
            cores_per_worker: 1,
            bundle_size: 1,
            mode: DispatchMode::Push,
            prefetch_depth: 0,
            backend: ExecBackend::Builtin,
            work_dir: None,
            cache_capacity: 256 << 20,
        }
    }
}

/// Outcome of one run on a live system.
#[derive(Debug, Clone)]
pub struct LiveRun {
    pub status: RunStatus,
    pub events: Vec<Event>,
    pub log_path: PathBuf,
    /// Wall time seen by the client from first submit to completion.
    pub client_elapsed: Duration,
}

pub struct LiveSystem {
    cfg: LiveConfig,
    dispatcher: Option<DispatcherHandle>,
    workers: Vec<WorkerHandle>,
    log_dir: PathBuf,
    _tmp: Option<tempfile::TempDir>,
    client: Client,
}

impl LiveSystem {
    pub fn start(cfg: LiveConfig) -> io::Result<Self> {
        let (root, tmp) = match &cfg.work_dir {
            Some(d) => (d.clone(), None),
            None => {
                let t = tempfile::Builder::new().prefix("manytask-live").tempdir()?;
                (t.path().to_path_buf(), Some(t))
            }
        };
        let log_dir = root.join("logs");
        let d = dispatch::start(DispatcherConfig {
            address: "127.0.0.1:0".into(),
            bundle_size: cfg.bundle_size,
            log_dir: log_dir.clone(),
            // a saturated single core can starve heartbeats; be lenient
            heartbeat_interval_ms: 5000,
            heartbeat_misses: 6,
            ..Default::default()
        })?;
        let addr = d.local_addr().to_string();
        let mut workers = Vec::with_capacity(cfg.workers);
        for i in 0..cfg.workers {
            let wcfg = ExecutorConfig {
                dispatcher: addr.clone(),
                worker_id: i as u64 + 1,
                cores: cfg.cores_per_worker,
                mode: cfg.mode,
                scratch_dir: root.join(format!("scratch/w{i}")),
                cache_capacity: cfg.cache_capacity,
                prefetch_depth: cfg.prefetch_depth,
                exec: cfg.backend,
                heartbeat_interval_ms: 1000,
                connect_timeout_ms: Some(10_000),
                ..Default::default()
            };
            workers.push(worker::spawn(wcfg)?);
        }
        let mut client = Client::connect_retry(&addr, Duration::from_secs(5))?;
        let deadline = Instant::now() + Duration::from_secs(30);
        loop {
            let st = client.status("")?;
            if st.workers.iter().filter(|w| w.status != WorkerStatus::Lost).count() >= cfg.workers {
                break;
            }
            if Instant::now() > deadline {
                return Err(io::Error::new(io::ErrorKind::TimedOut, "workers did not register"));
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        Ok(LiveSystem { cfg, dispatcher: Some(d), workers, log_dir, _tmp: tmp, client })
    }

    pub fn config(&self) -> &LiveConfig {
        &self.cfg
    }

    pub fn processors(&self) -> usize {
        self.cfg.workers * self.cfg.cores_per_worker as usize
    }

    pub fn log_dir(&self) -> &Path {
        &self.log_dir
    }

    /// Submits `specs` as run `run_id` and waits for it to complete.
    pub fn run(&mut self, run_id: &str, specs: &[TaskSpec], timeout: Duration) -> io::Result<LiveRun> {
        let t0 = Instant::now();
        self.client.hello(run_id)?;
        self.client.submit(run_id, specs)?;
        let status = if specs.is_empty() {
            self.client.status(run_id)?.run.ok_or_else(|| io::Error::other("run vanished"))?
        } else {
            self.client.wait(run_id, Duration::from_millis(5), Some(timeout), |_| {})?
        };
        let client_elapsed = t0.elapsed();
        let log_path = dispatch::runlog_path(&self.log_dir, run_id);
        // the dispatcher flushes on a short timer; completion is already on disk
        // once status reports it, except for the last partial batch
        let mut events = Vec::new();
        for _ in 0..200 {
            events = dispatch::read_runlog(&log_path)?.events;
            let finished = events.iter().filter(|e| matches!(e, Event::Finished { .. })).count();
            if finished >= status.done {
                break;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        Ok(LiveRun { status, events, log_path, client_elapsed })
    }

    pub fn shutdown(mut self) {
        for w in &self.workers {
            w.drain();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
        if let Some(d) = self.dispatcher.take() {
            d.shutdown();
        }
    }
}
