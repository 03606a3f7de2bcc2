use std::fs::{self, File};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::os::unix::process::ExitStatusExt;
use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use wait_timeout::ChildExt;

use super::cache::{Cache, CacheError, Staged};
use super::config::{ExecBackend, ExecutorConfig, FaultInjection};
use crate::proto::{ErrorClass, TaskResult, TaskSpec};
use crate::time::now_ns;

/// Exit codes the worker reports for failures that happen outside the task.
pub mod exit {
    pub const OUTPUT_MISSING: i32 = 65;
    pub const INPUT_MISSING: i32 = 66;
    pub const COMM_ERROR: i32 = 69;
    pub const STAGING: i32 = 74;
    pub const SCRATCH_FULL: i32 = 75;
    pub const TIMEOUT: i32 = 124;
    pub const SPAWN: i32 = 127;
}

const DETAIL_TAIL: u64 = 512;
const PIPE_BUF: usize = 64 * 1024;

struct Outcome {
    code: i32,
    class: ErrorClass,
    detail: String,
}

impl Outcome {
    fn ok() -> Self {
        Outcome { code: 0, class: ErrorClass::None, detail: String::new() }
    }

    fn app(code: i32, detail: impl Into<String>) -> Self {
        Outcome { code, class: ErrorClass::AppError, detail: detail.into() }
    }

    fn fail_fast(code: i32, detail: impl Into<String>) -> Self {
        Outcome { code, class: ErrorClass::FailFast, detail: detail.into() }
    }

    fn from_exit(code: i32, detail: String) -> Self {
        if code == 0 {
            Outcome::ok()
        } else {
            Outcome::app(code, detail)
        }
    }
}

enum Builtin {
    Sleep(Duration),
    Exit(i32),
}

fn parse_builtin(argv: &[String]) -> Option<Builtin> {
    let prog = Path::new(argv.first()?).file_name()?.to_str()?;
    match (prog, &argv[1..]) {
        ("sleep", [secs]) => {
            let s: f64 = secs.parse().ok()?;
            (s.is_finite() && s >= 0.0).then(|| Builtin::Sleep(Duration::from_secs_f64(s)))
        }
        ("true", []) => Some(Builtin::Exit(0)),
        ("false", []) => Some(Builtin::Exit(1)),
        ("exit", [code]) => code.parse().ok().map(Builtin::Exit),
        _ => None,
    }
}

fn plain_relative(name: &str) -> bool {
    let p = Path::new(name);
    !name.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_)))
}

fn stderr_tail(path: &Path) -> String {
    let Ok(mut f) = File::open(path) else { return String::new() };
    let len = f.metadata().map(|m| m.len()).unwrap_or(0);
    let _ = f.seek(SeekFrom::Start(len.saturating_sub(DETAIL_TAIL)));
    let mut buf = Vec::new();
    let _ = f.read_to_end(&mut buf);
    String::from_utf8_lossy(&buf).trim().to_string()
}

/// Runs task specs on behalf of one worker. Shared by all slots.
pub struct Executor {
    worker_id: u64,
    tasks_dir: PathBuf,
    cache: Arc<Cache>,
    backend: ExecBackend,
    timeout: Option<Duration>,
    faults: FaultInjection,
    started: AtomicU32,
}

impl Executor {
    pub fn new(cfg: &ExecutorConfig, worker_id: u64) -> io::Result<Self> {
        let tasks_dir = cfg.scratch_dir.join("tasks");
        fs::create_dir_all(&tasks_dir)?;
        let cache = Arc::new(Cache::new(cfg.scratch_dir.join("cache"), cfg.cache_capacity)?);
        Ok(Executor {
            worker_id,
            tasks_dir,
            cache,
            backend: cfg.exec,
            timeout: cfg.task_timeout_ms.map(Duration::from_millis),
            faults: cfg.faults.clone(),
            started: AtomicU32::new(0),
        })
    }

    pub fn cache(&self) -> &Arc<Cache> {
        &self.cache
    }

    /// Executes one task. Never panics on task failure; every failure is
    /// folded into the returned result.
    pub fn run(&self, spec: &TaskSpec, dispatched: u64) -> TaskResult {
        let started = now_ns().max(dispatched);
        let n = self.started.fetch_add(1, Ordering::Relaxed) + 1;
        let out = if n <= self.faults.stale_handle_first {
            Outcome::fail_fast(exit::STAGING, "Stale NFS file handle (injected)")
        } else if self.faults.comm_error_every > 0 && n % self.faults.comm_error_every == 0 {
            Outcome { code: exit::COMM_ERROR, class: ErrorClass::CommError, detail: "injected comm error".into() }
        } else {
            self.execute(spec)
        };
        TaskResult {
            task_id: spec.id,
            exit_code: out.code,
            error_class: out.class,
            worker_id: self.worker_id,
            dispatched,
            started,
            finished: now_ns().max(started),
            detail: out.detail,
        }
    }

    fn execute(&self, spec: &TaskSpec) -> Outcome {
        let Ok(cmd) = std::str::from_utf8(&spec.command) else {
            return Outcome::app(exit::SPAWN, "command is not valid UTF-8");
        };
        let argv = match shlex::split(cmd) {
            Some(v) if !v.is_empty() => v,
            _ => return Outcome::app(exit::SPAWN, format!("cannot parse command {cmd:?}")),
        };
        let simple = spec.inputs.is_empty() && spec.outputs.is_empty();
        if self.backend == ExecBackend::Builtin && simple {
            if let Some(b) = parse_builtin(&argv) {
                return match b {
                    Builtin::Sleep(d) => {
                        if self.timeout.is_some_and(|t| d > t) {
                            std::thread::sleep(self.timeout.unwrap());
                            Outcome::app(exit::TIMEOUT, "timed out")
                        } else {
                            std::thread::sleep(d);
                            Outcome::ok()
                        }
                    }
                    Builtin::Exit(c) => Outcome::from_exit(c, String::new()),
                };
            }
        }
        for name in spec.inputs.iter().map(|i| &i.name).chain(spec.outputs.iter().map(|o| &o.name)) {
            if !plain_relative(name) {
                return Outcome::app(exit::SPAWN, format!("file name {name:?} must be a relative path"));
            }
        }

        let dir = match self.make_task_dir(spec) {
            Ok(d) => d,
            Err(e) => return Outcome::fail_fast(exit::STAGING, format!("cannot create task directory: {e}")),
        };
        let mut staged = Vec::with_capacity(spec.inputs.len());
        let out = self.stage_and_run(spec, &argv, &dir, &mut staged);
        for s in &staged {
            self.cache.release(s);
        }
        if let Err(e) = fs::remove_dir_all(&dir) {
            log::warn!("cannot remove {}: {e}", dir.display());
        }
        out
    }

    fn make_task_dir(&self, spec: &TaskSpec) -> io::Result<PathBuf> {
        let base = self.tasks_dir.join(spec.id.to_hex());
        let mut dir = base.clone();
        for k in 1.. {
            match fs::create_dir(&dir) {
                Ok(()) => break,
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => dir = base.with_extension(k.to_string()),
                Err(e) => return Err(e),
            }
        }
        Ok(dir)
    }

    fn stage_and_run(&self, spec: &TaskSpec, argv: &[String], dir: &Path, staged: &mut Vec<Staged>) -> Outcome {
        for input in &spec.inputs {
            let dest = dir.join(&input.name);
            if let Some(parent) = dest.parent() {
                if let Err(e) = fs::create_dir_all(parent) {
                    return Outcome::fail_fast(exit::STAGING, format!("input {}: {e}", input.name));
                }
            }
            match self.cache.fetch(&input.name, Path::new(&input.source), input.cacheable, &dest) {
                Ok(s) => {
                    if let Staged::Cached { local, .. } = &s {
                        if std::os::unix::fs::symlink(local, &dest).is_err() {
                            if let Err(e) = fs::copy(local, &dest) {
                                staged.push(s);
                                return Outcome::fail_fast(exit::STAGING, format!("input {}: {e}", input.name));
                            }
                        }
                    }
                    staged.push(s);
                }
                Err(e @ CacheError::MissingSource { .. }) => return Outcome::app(exit::INPUT_MISSING, e.to_string()),
                Err(e @ CacheError::ScratchFull { .. }) => return Outcome::fail_fast(exit::SCRATCH_FULL, e.to_string()),
                Err(e @ CacheError::Io { .. }) => return Outcome::fail_fast(exit::STAGING, e.to_string()),
            }
        }

        let code = match self.spawn(spec, argv, dir) {
            Ok(c) => c,
            Err(o) => return o,
        };
        if code != 0 {
            return Outcome::app(code, stderr_tail(&dir.join("stderr")));
        }
        for output in &spec.outputs {
            let src = dir.join(&output.name);
            if !src.is_file() {
                return Outcome::app(exit::OUTPUT_MISSING, format!("declared output {} was not produced", output.name));
            }
            let dest = Path::new(&output.dest);
            let copied = dest
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .map_or(Ok(()), fs::create_dir_all)
                .and_then(|_| fs::copy(&src, dest));
            if let Err(e) = copied {
                return Outcome::fail_fast(exit::STAGING, format!("output {} -> {}: {e}", output.name, output.dest));
            }
        }
        Outcome::ok()
    }

    fn spawn(&self, spec: &TaskSpec, argv: &[String], dir: &Path) -> Result<i32, Outcome> {
        let io_err = |e: io::Error| Outcome::fail_fast(exit::STAGING, format!("task stdio: {e}"));
        let stdout = File::create(dir.join("stdout")).map_err(io_err)?;
        let stderr = File::create(dir.join("stderr")).map_err(io_err)?;
        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..]).current_dir(dir).stdout(stdout).stderr(stderr);
        cmd.stdin(if spec.payload.is_empty() { Stdio::null() } else { Stdio::piped() });
        let mut child = cmd.spawn().map_err(|e| Outcome::app(exit::SPAWN, format!("spawn {}: {e}", argv[0])))?;

        let writer = child.stdin.take().and_then(|mut stdin| {
            if spec.payload.len() <= PIPE_BUF {
                // Fits in the pipe buffer; a task that ignores stdin is fine.
                let _ = stdin.write_all(&spec.payload);
                None
            } else {
                let payload = spec.payload.clone();
                Some(std::thread::spawn(move || {
                    let _ = stdin.write_all(&payload);
                }))
            }
        });

        let status = match self.timeout {
            None => child.wait(),
            Some(t) => match child.wait_timeout(t) {
                Ok(Some(s)) => Ok(s),
                Ok(None) => {
                    let _ = child.kill();
                    let _ = child.wait();
                    if let Some(w) = writer {
                        let _ = w.join();
                    }
                    return Err(Outcome::app(exit::TIMEOUT, format!("timed out after {t:?}")));
                }
                Err(e) => Err(e),
            },
        };
        if let Some(w) = writer {
            let _ = w.join();
        }
        let status = status.map_err(|e| Outcome::fail_fast(exit::STAGING, format!("wait: {e}")))?;
        Ok(status.code().unwrap_or_else(|| 128 + status.signal().unwrap_or(0)))
    }
}
