use std::collections::HashMap;
use std::io;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use wait_timeout::ChildExt;

use super::ProvisionProvider;
use crate::worker::{self, ExecutorConfig, WorkerHandle};

/// How the local provider starts a worker.
#[derive(Debug, Clone)]
pub enum LocalLaunch {
    /// Run `program args... --dispatcher A --worker-id N --cores C
    /// --scratch-dir D` as a child process.
    Process { program: PathBuf, args: Vec<String> },
    /// Run workers as threads of this process, from a config template.
    InProcess(ExecutorConfig),
}

enum Running {
    Child(Child),
    Thread(WorkerHandle),
}

/// Provider that starts workers on this machine.
pub struct LocalProvider {
    block_size: u32,
    workers_per_block: u32,
    launch: LocalLaunch,
    scratch_root: PathBuf,
    blocks: HashMap<u32, Vec<Running>>,
}

impl LocalProvider {
    pub fn new(block_size: u32, workers_per_block: u32, launch: LocalLaunch, scratch_root: PathBuf) -> io::Result<Self> {
        if block_size == 0 || workers_per_block == 0 || block_size % workers_per_block != 0 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("block size {block_size} must be a positive multiple of workers per block {workers_per_block}"),
            ));
        }
        Ok(LocalProvider { block_size, workers_per_block, launch, scratch_root, blocks: HashMap::new() })
    }

    fn launch_one(&self, id: u64, cores: u32, dispatcher: &str) -> io::Result<Running> {
        let scratch = self.scratch_root.join(format!("w{id:016x}"));
        match &self.launch {
            LocalLaunch::Process { program, args } => {
                let mut cmd = Command::new(program);
                #[cfg(target_os = "linux")]
                unsafe {
                    use std::os::unix::process::CommandExt;
                    // workers drain if the provisioning process dies without releasing them
                    cmd.pre_exec(|| {
                        if libc::prctl(libc::PR_SET_PDEATHSIG, libc::SIGTERM) != 0 {
                            return Err(io::Error::last_os_error());
                        }
                        Ok(())
                    });
                }
                let child = cmd
                    .args(args)
                    .arg("--dispatcher")
                    .arg(dispatcher)
                    .arg("--worker-id")
                    .arg(id.to_string())
                    .arg("--cores")
                    .arg(cores.to_string())
                    .arg("--scratch-dir")
                    .arg(&scratch)
                    .stdin(Stdio::null())
                    .stdout(Stdio::null())
                    .spawn()?;
                Ok(Running::Child(child))
            }
            LocalLaunch::InProcess(template) => {
                let cfg = ExecutorConfig {
                    dispatcher: dispatcher.to_string(),
                    worker_id: id,
                    cores,
                    scratch_dir: scratch,
                    ..template.clone()
                };
                Ok(Running::Thread(worker::spawn(cfg)?))
            }
        }
    }
}

fn terminate(r: Running, graceful: bool, deadline: Instant) {
    match r {
        Running::Child(mut c) => {
            if graceful {
                // SIGTERM asks the worker to drain
                unsafe {
                    libc::kill(c.id() as libc::pid_t, libc::SIGTERM);
                }
                let left = deadline.saturating_duration_since(Instant::now());
                if let Ok(Some(_)) = c.wait_timeout(left) {
                    return;
                }
            }
            let _ = c.kill();
            let _ = c.wait();
        }
        Running::Thread(h) => {
            if graceful {
                h.drain();
                while !h.is_finished() && Instant::now() < deadline {
                    std::thread::sleep(Duration::from_millis(10));
                }
            }
            if !h.is_finished() {
                h.kill();
            }
            if let Err(e) = h.join() {
                log::debug!("worker stopped with {e}");
            }
        }
    }
}

impl ProvisionProvider for LocalProvider {
    fn name(&self) -> &str {
        "local"
    }

    fn block_size(&self) -> u32 {
        self.block_size
    }

    fn start_block(&mut self, index: u32, dispatcher: &str) -> io::Result<Vec<u64>> {
        let cores = self.block_size / self.workers_per_block;
        let mut started = Vec::new();
        let mut ids = Vec::new();
        for _ in 0..self.workers_per_block {
            let id = rand::random::<u64>().max(1);
            match self.launch_one(id, cores, dispatcher) {
                Ok(r) => {
                    started.push(r);
                    ids.push(id);
                }
                Err(e) => {
                    for r in started {
                        terminate(r, false, Instant::now());
                    }
                    return Err(e);
                }
            }
        }
        self.blocks.insert(index, started);
        Ok(ids)
    }

    fn stop_block(&mut self, index: u32, graceful: bool, timeout: Duration) -> io::Result<()> {
        let Some(workers) = self.blocks.remove(&index) else { return Ok(()) };
        let deadline = Instant::now() + timeout;
        if graceful {
            // signal all first so the block drains in parallel
            for r in &workers {
                match r {
                    Running::Child(c) => unsafe {
                        libc::kill(c.id() as libc::pid_t, libc::SIGTERM);
                    },
                    Running::Thread(h) => h.drain(),
                }
            }
        }
        for r in workers {
            terminate(r, graceful, deadline);
        }
        Ok(())
    }

    fn block_exited(&mut self, index: u32) -> bool {
        self.blocks.get_mut(&index).is_some_and(|ws| {
            ws.iter_mut().any(|r| match r {
                Running::Child(c) => matches!(c.try_wait(), Ok(Some(_))),
                Running::Thread(h) => h.is_finished(),
            })
        })
    }

    fn live_workers(&mut self) -> usize {
        self.blocks
            .values_mut()
            .flat_map(|ws| ws.iter_mut())
            .map(|r| match r {
                Running::Child(c) => matches!(c.try_wait(), Ok(None)),
                Running::Thread(h) => !h.is_finished(),
            })
            .filter(|live| *live)
            .count()
    }
}

impl Drop for LocalProvider {
    fn drop(&mut self) {
        let idx: Vec<u32> = self.blocks.keys().copied().collect();
        for i in idx {
            let _ = self.stop_block(i, false, Duration::ZERO);
        }
    }
}
