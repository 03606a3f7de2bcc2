//! Long-running processes: the dispatcher, a worker, and a provisioned pool.

use std::path::Path;
use std::sync::atomic::Ordering;
use std::time::Duration;

use anyhow::{Context, Result};
use manytask_core::dispatch;
use manytask_core::provision::{LocalLaunch, LocalProvider, ProvisionProvider, Provisioner, ScriptProvider};
use manytask_core::worker;
use serde_json::json;

use crate::args::{ProvisionArgs, ServeArgs, WorkerArgs};
use crate::config::{ProviderKind, RunConfig};
use crate::{print_json, termination_flag};

pub fn serve(cfg: RunConfig, a: ServeArgs) -> Result<i32> {
    let mut dcfg = cfg.dispatcher_config();
    if let Some(addr) = a.address {
        dcfg.address = addr;
    }
    if let Some(dir) = a.log_dir {
        dcfg.log_dir = dir;
    }
    if let Some(b) = a.bundle_size {
        dcfg.bundle_size = b;
    }
    dcfg.validate().map_err(anyhow::Error::msg)?;
    let term = termination_flag()?;
    let handle = dispatch::start(dcfg.clone()).with_context(|| format!("starting dispatcher on {}", dcfg.address))?;
    let addr = handle.local_addr();
    eprintln!("dispatcher listening on {addr}, run logs in {}", dcfg.log_dir.display());
    print_json(&json!({ "address": addr.to_string(), "log_dir": dcfg.log_dir }))?;
    while !term.load(Ordering::Relaxed) {
        std::thread::sleep(Duration::from_millis(50));
    }
    eprintln!("shutting down");
    handle.shutdown();
    Ok(0)
}

pub fn worker(cfg: RunConfig, a: WorkerArgs) -> Result<i32> {
    let mut wcfg = cfg.executor_config();
    if let Some(d) = a.dispatcher {
        wcfg.dispatcher = d;
    }
    if let Some(id) = a.worker_id {
        wcfg.worker_id = id;
    }
    if let Some(c) = a.cores {
        wcfg.cores = c;
    }
    if let Some(s) = a.scratch_dir {
        wcfg.scratch_dir = s;
    }
    if let Some(m) = a.mode {
        wcfg.mode = m;
    }
    if let Some(e) = a.exec {
        wcfg.exec = e;
    }
    if let Some(p) = a.prefetch {
        wcfg.prefetch_depth = p;
    }
    if let Some(t) = a.connect_timeout {
        wcfg.connect_timeout_ms = Some((t * 1000.0) as u64);
    }
    wcfg.validate().map_err(anyhow::Error::msg)?;
    let term = termination_flag()?;
    let handle = worker::spawn(wcfg.clone())?;
    eprintln!("worker {:016x} ({} cores) serving {}", handle.worker_id, wcfg.cores, wcfg.dispatcher);
    let mut draining = false;
    while !handle.is_finished() {
        if !draining && term.load(Ordering::Relaxed) {
            eprintln!("draining");
            handle.drain();
            draining = true;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    let s = handle.join()?;
    print_json(&json!({
        "worker_id": s.worker_id,
        "tasks_run": s.tasks_run,
        "sessions": s.sessions,
        "source_reads": s.source_reads,
    }))?;
    Ok(0)
}

fn provider(cfg: &RunConfig, config_path: Option<&Path>, in_process: bool) -> Result<Box<dyn ProvisionProvider>> {
    let p = &cfg.provider;
    Ok(match p.name {
        ProviderKind::Local => {
            let launch = if in_process {
                LocalLaunch::InProcess(cfg.executor_config())
            } else {
                let mut args = vec!["worker".to_string()];
                if let Some(c) = config_path {
                    args.push("--config".into());
                    args.push(c.display().to_string());
                }
                LocalLaunch::Process { program: std::env::current_exe()?, args }
            };
            Box::new(LocalProvider::new(p.block_size, p.workers_per_block, launch, cfg.worker.scratch_dir.clone())?)
        }
        ProviderKind::Script => {
            let quote = |s: &Path| format!("'{}'", s.display().to_string().replace('\'', r"'\''"));
            let start = quote(p.start_script.as_deref().expect("validated"));
            let stop = p.stop_script.as_deref().map(quote).unwrap_or_else(|| "true".into());
            Box::new(ScriptProvider::new(p.block_size, start, stop))
        }
    })
}

pub fn provision(cfg: RunConfig, config_path: Option<&Path>, a: ProvisionArgs) -> Result<i32> {
    let dispatcher = a.dispatcher.clone().unwrap_or_else(|| cfg.dispatcher.address.clone());
    let term = termination_flag()?;
    let mut prov = Provisioner::new(provider(&cfg, config_path, a.in_process)?, dispatcher);
    prov.registration_timeout = Duration::from_secs_f64(cfg.provider.registration_timeout_s);
    prov.drain_timeout = Duration::from_secs_f64(cfg.provider.drain_timeout_s);
    let duration = a.duration.map(Duration::from_secs_f64);
    let mut alloc = prov.provision(a.cores, duration)?;
    eprintln!(
        "allocated {} cores in {} blocks (requested {}), mean boot {:.3}s",
        alloc.granted_cores,
        alloc.blocks.len(),
        alloc.requested_cores,
        alloc.boot_cost
    );
    print_json(&alloc)?;
    prov.hold(&mut alloc, || term.load(Ordering::Relaxed))?;
    eprintln!("released {}", alloc.allocation_id);
    print_json(&alloc)?;
    Ok(0)
}
