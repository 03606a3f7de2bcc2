//! The run configuration file (TOML).
//!
//! Relative paths are resolved against the directory of the file they were
//! read from, or the working directory for the built-in defaults. `MANYTASK_ADDRESS` and `MANYTASK_LOG_DIR` override the
//! dispatcher address and run-log directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use manytask_core::dispatch::DispatcherConfig;
use manytask_core::proto::{DispatchMode, WireCalibration};
use manytask_core::worker::{ExecBackend, ExecutorConfig};
use serde::{Deserialize, Serialize};

pub const ENV_ADDRESS: &str = "MANYTASK_ADDRESS";
pub const ENV_LOG_DIR: &str = "MANYTASK_LOG_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dispatcher: DispatcherSection,
    pub worker: WorkerSection,
    pub provider: ProviderSection,
    pub model: ModelSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DispatcherSection {
    pub address: String,
    /// Accept only this dispatch mode; unset accepts both.
    pub mode: Option<DispatchMode>,
    pub bundle_size: usize,
    pub max_retries: u32,
    pub suspend_threshold: u32,
    pub failfast_patterns: Vec<String>,
    pub log_path: PathBuf,
    pub heartbeat_interval_ms: u64,
    pub heartbeat_misses: u32,
}

impl Default for DispatcherSection {
    fn default() -> Self {
        let d = DispatcherConfig::default();
        DispatcherSection {
            address: d.address,
            mode: d.mode,
            bundle_size: d.bundle_size,
            max_retries: d.max_retries,
            suspend_threshold: d.suspend_threshold,
            failfast_patterns: d.failfast_patterns,
            log_path: d.log_dir,
            heartbeat_interval_ms: d.heartbeat_interval_ms,
            heartbeat_misses: d.heartbeat_misses,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkerSection {
    pub cores: u32,
    pub mode: DispatchMode,
    pub scratch_dir: PathBuf,
    pub cache_capacity: u64,
    pub prefetch_depth: u32,
    pub exec: ExecBackend,
    pub task_timeout_ms: Option<u64>,
    pub heartbeat_interval_ms: u64,
    pub connect_timeout_ms: Option<u64>,
}

impl Default for WorkerSection {
    fn default() -> Self {
        let e = ExecutorConfig::default();
        WorkerSection {
            cores: e.cores,
            mode: e.mode,
            scratch_dir: e.scratch_dir,
            cache_capacity: e.cache_capacity,
            prefetch_depth: e.prefetch_depth,
            exec: e.exec,
            task_timeout_ms: e.task_timeout_ms,
            heartbeat_interval_ms: e.heartbeat_interval_ms,
            connect_timeout_ms: e.connect_timeout_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Worker processes on this machine.
    Local,
    /// Site-specific start/stop scripts.
    Script,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub name: ProviderKind,
    pub block_size: u32,
    /// Local provider: workers started per block; each gets
    /// `block_size / workers_per_block` cores.
    pub workers_per_block: u32,
    pub start_script: Option<PathBuf>,
    pub stop_script: Option<PathBuf>,
    pub registration_timeout_s: f64,
    pub drain_timeout_s: f64,
}

impl Default for ProviderSection {
    fn default() -> Self {
        ProviderSection {
            name: ProviderKind::Local,
            block_size: 4,
            workers_per_block: 4,
            start_script: None,
            stop_script: None,
            registration_timeout_s: 30.0,
            drain_timeout_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Wire-cost calibration, bytes per task.
    pub fixed_overhead: f64,
    pub base_packets: f64,
    pub mss: f64,
    pub header: f64,
    /// Shared filesystem aggregate bandwidth, bits/sec.
    pub aggregate_bw: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let w = WireCalibration::default();
        ModelSection {
            fixed_overhead: w.fixed_overhead,
            base_packets: w.base_packets,
            mss: w.mss,
            header: w.header,
            aggregate_bw: 8e9,
        }
    }
}

impl ModelSection {
    pub fn wire(&self) -> WireCalibration {
        WireCalibration {
            base_packets: self.base_packets,
            fixed_overhead: self.fixed_overhead,
            mss: self.mss,
            header: self.header,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub out_dir: PathBuf,
    pub time_scale: f64,
    pub seed: u64,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { out_dir: PathBuf::from("bench-out"), time_scale: 0.1, seed: 1 }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() && !p.as_os_str().is_empty() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` (or defaults when `None`), resolves relative paths,
    /// applies environment overrides and validates.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let mut cfg = Self::parse(&text).with_context(|| format!("parsing {}", p.display()))?;
                let base = p.parent().filter(|b| !b.as_os_str().is_empty()).unwrap_or(Path::new("."));
                cfg.resolve_paths(base);
                cfg
            }
            None => {
                let mut cfg = RunConfig::default();
                cfg.resolve_paths(&std::env::current_dir()?);
                cfg
            }
        };
        cfg.apply_env(|k| std::env::var(k).ok());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.dispatcher.log_path);
        resolve(base, &mut self.worker.scratch_dir);
        resolve(base, &mut self.bench.out_dir);
        for p in [&mut self.provider.start_script, &mut self.provider.stop_script].into_iter().flatten() {
            resolve(base, p);
        }
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(a) = get(ENV_ADDRESS).filter(|a| !a.is_empty()) {
            self.dispatcher.address = a;
        }
        if let Some(d) = get(ENV_LOG_DIR).filter(|d| !d.is_empty()) {
            self.dispatcher.log_path = PathBuf::from(d);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dispatcher_config().validate().map_err(anyhow::Error::msg).context("[dispatcher]")?;
        self.executor_config().validate().map_err(anyhow::Error::msg).context("[worker]")?;
        let p = &self.provider;
        if p.block_size == 0 || p.workers_per_block == 0 || p.block_size % p.workers_per_block != 0 {
            bail!("[provider] block_size must be a positive multiple of workers_per_block");
        }
        if !(p.registration_timeout_s > 0.0 && p.drain_timeout_s >= 0.0) {
            bail!("[provider] timeouts must be positive");
        }
        if p.name == ProviderKind::Script && p.start_script.is_none() {
            bail!("[provider] the script provider needs start_script");
        }
        for s in [&p.start_script, &p.stop_script].into_iter().flatten() {
            if !s.is_file() {
                bail!("[provider] script {} does not exist", s.display());
            }
        }
        let m = &self.model;
        if !(m.mss > 0.0 && m.aggregate_bw > 0.0 && m.header >= 0.0 && m.base_packets >= 0.0 && m.fixed_overhead >= 0.0)
        {
            bail!("[model] mss and aggregate_bw must be positive, the rest non-negative");
        }
        if !(self.bench.time_scale > 0.0 && self.bench.time_scale.is_finite()) {
            bail!("[bench] time_scale must be positive");
        }
        Ok(())
    }

    pub fn dispatcher_config(&self) -> DispatcherConfig {
        let d = &self.dispatcher;
        DispatcherConfig {
            address: d.address.clone(),
            mode: d.mode,
            bundle_size: d.bundle_size,
            max_retries: d.max_retries,
            suspend_threshold: d.suspend_threshold,
            failfast_patterns: d.failfast_patterns.clone(),
            log_dir: d.log_path.clone(),
            heartbeat_interval_ms: d.heartbeat_interval_ms,
            heartbeat_misses: d.heartbeat_misses,
            ..Default::default()
        }
    }

    pub fn executor_config(&self) -> ExecutorConfig {
        let w = &self.worker;
        ExecutorConfig {
            dispatcher: self.dispatcher.address.clone(),
            cores: w.cores,
            mode: w.mode,
            scratch_dir: w.scratch_dir.clone(),
            cache_capacity: w.cache_capacity,
            prefetch_depth: w.prefetch_depth,
            exec: w.exec,
            task_timeout_ms: w.task_timeout_ms,
            heartbeat_interval_ms: w.heartbeat_interval_ms,
            connect_timeout_ms: w.connect_timeout_ms,
            ..Default::default()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}
