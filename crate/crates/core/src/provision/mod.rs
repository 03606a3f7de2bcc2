//! Block-granular resource provisioning.
//!
//! A provider hands out capacity in fixed-size blocks; the provisioner rounds
//! a request up to whole blocks, launches workers on them, waits for the
//! workers to register with the dispatcher and tears everything down again
//! on failure or expiry.

mod local;
mod script;

use std::io;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dispatch::{Client, WorkerStatus};
use crate::time::now_ns;

pub use local::{LocalLaunch, LocalProvider};
pub use script::ScriptProvider;

#[derive(Debug, thiserror::Error)]
pub enum ProvisionError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("block {block} failed to start: {source}")]
    StartFailed { block: u32, source: io::Error },
    #[error("workers {missing:?} did not register within {timeout:?}")]
    RegistrationTimeout { missing: Vec<u64>, timeout: Duration },
    #[error("dispatcher unreachable: {0}")]
    Dispatcher(io::Error),
    #[error("stopping block {block}: {source}")]
    StopFailed { block: u32, source: io::Error },
}

/// Launches and stops blocks of workers.
pub trait ProvisionProvider: Send {
    fn name(&self) -> &str;

    /// Cores per block.
    fn block_size(&self) -> u32;

    /// Starts block `index` against `dispatcher` and returns the ids the
    /// block's workers will register under. On error nothing of the block
    /// may be left running.
    fn start_block(&mut self, index: u32, dispatcher: &str) -> io::Result<Vec<u64>>;

    /// Stops a block. Graceful stops let running tasks finish within
    /// `timeout` before anything is killed.
    fn stop_block(&mut self, index: u32, graceful: bool, timeout: Duration) -> io::Result<()>;

    /// True once any worker of the block has exited on its own.
    fn block_exited(&mut self, _index: u32) -> bool {
        false
    }

    /// Worker processes or threads still owned by the provider.
    fn live_workers(&mut self) -> usize;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub index: u32,
    pub worker_ids: Vec<u64>,
    /// Seconds from launch until every worker of the block registered.
    pub boot_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub allocation_id: String,
    pub provider: String,
    pub requested_cores: u32,
    pub granted_cores: u32,
    pub block_size: u32,
    pub blocks: Vec<BlockInfo>,
    /// Unix-epoch nanoseconds.
    pub start: u64,
    pub end: Option<u64>,
    /// Mean seconds from launch to registration over the blocks.
    pub boot_cost: f64,
    pub released: bool,
}

impl Allocation {
    pub fn worker_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.blocks.iter().flat_map(|b| b.worker_ids.iter().copied())
    }
}

/// Cores granted for a request: whole blocks only.
pub fn granted_cores(requested: u32, block_size: u32) -> u32 {
    block_size * requested.div_ceil(block_size)
}

/// Utilization when one `job_width`-core job occupies a whole block, as a
/// batch scheduler without a second scheduling level would place it.
pub fn utilization_bound(job_width: u32, block_cores: u32) -> f64 {
    assert!(job_width > 0 && block_cores > 0, "arguments must be positive");
    job_width as f64 / block_cores as f64
}

/// Share of an allocation's lifetime spent booting instead of running tasks.
pub fn amortized_boot_overhead(boot_cost_s: f64, tasks_executed: u64, mean_task_s: f64) -> Result<f64, String> {
    if tasks_executed == 0 {
        return Err("at least one task must be executed".into());
    }
    if !(boot_cost_s >= 0.0 && mean_task_s >= 0.0) {
        return Err("durations must be non-negative".into());
    }
    let total = boot_cost_s + tasks_executed as f64 * mean_task_s;
    Ok(if total == 0.0 { 0.0 } else { boot_cost_s / total })
}

/// Decides how many blocks an allocation should hold. Only the static policy
/// is implemented; queue-driven growth would plug in here.
pub trait ProvisioningPolicy {
    fn desired_blocks(&self, current_blocks: u32, queued_tasks: usize) -> u32;
}

pub struct StaticPolicy;

impl ProvisioningPolicy for StaticPolicy {
    fn desired_blocks(&self, current_blocks: u32, _queued_tasks: usize) -> u32 {
        current_blocks
    }
}

pub struct Provisioner {
    provider: Box<dyn ProvisionProvider>,
    dispatcher: String,
    pub registration_timeout: Duration,
    pub drain_timeout: Duration,
    next_block: u32,
}

impl Provisioner {
    pub fn new(provider: Box<dyn ProvisionProvider>, dispatcher: impl Into<String>) -> Self {
        Provisioner {
            provider,
            dispatcher: dispatcher.into(),
            registration_timeout: Duration::from_secs(30),
            drain_timeout: Duration::from_secs(60),
            next_block: 0,
        }
    }

    pub fn provider_mut(&mut self) -> &mut dyn ProvisionProvider {
        &mut *self.provider
    }

    /// Starts enough blocks for `requested_cores` and waits until all their
    /// workers have registered. Partial starts are rolled back.
    pub fn provision(&mut self, requested_cores: u32, duration: Option<Duration>) -> Result<Allocation, ProvisionError> {
        let block_size = self.provider.block_size();
        if requested_cores == 0 || block_size == 0 {
            return Err(ProvisionError::InvalidRequest("cores and block size must be positive".into()));
        }
        let n_blocks = requested_cores.div_ceil(block_size);
        let start = now_ns();
        let mut blocks: Vec<BlockInfo> = Vec::with_capacity(n_blocks as usize);
        let mut launched = Vec::with_capacity(n_blocks as usize);
        let mut failure = None;
        for _ in 0..n_blocks {
            let index = self.next_block;
            self.next_block += 1;
            let t0 = Instant::now();
            match self.provider.start_block(index, &self.dispatcher) {
                Ok(ids) => launched.push((index, ids, t0)),
                Err(source) => {
                    failure = Some(ProvisionError::StartFailed { block: index, source });
                    break;
                }
            }
        }
        if failure.is_none() {
            match self.await_registration(&launched) {
                Ok(boot) => {
                    for ((index, ids, _), b) in launched.iter().zip(boot) {
                        blocks.push(BlockInfo { index: *index, worker_ids: ids.clone(), boot_cost: b });
                    }
                }
                Err(e) => failure = Some(e),
            }
        }
        if let Some(e) = failure {
            for (index, _, _) in &launched {
                if let Err(err) = self.provider.stop_block(*index, false, Duration::ZERO) {
                    log::error!("rollback of block {index} failed: {err}");
                }
            }
            return Err(e);
        }
        let boot_cost = blocks.iter().map(|b| b.boot_cost).sum::<f64>() / blocks.len() as f64;
        Ok(Allocation {
            allocation_id: format!("alloc-{:016x}", rand::random::<u64>()),
            provider: self.provider.name().to_string(),
            requested_cores,
            granted_cores: n_blocks * block_size,
            block_size,
            blocks,
            start,
            end: duration.map(|d| start + d.as_nanos() as u64),
            boot_cost,
            released: false,
        })
    }

    /// Polls dispatcher status until every launched worker is registered.
    /// Returns per-block boot cost in seconds.
    fn await_registration(&mut self, launched: &[(u32, Vec<u64>, Instant)]) -> Result<Vec<f64>, ProvisionError> {
        let deadline = Instant::now() + self.registration_timeout;
        let mut client = Client::connect_retry(&self.dispatcher, self.registration_timeout)
            .map_err(ProvisionError::Dispatcher)?;
        let mut boot: Vec<Option<f64>> = vec![None; launched.len()];
        loop {
            let status = client.status("").map_err(ProvisionError::Dispatcher)?;
            let mut missing = Vec::new();
            for (k, (index, ids, t0)) in launched.iter().enumerate() {
                if boot[k].is_some() {
                    continue;
                }
                let absent: Vec<u64> = ids
                    .iter()
                    .copied()
                    .filter(|id| !status.workers.iter().any(|w| w.worker_id == *id && w.status != WorkerStatus::Lost))
                    .collect();
                if absent.is_empty() {
                    boot[k] = Some(t0.elapsed().as_secs_f64());
                } else {
                    if self.provider.block_exited(*index) {
                        return Err(ProvisionError::StartFailed {
                            block: *index,
                            source: io::Error::other("a worker exited before registering"),
                        });
                    }
                    missing.extend(absent);
                }
            }
            if missing.is_empty() {
                return Ok(boot.into_iter().map(|b| b.expect("all registered")).collect());
            }
            if Instant::now() >= deadline {
                return Err(ProvisionError::RegistrationTimeout { missing, timeout: self.registration_timeout });
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    /// Stops every block of the allocation. Graceful release drains workers
    /// so in-flight tasks complete.
    pub fn release(&mut self, alloc: &mut Allocation, graceful: bool) -> Result<(), ProvisionError> {
        if alloc.released {
            return Ok(());
        }
        let mut first_err = None;
        for b in &alloc.blocks {
            if let Err(source) = self.provider.stop_block(b.index, graceful, self.drain_timeout) {
                first_err.get_or_insert(ProvisionError::StopFailed { block: b.index, source });
            }
        }
        alloc.released = true;
        alloc.end = Some(alloc.end.map_or(now_ns(), |e| e.min(now_ns())));
        first_err.map_or(Ok(()), Err)
    }

    /// Blocks until the allocation's end time (or `stop` returns true), then
    /// drains it.
    pub fn hold(&mut self, alloc: &mut Allocation, stop: impl Fn() -> bool) -> Result<(), ProvisionError> {
        loop {
            if stop() || alloc.end.is_some_and(|e| now_ns() >= e) {
                break;
            }
            std::thread::sleep(Duration::from_millis(50));
        }
        self.release(alloc, true)
    }

    pub fn live_workers(&mut self) -> usize {
        self.provider.live_workers()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_rounding() {
        assert_eq!(granted_cores(300, 256), 512);
        assert_eq!(granted_cores(256, 256), 256);
        assert_eq!(granted_cores(8, 4), 8);
        assert_eq!(granted_cores(1, 4), 4);
    }

    #[test]
    fn utilization() {
        assert!((utilization_bound(1, 256) - 0.0039).abs() < 1e-4);
        assert_eq!(utilization_bound(4, 256), 1.0 / 64.0);
        assert_eq!(utilization_bound(256, 256), 1.0);
    }

    #[test]
    fn boot_amortization() {
        assert!((amortized_boot_overhead(30.0, 1, 1.0).unwrap() - 0.968).abs() < 1e-3);
        assert!((amortized_boot_overhead(30.0, 10_000, 1.0).unwrap() - 0.003).abs() < 1e-4);
        assert!(amortized_boot_overhead(30.0, 0, 1.0).is_err());
    }
}
