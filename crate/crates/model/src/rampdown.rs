//! Efficiency lost to duration variance in the final waves of a run.

use crate::des::{des_run, SimConfig};
use crate::dist::DurationDist;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Efficiency of `config` with every duration replaced by the distribution
/// mean, minus the efficiency of `config` itself. Both runs use `seed`.
pub fn ramp_down_loss_with<T: Scalar>(config: &SimConfig<T>, seed: u64) -> Result<T> {
    if config.tasks < config.processors {
        return Err(invalid("ramp-down loss needs at least one task per processor"));
    }
    let varied = des_run(config, seed)?;
    let mut flat = config.clone();
    flat.durations = DurationDist::constant(config.durations.mean());
    let base = des_run(&flat, seed)?;
    Ok(base.efficiency - varied.efficiency)
}

/// Ramp-down loss with a dispatcher fast enough to never be the bottleneck.
pub fn ramp_down_loss<T: Scalar>(durations: DurationDist<T>, processors: usize, tasks: usize, seed: u64) -> Result<T> {
    let config = SimConfig::new(processors, tasks, durations, T::lit(1e9));
    ramp_down_loss_with(&config, seed)
}
