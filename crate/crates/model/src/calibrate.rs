//! Fits the shared filesystem bandwidth that reproduces an observed mean
//! task time under contention. The fitted value is a calibration artifact,
//! not a measurement.

use serde::{Deserialize, Serialize};

use crate::des::{des_run, SimConfig};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthFit<T> {
    /// Aggregate bandwidth in bits/sec, applied to both reads and writes.
    pub aggregate_bw: T,
    pub mean_task_time: T,
    pub target_mean_task_time: T,
    pub iterations: usize,
}

/// Bisects (in log space) on the aggregate bandwidth of `template.shared_io`
/// until the simulated mean task time matches `target` within `rel_tol`.
/// Mean task time decreases with bandwidth, so the answer must be bracketed
/// by `[lo_bw, hi_bw]`.
pub fn fit_aggregate_bw<T: Scalar>(
    template: &SimConfig<T>,
    target: T,
    lo_bw: T,
    hi_bw: T,
    rel_tol: T,
    seed: u64,
) -> Result<BandwidthFit<T>> {
    if template.shared_io.is_none() {
        return Err(invalid("calibration needs a shared_io template"));
    }
    if !(lo_bw > T::zero() && hi_bw > lo_bw && target > T::zero()) {
        return Err(invalid("need 0 < lo_bw < hi_bw and a positive target"));
    }
    let eval = |bw: T| -> Result<T> {
        let mut cfg = template.clone();
        if let Some(io) = cfg.shared_io.as_mut() {
            io.aggregate_read_bw = bw;
            io.aggregate_write_bw = bw;
        }
        Ok(des_run(&cfg, seed)?.mean_task_time)
    };
    let (mut lo, mut hi) = (lo_bw.ln(), hi_bw.ln());
    let (slow, fast) = (eval(lo_bw)?, eval(hi_bw)?);
    if !(slow >= target && fast <= target) {
        return Err(invalid(format!(
            "target {target} not bracketed: mean task time spans [{fast}, {slow}]"
        )));
    }
    let mut best = (hi_bw, fast);
    for i in 1..=100 {
        let mid = (lo + hi) / T::lit(2.0);
        let bw = mid.exp();
        let m = eval(bw)?;
        best = (bw, m);
        if ((m - target) / target).abs() <= rel_tol {
            return Ok(BandwidthFit { aggregate_bw: bw, mean_task_time: m, target_mean_task_time: target, iterations: i });
        }
        if m > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(BandwidthFit { aggregate_bw: best.0, mean_task_time: best.1, target_mean_task_time: target, iterations: 100 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::des::SharedIo;
    use crate::dist::DurationDist;

    #[test]
    fn recovers_contention_time() {
        let mut cfg = SimConfig::new(256, 512, DurationDist::constant(17.3_f64), 1e6);
        cfg.shared_io = Some(SharedIo {
            bytes_read: 4e6,
            bytes_written: 1e6,
            aggregate_read_bw: 1.0,
            aggregate_write_bw: 1.0,
            per_op_latency: 0.0,
        });
        let fit = fit_aggregate_bw(&cfg, 42.9, 1e6, 1e12, 0.005, 3).unwrap();
        assert!((fit.mean_task_time - 42.9).abs() / 42.9 <= 0.005, "{fit:?}");
        assert!(fit.aggregate_bw > 1e6 && fit.aggregate_bw < 1e12);
    }

    #[test]
    fn rejects_unbracketed_target() {
        let mut cfg = SimConfig::new(4, 4, DurationDist::constant(1.0_f64), 1e6);
        cfg.shared_io = Some(SharedIo {
            bytes_read: 1.0,
            bytes_written: 0.0,
            aggregate_read_bw: 1.0,
            aggregate_write_bw: 1.0,
            per_op_latency: 0.0,
        });
        assert!(fit_aggregate_bw(&cfg, 0.5, 1e3, 1e9, 0.01, 0).is_err());
    }
}
