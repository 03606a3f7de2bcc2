//! Closed-form efficiency relations for a central dispatcher feeding a pool
//! of processors.
//!
//! Efficiency throughout is achieved speedup over ideal speedup. All rates
//! are tasks/sec, durations are seconds and bandwidths are bits/sec.

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

fn positive<T: Scalar>(name: &str, v: T) -> Result<T> {
    if v > T::zero() && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

fn non_negative<T: Scalar>(name: &str, v: T) -> Result<T> {
    if v >= T::zero() && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(format!("{name} must be non-negative and finite, got {v}")))
    }
}

/// Steady-state efficiency of `processors` running `task_len`-second tasks
/// handed out by a dispatcher that sustains `rate` tasks/sec.
///
/// The sustained completion rate is `min(rate, processors / task_len)`, and
/// the ideal is `processors / task_len`, giving `min(1, rate * task_len / processors)`.
pub fn closed_form_efficiency<T: Scalar>(processors: T, task_len: T, rate: T) -> Result<T> {
    let p = positive("processors", processors)?;
    let t = positive("task length", task_len)?;
    let r = positive("dispatch rate", rate)?;
    Ok((r * t / p).min(T::one()))
}

/// Shortest task length reaching efficiency `target` under the closed-form
/// dispatch model. Targets at or above 1 need `rate * t >= processors`.
pub fn min_task_length_for_dispatch<T: Scalar>(target: T, processors: T, rate: T) -> Result<T> {
    let p = positive("processors", processors)?;
    let r = positive("dispatch rate", rate)?;
    if !(target > T::zero() && target <= T::one()) {
        return Err(invalid(format!("target efficiency must be in (0, 1], got {target}")));
    }
    Ok(target * p / r)
}

/// Task length needed to hold efficiency `target` when every task carries a
/// fixed `overhead` seconds, from `efficiency = t / (t + overhead)`.
pub fn min_task_length_for_efficiency<T: Scalar>(target: T, overhead: T) -> Result<T> {
    if !(target > T::zero() && target < T::one()) {
        return Err(invalid(format!("target efficiency must be in (0, 1), got {target}")));
    }
    let o = non_negative("overhead", overhead)?;
    Ok(o * target / (T::one() - target))
}

/// Share of an aggregate bandwidth each of `processors` concurrent accessors
/// receives, in the same unit as `aggregate_bw`.
pub fn per_processor_bandwidth<T: Scalar>(aggregate_bw: T, processors: T) -> Result<T> {
    let bw = positive("aggregate bandwidth", aggregate_bw)?;
    let p = positive("processors", processors)?;
    Ok(bw / p)
}

/// Seconds of shared-filesystem overhead per task when `processors` tasks
/// split `aggregate_bw` (bits/sec) evenly: `ops * per_op_latency + bytes / share`.
pub fn io_overhead_per_task<T: Scalar>(
    bytes_rw: T,
    processors: T,
    aggregate_bw: T,
    per_op_latency: T,
    ops: T,
) -> Result<T> {
    let bytes = non_negative("bytes", bytes_rw)?;
    let latency = non_negative("per-op latency", per_op_latency)?;
    let ops = non_negative("ops", ops)?;
    let share_bits = per_processor_bandwidth(aggregate_bw, processors)?;
    let share_bytes = share_bits / T::lit(8.0);
    Ok(ops * latency + bytes / share_bytes)
}
