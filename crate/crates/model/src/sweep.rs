//! Efficiency-versus-task-length curve families for a range of dispatch rates.

use serde::{Deserialize, Serialize};

use crate::analytic::closed_form_efficiency;
use crate::des::{des_run, SimConfig};
use crate::dist::DurationDist;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

pub const DEFAULT_RATES: [f64; 5] = [1.0, 10.0, 100.0, 1000.0, 10000.0];
pub const DEFAULT_PROCESSORS: [usize; 2] = [4096, 163_840];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint<T> {
    pub processors: usize,
    pub rate: T,
    pub task_len: T,
    pub efficiency: T,
}

/// `per_decade` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid<T: Scalar>(lo: T, hi: T, per_decade: usize) -> Result<Vec<T>> {
    if !(lo > T::zero() && hi >= lo) || per_decade == 0 {
        return Err(invalid("log grid needs 0 < lo <= hi and per_decade >= 1"));
    }
    let (a, b) = (lo.log10(), hi.log10());
    let steps = ((b - a) * T::count(per_decade)).round().to_usize().unwrap_or(0).max(1);
    Ok((0..=steps)
        .map(|i| T::lit(10.0).powf(a + (b - a) * T::count(i) / T::count(steps)))
        .collect())
}

/// Closed-form curves for every `(P, r)` over `task_lens`.
pub fn closed_form_sweep<T: Scalar>(processors: &[usize], rates: &[T], task_lens: &[T]) -> Result<Vec<SweepPoint<T>>> {
    let mut out = Vec::with_capacity(processors.len() * rates.len() * task_lens.len());
    for &p in processors {
        for &r in rates {
            for &t in task_lens {
                out.push(SweepPoint {
                    processors: p,
                    rate: r,
                    task_len: t,
                    efficiency: closed_form_efficiency(T::count(p), t, r)?,
                });
            }
        }
    }
    Ok(out)
}

/// Simulated curves with constant durations and `waves * P` tasks per point.
pub fn des_sweep<T: Scalar>(
    processors: &[usize],
    rates: &[T],
    task_lens: &[T],
    waves: usize,
    seed: u64,
) -> Result<Vec<SweepPoint<T>>> {
    if waves == 0 {
        return Err(invalid("waves must be >= 1"));
    }
    let mut out = Vec::new();
    for &p in processors {
        for &r in rates {
            for &t in task_lens {
                let cfg = SimConfig::new(p, p * waves, DurationDist::constant(t), r);
                out.push(SweepPoint {
                    processors: p,
                    rate: r,
                    task_len: t,
                    efficiency: des_run(&cfg, seed)?.efficiency,
                });
            }
        }
    }
    Ok(out)
}
