//! Performance model for many-task dispatch: closed-form efficiency bounds,
//! task-duration laws and a discrete-event simulator.
//!
//! Everything is generic over the floating-point type; `f64` aliases are
//! provided for the common case.

pub mod analytic;
pub mod calibrate;
pub mod des;
pub mod dist;
pub mod error;
pub mod rampdown;
pub mod scalar;
pub mod sweep;

pub use analytic::{
    closed_form_efficiency, io_overhead_per_task, min_task_length_for_dispatch, min_task_length_for_efficiency,
    per_processor_bandwidth,
};
pub use calibrate::{fit_aggregate_bw, BandwidthFit};
pub use des::{des_run, des_run_durations, IoStats, SharedIo, SimConfig, SimResult, SimTask};
pub use dist::DurationDist;
pub use error::{ModelError, Result};
pub use rampdown::{ramp_down_loss, ramp_down_loss_with};
pub use scalar::Scalar;
pub use sweep::{closed_form_sweep, des_sweep, log_grid, SweepPoint};

pub type SimConfigF64 = SimConfig<f64>;
pub type SimResultF64 = SimResult<f64>;
pub type SharedIoF64 = SharedIo<f64>;
pub type DurationDistF64 = DurationDist<f64>;
