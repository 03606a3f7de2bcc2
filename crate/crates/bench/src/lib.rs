//! Benchmark harness: live throughput and efficiency runs, filesystem
//! contention, synthetic workload traces and their replay.

pub mod error;
pub mod fsbench;
pub mod live;
pub mod replay;
pub mod report;
pub mod throughput;
pub mod trace;

pub use error::{BenchError, Result};
pub use fsbench::{fs_bench, fs_point, FsMode, FsParams};
pub use live::{LiveConfig, LiveRun, LiveSystem};
pub use replay::{
    active_series, export_active_series, export_timeline, replay, sim_metrics, timeline_from_events, ReplayOutcome,
    ReplayTarget, SimOverrides, TimelineRow, DEFAULT_TIME_SCALE,
};
pub use report::{BenchReport, Environment, Summary, Trial};
pub use throughput::{efficiency_bench, efficiency_point, throughput_bench, throughput_point, EfficiencyParams, ThroughputParams};
pub use trace::{generate_trace, IoProfile, TraceEntry, TraceMeta, TraceParams, WorkloadTrace};
