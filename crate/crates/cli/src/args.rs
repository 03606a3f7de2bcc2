use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use manytask_core::proto::DispatchMode;
use manytask_core::worker::ExecBackend;

#[derive(Debug, Parser)]
#[command(name = "manytask", version, about = "Many-task dispatcher, workers, provisioning and benchmarks")]
pub struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, short, global = true, env = "MANYTASK_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the dispatcher until SIGINT/SIGTERM.
    Serve(ServeArgs),
    /// Run one worker executor; SIGTERM drains it.
    Worker(WorkerArgs),
    /// Acquire workers in blocks, hold them, then release.
    Provision(ProvisionArgs),
    /// Submit a command file or trace and wait for the run.
    Submit(SubmitArgs),
    /// Re-execute the unfinished tasks of a logged run.
    Resume(ResumeArgs),
    /// Dispatcher and run status as JSON.
    Status(StatusArgs),
    /// Run metrics from a run log, optionally compared with a reference run.
    Stats(StatsArgs),
    /// Run a benchmark and write its report.
    Bench(BenchArgs),
    /// Generate a synthetic workload trace.
    Trace(TraceArgs),
    /// Efficiency curves, simulations and cost formulas.
    Model(ModelArgs),
    /// Print the effective configuration.
    Config,
}

pub fn parse_backend(s: &str) -> Result<ExecBackend, String> {
    match s {
        "process" => Ok(ExecBackend::Process),
        "builtin" => Ok(ExecBackend::Builtin),
        _ => Err(format!("unknown backend {s:?} (process, builtin)")),
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address; overrides the config and MANYTASK_ADDRESS.
    #[arg(long)]
    pub address: Option<String>,
    /// Run-log directory; overrides the config and MANYTASK_LOG_DIR.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    #[arg(long)]
    pub bundle_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct WorkerArgs {
    #[arg(long)]
    pub dispatcher: Option<String>,
    /// 0 picks a random id.
    #[arg(long)]
    pub worker_id: Option<u64>,
    #[arg(long)]
    pub cores: Option<u32>,
    #[arg(long)]
    pub scratch_dir: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<DispatchMode>,
    #[arg(long, value_parser = parse_backend)]
    pub exec: Option<ExecBackend>,
    #[arg(long)]
    pub prefetch: Option<u32>,
    /// Give up connecting after this many seconds.
    #[arg(long)]
    pub connect_timeout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ProvisionArgs {
    #[arg(long)]
    pub cores: u32,
    /// Release after this many seconds; without it, hold until a signal.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Run local workers as threads of this process instead of child processes.
    #[arg(long)]
    pub in_process: bool,
    #[arg(long)]
    pub dispatcher: Option<String>,
}

#[derive(Debug, Args)]
pub struct SubmitArgs {
    /// One shell command per line (`#` comments), or a JSONL workload trace.
    pub file: PathBuf,
    #[arg(long)]
    pub run_id: Option<String>,
    /// Multiplier for trace durations; defaults to `[bench] time_scale`.
    #[arg(long)]
    pub time_scale: Option<f64>,
    /// Return once submitted.
    #[arg(long)]
    pub no_wait: bool,
    /// Seconds to wait for completion.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub dispatcher: Option<String>,
}

#[derive(Debug, Args)]
pub struct ResumeArgs {
    pub run_id: String,
    #[arg(long)]
    pub no_wait: bool,
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub dispatcher: Option<String>,
}

#[derive(Debug, Args)]
pub struct StatusArgs {
    pub run_id: Option<String>,
    /// Read the run log instead of asking the dispatcher.
    #[arg(long)]
    pub offline: bool,
    #[arg(long)]
    pub dispatcher: Option<String>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    pub run_id: String,
    /// Reference run for speedup and efficiency.
    #[arg(long)]
    pub against: Option<String>,
    /// Core count of the reference run; defaults to its logged workers.
    #[arg(long)]
    pub ref_cores: Option<u64>,
    /// Core count of this run; defaults to its logged workers.
    #[arg(long)]
    pub cores: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// throughput, efficiency, fs or replay.
    pub name: String,
    /// Parameter override `key=value`; values are TOML (`[1, 10]`, `"s"`, `2.5`).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Report directory; defaults to `[bench] out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// dock, mars, uniform or constant.
    pub kind: String,
    #[arg(long, short)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Generator parameter override `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[command(subcommand)]
    pub command: Option<ModelCommand>,
}

#[derive(Debug, Subcommand)]
pub enum ModelCommand {
    /// Efficiency versus task length per (processors, rate); the default.
    Curves(CurvesArgs),
    /// One discrete-event simulation.
    Sim(SimArgs),
    /// Bytes and packets on the wire per task.
    Wire(WireArgs),
    /// Shortest task length reaching a target efficiency.
    MinLength(MinLengthArgs),
}

#[derive(Debug, Args, Default)]
pub struct CurvesArgs {
    #[arg(long, value_delimiter = ',')]
    pub processors: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub rates: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub min_len: f64,
    #[arg(long, default_value_t = 100_000.0)]
    pub max_len: f64,
    #[arg(long, default_value_t = 4)]
    pub per_decade: usize,
    /// Simulate each point (this many waves of tasks) instead of the closed form.
    #[arg(long)]
    pub des_waves: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Simulation config (TOML, the serialized form of the simulator config).
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long)]
    pub processors: Option<usize>,
    #[arg(long)]
    pub tasks: Option<usize>,
    /// `constant:S`, `normal:MEAN,SD`, `lognormal:MEAN,SD`.
    #[arg(long)]
    pub dist: Option<String>,
    /// Replay this trace's durations instead of sampling.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub bundle: Option<usize>,
    #[arg(long)]
    pub latency: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Write per-task records here.
    #[arg(long)]
    pub tasks_csv: Option<PathBuf>,
    /// Write active-task samples here, every `--interval` seconds.
    #[arg(long)]
    pub timeline_csv: Option<PathBuf>,
    #[arg(long)]
    pub interval: Option<f64>,
}

#[derive(Debug, Args)]
pub struct WireArgs {
    /// Task description sizes in bytes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub task_size: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct MinLengthArgs {
    #[arg(long)]
    pub efficiency: f64,
    /// Fixed per-task overhead in seconds.
    #[arg(long, conflicts_with = "bytes")]
    pub overhead: Option<f64>,
    /// Bytes each task moves through the shared filesystem.
    #[arg(long, requires = "processors")]
    pub bytes: Option<f64>,
    #[arg(long)]
    pub processors: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub ops: f64,
    #[arg(long, default_value_t = 0.0)]
    pub op_latency: f64,
}
