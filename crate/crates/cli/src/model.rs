//! Model commands. All output is CSV on stdout.

use std::io::Write;

use anyhow::{anyhow, bail, Context, Result};
use manytask_bench::WorkloadTrace;
use manytask_core::proto::estimate_wire_bytes_per_task;
use manytask_model::sweep::{DEFAULT_PROCESSORS, DEFAULT_RATES};
use manytask_model::{
    closed_form_sweep, des_run, des_run_durations, des_sweep, io_overhead_per_task, log_grid,
    min_task_length_for_efficiency, DurationDist, SimConfig, SimResult,
};

use crate::args::{CurvesArgs, MinLengthArgs, ModelArgs, ModelCommand, SimArgs, WireArgs};
use crate::config::RunConfig;

pub fn model(cfg: RunConfig, a: ModelArgs) -> Result<i32> {
    let mut out = std::io::stdout().lock();
    match a.command.unwrap_or(ModelCommand::Curves(CurvesArgs {
        min_len: 0.1,
        max_len: 100_000.0,
        per_decade: 4,
        seed: 1,
        ..Default::default()
    })) {
        ModelCommand::Curves(c) => curves(&c, &mut out)?,
        ModelCommand::Sim(s) => sim(&s, &mut out)?,
        ModelCommand::Wire(w) => wire(&cfg, &w, &mut out)?,
        ModelCommand::MinLength(m) => min_length(&cfg, &m, &mut out)?,
    }
    out.flush()?;
    Ok(0)
}

/// One row per (curve, task length); a curve is a (processors, rate) pair.
pub fn curves(a: &CurvesArgs, out: &mut impl Write) -> Result<()> {
    let procs = if a.processors.is_empty() { DEFAULT_PROCESSORS.to_vec() } else { a.processors.clone() };
    let rates = if a.rates.is_empty() { DEFAULT_RATES.to_vec() } else { a.rates.clone() };
    let lens = log_grid(a.min_len, a.max_len, a.per_decade)?;
    let points = match a.des_waves {
        Some(w) => des_sweep(&procs, &rates, &lens, w, a.seed)?,
        None => closed_form_sweep(&procs, &rates, &lens)?,
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["curve", "processors", "rate", "task_len", "efficiency"])?;
    for p in points {
        w.write_record([
            format!("P={},r={}", p.processors, p.rate),
            p.processors.to_string(),
            p.rate.to_string(),
            p.task_len.to_string(),
            p.efficiency.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_dist(s: &str) -> Result<DurationDist<f64>> {
    let (kind, rest) = s.split_once(':').ok_or_else(|| anyhow!("distribution {s:?} is not KIND:PARAMS"))?;
    let nums: Vec<f64> =
        rest.split(',').map(|v| v.trim().parse::<f64>()).collect::<Result<_, _>>().context("distribution parameters")?;
    let d = match (kind, nums.as_slice()) {
        ("constant", [s]) => DurationDist::constant(*s),
        ("normal", [mean, sd]) => DurationDist::Normal { mean: *mean, sd: *sd },
        ("lognormal", [mean, sd]) => DurationDist::lognormal_from_moments(*mean, *sd)?,
        _ => bail!("unsupported distribution {s:?} (constant:S, normal:MEAN,SD, lognormal:MEAN,SD)"),
    };
    d.validate()?;
    Ok(d)
}

/// Builds the simulation config from `--from`, then applies flags.
pub fn sim_config(a: &SimArgs) -> Result<(SimConfig<f64>, Option<Vec<f64>>)> {
    let mut cfg = match &a.from {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SimConfig<f64>>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SimConfig::new(1, 1, DurationDist::constant(1.0), 1.0),
    };
    let mut durations = None;
    if let Some(t) = &a.trace {
        let trace = WorkloadTrace::read_jsonl(t)?;
        cfg.tasks = trace.entries.len();
        cfg.durations = trace.as_dist();
        durations = Some(trace.durations());
    }
    if let Some(d) = &a.dist {
        cfg.durations = parse_dist(d)?;
    }
    if let Some(p) = a.processors {
        cfg.processors = p;
    }
    if let Some(n) = a.tasks {
        if durations.is_some() {
            bail!("--tasks conflicts with --trace");
        }
        cfg.tasks = n;
    }
    if let Some(r) = a.rate {
        cfg.dispatch_rate = r;
    }
    if let Some(b) = a.bundle {
        cfg.bundle_size = b;
    }
    if let Some(l) = a.latency {
        cfg.per_task_latency = l;
    }
    cfg.record_tasks |= a.tasks_csv.is_some();
    if a.timeline_csv.is_some() {
        cfg.timeline_interval = Some(a.interval.unwrap_or(1.0));
    }
    cfg.validate()?;
    Ok((cfg, durations))
}

pub fn sim(a: &SimArgs, out: &mut impl Write) -> Result<()> {
    let (cfg, durations) = sim_config(a)?;
    let res = match durations {
        Some(d) => des_run_durations(&cfg, d)?,
        None => des_run(&cfg, a.seed)?,
    };
    write_sim_summary(&cfg, &res, out)?;
    if let Some(p) = &a.tasks_csv {
        // headers come from the record fields
        let mut w = csv::Writer::from_path(p)?;
        for t in &res.tasks {
            w.serialize(t)?;
        }
        if res.tasks.is_empty() {
            w.write_record(["index", "processor", "dispatched", "started", "finished", "duration", "io"])?;
        }
        w.flush()?;
    }
    if let Some(p) = &a.timeline_csv {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["time", "active"])?;
        for (t, n) in &res.timeline {
            w.write_record([t.to_string(), n.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn write_sim_summary(cfg: &SimConfig<f64>, res: &SimResult<f64>, out: &mut impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "processors",
        "tasks",
        "dispatch_rate",
        "bundle_size",
        "makespan",
        "efficiency",
        "utilization",
        "speedup",
        "work",
        "mean_task_time",
    ])?;
    w.write_record([
        cfg.processors.to_string(),
        cfg.tasks.to_string(),
        cfg.dispatch_rate.to_string(),
        cfg.bundle_size.to_string(),
        res.makespan.to_string(),
        res.efficiency.to_string(),
        res.utilization.to_string(),
        res.speedup.to_string(),
        res.work.to_string(),
        res.mean_task_time.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn wire(cfg: &RunConfig, a: &WireArgs, out: &mut impl Write) -> Result<()> {
    let cal = cfg.model.wire();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task_size", "bytes_per_task", "packets_per_task"])?;
    for &s in &a.task_size {
        let e = estimate_wire_bytes_per_task(s, &cal)?;
        w.write_record([s.to_string(), e.bytes_per_task.to_string(), e.packets_per_task.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// The per-task overhead is given directly or derived from shared-filesystem
/// traffic at the configured aggregate bandwidth.
pub fn min_length(cfg: &RunConfig, a: &MinLengthArgs, out: &mut impl Write) -> Result<()> {
    let overhead = match (a.overhead, a.bytes, a.processors) {
        (Some(o), _, _) => o,
        (None, Some(b), Some(p)) => io_overhead_per_task(b, p, cfg.model.aggregate_bw, a.op_latency, a.ops)?,
        _ => bail!("give --overhead, or --bytes with --processors"),
    };
    let t = min_task_length_for_efficiency(a.efficiency, overhead)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["efficiency", "overhead", "min_task_length"])?;
    w.write_record([a.efficiency.to_string(), overhead.to_string(), t.to_string()])?;
    w.flush()?;
    Ok(())
}
