//! Synthetic workload traces, stored as JSON lines behind a metadata header.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use manytask_core::proto::{TaskId, TaskSpec};
use manytask_model::DurationDist;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, BenchError, Result};

pub const TRACE_FORMAT: &str = "manytask-trace";
pub const TRACE_VERSION: u32 = 1;

/// Generator parameters, one variant per workload kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceParams {
    /// Heavy-tailed docking-style durations: log-normal, clamped to `[min, max]`.
    Dock { mean: f64, sd: f64, min: f64, max: f64 },
    /// Each task runs `batch` micro-tasks of normal duration.
    Mars { micro_mean: f64, micro_sd: f64, batch: u32 },
    Uniform { min: f64, max: f64 },
    Constant { seconds: f64 },
}

impl TraceParams {
    pub fn dock() -> Self {
        TraceParams::Dock { mean: 660.0, sd: 478.8, min: 5.8, max: 4178.0 }
    }

    pub fn mars() -> Self {
        TraceParams::Mars { micro_mean: 0.454, micro_sd: 0.026, batch: 144 }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TraceParams::Dock { .. } => "dock",
            TraceParams::Mars { .. } => "mars",
            TraceParams::Uniform { .. } => "uniform",
            TraceParams::Constant { .. } => "constant",
        }
    }

    /// Defaults for a kind name; `constant` and `uniform` need explicit values.
    pub fn default_for(kind: &str) -> Result<Self> {
        match kind {
            "dock" => Ok(Self::dock()),
            "mars" => Ok(Self::mars()),
            "constant" => Ok(TraceParams::Constant { seconds: 1.0 }),
            "uniform" => Ok(TraceParams::Uniform { min: 0.0, max: 2.0 }),
            other => Err(invalid_arg(format!("unknown trace kind {other:?} (dock, mars, uniform, constant)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        let good = match *self {
            TraceParams::Dock { mean, sd, min, max } => ok(mean) && mean > 0.0 && ok(sd) && ok(min) && ok(max) && min <= mean && mean <= max,
            TraceParams::Mars { micro_mean, micro_sd, batch } => ok(micro_mean) && ok(micro_sd) && batch >= 1,
            TraceParams::Uniform { min, max } => ok(min) && ok(max) && min <= max,
            TraceParams::Constant { seconds } => ok(seconds),
        };
        if good {
            Ok(())
        } else {
            Err(invalid_arg(format!("invalid trace parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IoProfile {
    pub read_bytes: u64,
    pub write_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub index: u64,
    pub task_id: TaskId,
    /// Seconds, unscaled.
    pub duration: f64,
    pub payload_size: u64,
    #[serde(default = "one")]
    pub micro_tasks: u32,
    #[serde(default)]
    pub io: IoProfile,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub params: TraceParams,
    pub n: usize,
    pub seed: u64,
    /// How the duration law was fitted to the parameters.
    pub fit: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadTrace {
    pub meta: TraceMeta,
    pub entries: Vec<TraceEntry>,
}

/// Clamped moments of a log-normal law, by Simpson integration over the
/// underlying standard normal.
fn clamped_lognormal_moments(mu: f64, sigma: f64, lo: f64, hi: f64) -> (f64, f64) {
    const STEPS: usize = 4000;
    const Z: f64 = 10.0;
    let h = 2.0 * Z / STEPS as f64;
    let (mut m1, mut m2) = (0.0, 0.0);
    for i in 0..=STEPS {
        let z = -Z + i as f64 * h;
        let w = if i == 0 || i == STEPS { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let x = (mu + sigma * z).exp().clamp(lo, hi);
        m1 += w * pdf * x;
        m2 += w * pdf * x * x;
    }
    m1 *= h / 3.0;
    m2 *= h / 3.0;
    (m1, (m2 - m1 * m1).max(0.0).sqrt())
}

/// Log-normal `(mu, sigma)` whose draws, clamped to `[lo, hi]`, have the
/// requested mean and standard deviation. Fixed-point iteration on the
/// unclamped moments.
pub fn fit_clamped_lognormal(mean: f64, sd: f64, lo: f64, hi: f64) -> Result<(f64, f64)> {
    let (mut m, mut s) = (mean, sd);
    for _ in 0..200 {
        let (mu, sigma) = match DurationDist::lognormal_from_moments(m, s)? {
            DurationDist::LogNormal { mu, sigma } => (mu, sigma),
            _ => unreachable!(),
        };
        let (cm, cs) = clamped_lognormal_moments(mu, sigma, lo, hi);
        if (cm - mean).abs() < 1e-9 * mean && (cs - sd).abs() < 1e-9 * sd.max(1.0) {
            return Ok((mu, sigma));
        }
        m = (m + mean - cm).max(1e-9);
        s = (s + sd - cs).max(0.0);
    }
    Err(invalid_arg(format!("cannot fit a clamped log-normal to mean {mean}, sd {sd} on [{lo}, {hi}]")))
}

/// Generates `n` entries deterministically from `(params, seed)`.
pub fn generate_trace(params: &TraceParams, n: usize, seed: u64) -> Result<WorkloadTrace> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (durations, micro, fit) = match *params {
        TraceParams::Dock { mean, sd, min, max } => {
            let (mu, sigma) = fit_clamped_lognormal(mean, sd, min, max)?;
            let d = DurationDist::LogNormal { mu, sigma }.sample_n(n, &mut rng)?;
            let d = d.into_iter().map(|x: f64| x.clamp(min, max)).collect();
            (d, 1, format!("log-normal mu={mu:.6} sigma={sigma:.6}, moments matched after clamping to [{min}, {max}]"))
        }
        TraceParams::Mars { micro_mean, micro_sd, batch } => {
            let inner = DurationDist::Normal { mean: micro_mean, sd: micro_sd };
            let d = DurationDist::Batched { inner: Box::new(inner), count: batch }.sample_n(n, &mut rng)?;
            (d, batch, format!("sum of {batch} normal({micro_mean}, {micro_sd}) draws truncated at zero"))
        }
        TraceParams::Uniform { min, max } => {
            use rand::Rng;
            let d = (0..n).map(|_| if max > min { rng.gen_range(min..max) } else { min }).collect();
            (d, 1, format!("uniform on [{min}, {max})"))
        }
        TraceParams::Constant { seconds } => (vec![seconds; n], 1, format!("constant {seconds}")),
    };
    let run = format!("trace-{}-{seed}", params.kind());
    let entries = durations
        .into_iter()
        .enumerate()
        .map(|(i, duration)| TraceEntry {
            index: i as u64,
            task_id: TaskId::derive(&run, i as u64, b""),
            duration,
            payload_size: 0,
            micro_tasks: micro,
            io: IoProfile::default(),
        })
        .collect();
    Ok(WorkloadTrace {
        meta: TraceMeta {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            kind: params.kind().into(),
            params: params.clone(),
            n,
            seed,
            fit,
        },
        entries,
    })
}

impl WorkloadTrace {
    /// Sets every entry's payload size and shared I/O profile.
    pub fn with_io(mut self, payload_size: u64, io: IoProfile) -> Self {
        for e in &mut self.entries {
            e.payload_size = payload_size;
            e.io = io;
        }
        self
    }

    pub fn durations(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.duration).collect()
    }

    pub fn mean(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().map(|e| e.duration).sum::<f64>() / self.entries.len() as f64
    }

    /// Sample standard deviation.
    pub fn sd(&self) -> f64 {
        let n = self.entries.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.entries.iter().map(|e| (e.duration - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }

    pub fn micro_tasks(&self) -> u64 {
        self.entries.iter().map(|e| e.micro_tasks as u64).sum()
    }

    pub fn total_work(&self) -> f64 {
        self.entries.iter().map(|e| e.duration).sum()
    }

    /// Durations replayed in trace order.
    pub fn as_dist(&self) -> DurationDist<f64> {
        DurationDist::Empirical { samples: self.durations() }
    }

    /// Live tasks: each entry sleeps for its duration times `time_scale`.
    pub fn to_specs(&self, run_id: &str, time_scale: f64) -> Vec<TaskSpec> {
        self.entries
            .iter()
            .map(|e| {
                let cmd = format!("sleep {:.6}", e.duration * time_scale);
                let id = TaskId::derive(run_id, e.index, e.task_id.to_hex().as_bytes());
                let mut s = TaskSpec::new(id, cmd);
                s.payload = vec![b'x'; e.payload_size as usize];
                s
            })
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &self.meta)?;
        w.write_all(b"\n")?;
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let mut lines = BufReader::new(File::open(path)?).lines();
        let first = lines.next().ok_or_else(|| invalid_arg(format!("{}: empty trace", path.display())))??;
        let meta: TraceMeta = serde_json::from_str(&first)?;
        if meta.format != TRACE_FORMAT || meta.version != TRACE_VERSION {
            return Err(invalid_arg(format!(
                "{}: unsupported trace format {} v{}",
                path.display(),
                meta.format,
                meta.version
            )));
        }
        let mut entries = Vec::with_capacity(meta.n);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line)?);
        }
        if entries.len() != meta.n {
            return Err(BenchError::InvalidArgument(format!(
                "{}: header promises {} entries, found {}",
                path.display(),
                meta.n,
                entries.len()
            )));
        }
        Ok(WorkloadTrace { meta, entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_fit_recovers_moments() {
        let (mu, sigma) = fit_clamped_lognormal(660.0, 478.8, 5.8, 4178.0).unwrap();
        let (m, s) = clamped_lognormal_moments(mu, sigma, 5.8, 4178.0);
        assert!((m - 660.0).abs() < 1e-6);
        assert!((s - 478.8).abs() < 1e-6);
    }

    #[test]
    fn wide_clamp_is_plain_lognormal() {
        let (m, s) = clamped_lognormal_moments(1.0, 0.5, 0.0, f64::INFINITY);
        let mean = (1.0f64 + 0.125).exp();
        assert!((m - mean).abs() < 1e-6 * mean);
        let var = ((0.25f64).exp() - 1.0) * (2.0f64 + 0.25).exp();
        assert!((s - var.sqrt()).abs() < 1e-6 * s);
    }
}
