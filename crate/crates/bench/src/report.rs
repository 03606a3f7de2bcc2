//! Benchmark reports: CSV with a versioned header line, plus a JSON summary.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;

pub const REPORT_FORMAT: &str = "manytask-bench-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub hostname: String,
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub version: String,
}

impl Environment {
    pub fn capture() -> Self {
        let hostname = std::fs::read_to_string("/proc/sys/kernel/hostname")
            .map(|s| s.trim().to_string())
            .unwrap_or_else(|_| "unknown".into());
        Environment {
            hostname,
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// One measurement at one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub point: String,
    pub trial: u32,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub point: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single trial.
    pub sd: f64,
    pub min: f64,
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub params: BTreeMap<String, Value>,
    pub trials: Vec<Trial>,
    pub summary: Vec<Summary>,
    /// Headline figures derived from the trials.
    pub derived: BTreeMap<String, f64>,
    /// False when a trial broke the benchmark's preconditions.
    pub valid: bool,
    pub notes: Vec<String>,
    pub environment: Environment,
}

impl BenchReport {
    pub fn new(name: impl Into<String>) -> Self {
        BenchReport {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            name: name.into(),
            params: BTreeMap::new(),
            trials: Vec::new(),
            summary: Vec::new(),
            derived: BTreeMap::new(),
            valid: true,
            notes: Vec::new(),
            environment: Environment::capture(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.params.insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
        self
    }

    pub fn add_trial(&mut self, point: impl Into<String>, trial: u32, metrics: impl IntoIterator<Item = (&'static str, f64)>) {
        self.trials.push(Trial {
            point: point.into(),
            trial,
            metrics: metrics.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        });
    }

    pub fn invalidate(&mut self, why: impl Into<String>) {
        self.valid = false;
        self.notes.push(why.into());
    }

    /// Points in first-seen order.
    pub fn points(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.trials.iter().filter(|t| seen.insert(t.point.clone())).map(|t| t.point.clone()).collect()
    }

    /// Recomputes per-point summaries from the raw trials.
    pub fn summarize(&mut self) {
        let mut out = Vec::new();
        for point in self.points() {
            let trials: Vec<&Trial> = self.trials.iter().filter(|t| t.point == point).collect();
            let metrics: BTreeSet<&String> = trials.iter().flat_map(|t| t.metrics.keys()).collect();
            for m in metrics {
                let xs: Vec<f64> = trials.iter().filter_map(|t| t.metrics.get(m).copied()).collect();
                out.push(summarize(&point, m, &xs));
            }
        }
        self.summary = out;
    }

    pub fn summary_for(&self, point: &str, metric: &str) -> Option<&Summary> {
        self.summary.iter().find(|s| s.point == point && s.metric == metric)
    }

    pub fn mean(&self, point: &str, metric: &str) -> Option<f64> {
        self.summary_for(point, metric).map(|s| s.mean)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {} v{} {}", REPORT_FORMAT, REPORT_VERSION, self.name)?;
        let metrics: BTreeSet<&String> = self.trials.iter().flat_map(|t| t.metrics.keys()).collect();
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["point".to_string(), "trial".to_string()];
        header.extend(metrics.iter().map(|m| m.to_string()));
        csv.write_record(&header)?;
        for t in &self.trials {
            let mut row = vec![t.point.clone(), t.trial.to_string()];
            row.extend(metrics.iter().map(|m| t.metrics.get(*m).map_or(String::new(), |v| v.to_string())));
            csv.write_record(&row)?;
        }
        csv.flush()?;
        Ok(())
    }

    /// Writes `<dir>/<name>.csv` and `<dir>/<name>.json`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}.csv", self.name));
        let json_path = dir.join(format!("{}.json", self.name));
        self.write_csv(BufWriter::new(File::create(&csv_path)?))?;
        let mut w = BufWriter::new(File::create(&json_path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok((csv_path, json_path))
    }
}

fn summarize(point: &str, metric: &str, xs: &[f64]) -> Summary {
    let n = xs.len();
    let mean = if n == 0 { 0.0 } else { xs.iter().sum::<f64>() / n as f64 };
    let sd = if n < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
    Summary {
        point: point.into(),
        metric: metric.into(),
        n,
        mean,
        sd,
        min: xs.iter().copied().fold(f64::INFINITY, f64::min),
        peak: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}
