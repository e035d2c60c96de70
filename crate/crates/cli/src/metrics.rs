//! Append-only metrics CSV.
//!
//! `metrics.csv` columns: `schema_version, phase, step, loss, w2, reward`.
//! Empty cells mean "not measured at this step". Within a phase, steps
//! strictly increase. Wall-clock time goes to `timing.csv`
//! (`phase, step, wall_s`) so the metrics file stays bit-identical across
//! reruns with the same seed.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{file_err, CliError, Result};

pub const METRICS_SCHEMA_VERSION: u32 = 1;
const HEADER: [&str; 6] = ["schema_version", "phase", "step", "loss", "w2", "reward"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub schema_version: u32,
    pub phase: String,
    pub step: u64,
    pub loss: Option<f64>,
    pub w2: Option<f64>,
    pub reward: Option<f64>,
}

impl MetricRow {
    pub fn new(phase: &str, step: u64) -> Self {
        Self { schema_version: METRICS_SCHEMA_VERSION, phase: phase.into(), step, ..Default::default() }
    }

    pub fn loss(mut self, v: f64) -> Self {
        self.loss = Some(v);
        self
    }

    pub fn w2(mut self, v: f64) -> Self {
        self.w2 = Some(v);
        self
    }

    pub fn reward(mut self, v: f64) -> Self {
        self.reward = Some(v);
        self
    }
}

#[derive(Serialize)]
struct TimingRow<'a> {
    phase: &'a str,
    step: u64,
    wall_s: f64,
}

pub struct MetricsLog {
    path: PathBuf,
    metrics: csv::Writer<File>,
    timing: csv::Writer<File>,
    last: HashMap<String, u64>,
    started: Instant,
    rows: Vec<MetricRow>,
}

impl MetricsLog {
    /// Opens `dir/metrics.csv` for appending, validating any existing rows.
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(file_err(dir))?;
        let path = dir.join("metrics.csv");
        let mut last = HashMap::new();
        let fresh = !path.exists() || std::fs::metadata(&path).map_err(file_err(&path))?.len() == 0;
        if !fresh {
            for row in read_metrics(&path)? {
                last.insert(row.phase.clone(), row.step);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(file_err(&path))?;
        let mut metrics = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            metrics.write_record(HEADER)?;
        }
        let tpath = dir.join("timing.csv");
        let tfresh = !tpath.exists();
        let tfile = OpenOptions::new().create(true).append(true).open(&tpath).map_err(file_err(&tpath))?;
        let mut timing = csv::WriterBuilder::new().has_headers(false).from_writer(tfile);
        if tfresh {
            timing.write_record(["phase", "step", "wall_s"])?;
        }
        Ok(Self { path, metrics, timing, last, started: Instant::now(), rows: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, row: MetricRow) -> Result<()> {
        if let Some(&prev) = self.last.get(&row.phase) {
            if row.step <= prev {
                return Err(CliError::Metrics(format!(
                    "{}: phase {:?} step {} does not follow step {prev}",
                    self.path.display(),
                    row.phase,
                    row.step
                )));
            }
        }
        self.last.insert(row.phase.clone(), row.step);
        self.metrics.serialize(&row)?;
        self.metrics.flush()?;
        let wall_s = self.started.elapsed().as_secs_f64();
        self.timing.serialize(TimingRow { phase: &row.phase, step: row.step, wall_s })?;
        self.timing.flush()?;
        self.rows.push(row);
        Ok(())
    }

    /// Rows appended through this handle.
    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != HEADER {
        return Err(CliError::Metrics(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut out: Vec<MetricRow> = Vec::new();
    for row in r.deserialize() {
        let row: MetricRow = row?;
        if row.schema_version != METRICS_SCHEMA_VERSION {
            return Err(CliError::Metrics(format!(
                "{}: schema version {} (this build writes {METRICS_SCHEMA_VERSION})",
                path.display(),
                row.schema_version
            )));
        }
        out.push(row);
    }
    Ok(out)
}
