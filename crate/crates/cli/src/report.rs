use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use fraclab::stats::Estimate;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// A reported number; non-finite values serialize as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Statistic {
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl Statistic {
    pub fn exact(x: f64) -> Self {
        Self {
            value: finite(x),
            se: None,
        }
    }

    pub fn estimate(e: Estimate) -> Self {
        Self {
            value: finite(e.mean),
            se: finite(e.se),
        }
    }
}

pub type Record = BTreeMap<String, Option<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub version: String,
    pub config: ExperimentConfig,
    pub records: Vec<Record>,
    pub statistics: BTreeMap<String, Statistic>,
    pub warnings: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            records: Vec::new(),
            statistics: BTreeMap::new(),
            warnings: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn stat(&mut self, name: &str, s: Statistic) {
        self.statistics.insert(name.to_string(), s);
    }

    pub fn exact(&mut self, name: &str, x: f64) {
        self.stat(name, Statistic::exact(x));
    }

    pub fn estimate(&mut self, name: &str, e: Estimate) {
        self.stat(name, Statistic::estimate(e));
    }

    pub fn warn(&mut self, w: impl Into<String>) {
        let w = w.into();
        if !self.warnings.contains(&w) {
            self.warnings.push(w);
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.statistics.get(name).and_then(|s| s.value)
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Builds a record from name/value pairs.
pub fn record<const N: usize>(fields: [(&str, f64); N]) -> Record {
    fields
        .into_iter()
        .map(|(k, v)| (k.to_string(), finite(v)))
        .collect()
}

/// A CSV table with a mandatory header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, w: W) -> Result<(), CliError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for r in &self.rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_to_dir(&self, dir: &Path) -> Result<(), CliError> {
        let f = std::fs::File::create(dir.join(format!("{}.csv", self.name)))?;
        self.write(std::io::BufWriter::new(f))
    }
}

/// Report plus tables of one run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: ExperimentReport,
    pub tables: Vec<Table>,
}

impl Outcome {
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.report.to_json()? + "\n")?;
        for t in &self.tables {
            t.write_to_dir(dir)?;
        }
        Ok(())
    }
}
