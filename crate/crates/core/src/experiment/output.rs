use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::Result;
use crate::gauss_markov::{ProcessParams, Regime};

pub const SCHEMA_VERSION: u32 = 1;

/// Column order of `results.csv`.
pub const CSV_COLUMNS: [&str; 11] =
    ["experiment", "beta", "gamma", "n", "regime", "label", "metric", "value", "std_error", "pass", "seed"];

/// One measured quantity. Empty parameter fields mean "not applicable".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub n: Option<usize>,
    pub regime: Option<String>,
    pub label: String,
    pub metric: String,
    pub value: f64,
    pub std_error: Option<f64>,
    pub pass: Option<bool>,
    pub seed: u64,
}

impl ResultRow {
    /// A row with no parameter tuple attached.
    pub fn new(experiment: &str, label: impl Into<String>, metric: &str, value: f64, seed: u64) -> Self {
        ResultRow {
            experiment: experiment.to_string(),
            beta: None,
            gamma: None,
            n: None,
            regime: None,
            label: label.into(),
            metric: metric.to_string(),
            value,
            std_error: None,
            pass: None,
            seed,
        }
    }

    pub fn at(mut self, p: &ProcessParams) -> Self {
        self = self.group(p.beta, p.gamma, &p.regime);
        self.n = Some(p.n);
        self
    }

    /// Attaches a `(β, γ, regime)` group without `n`.
    pub fn group(mut self, beta: f64, gamma: f64, regime: &Regime) -> Self {
        self.beta = Some(beta);
        self.gamma = Some(gamma);
        self.regime = Some(regime.label());
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn with_se(mut self, se: f64) -> Self {
        self.std_error = Some(se);
        self
    }

    pub fn with_pass(mut self, pass: bool) -> Self {
        self.pass = Some(pass);
        self
    }

    fn opt_cmp<T: PartialOrd>(a: &Option<T>, b: &Option<T>) -> Ordering {
        match (a, b) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Less,
            (Some(_), None) => Ordering::Greater,
            (Some(x), Some(y)) => x.partial_cmp(y).unwrap_or(Ordering::Equal),
        }
    }

    /// Canonical order: experiment, parameter tuple, label, metric.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.experiment
            .cmp(&other.experiment)
            .then_with(|| Self::opt_cmp(&self.beta, &other.beta))
            .then_with(|| Self::opt_cmp(&self.gamma, &other.gamma))
            .then_with(|| Self::opt_cmp(&self.n, &other.n))
            .then_with(|| Self::opt_cmp(&self.regime, &other.regime))
            .then_with(|| self.label.cmp(&other.label))
            .then_with(|| self.metric.cmp(&other.metric))
    }

    /// Identity of a row within one run.
    pub fn key(&self) -> String {
        let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{}|{}|{}|{}|{}|{}|{}",
            self.experiment,
            f(self.beta),
            f(self.gamma),
            self.n.map(|v| v.to_string()).unwrap_or_default(),
            self.regime.clone().unwrap_or_default(),
            self.label,
            self.metric
        )
    }
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| a.canonical_cmp(b));
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub code_version: String,
    pub experiment: String,
    pub master_seed: u64,
    pub rows: usize,
    pub threads: usize,
    pub started_unix: u64,
    pub wall_time_seconds: f64,
    pub estimated_path_steps: f64,
    pub samples: Vec<String>,
    pub config: ExperimentConfig,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

/// A raw sample saved under `samples/<name>.csv`.
#[derive(Debug, Clone)]
pub struct SampleDump {
    pub name: String,
    pub values: Vec<f64>,
}

/// File-system safe version of a tuple label.
pub fn sample_file_name(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_' | '=') { c } else { '_' })
        .collect();
    format!("{cleaned}.csv")
}

pub fn write_samples(dir: &Path, dumps: &[SampleDump]) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for d in dumps {
        let file = sample_file_name(&d.name);
        let mut w = csv::Writer::from_path(dir.join(&file))?;
        w.write_record(["replicate", "value"])?;
        for (i, v) in d.values.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()])?;
        }
        w.flush()?;
        names.push(format!("samples/{file}"));
    }
    Ok(names)
}
