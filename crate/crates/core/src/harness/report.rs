//! Per-cell results and their CSV/JSON renderings.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method, Partitioner};
use crate::data::DatasetManifest;
use crate::error::Result;
use crate::kernel::Hyperparameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed(String),
}

/// One (method, m, run) cell. Times are wall-clock seconds; absent values
/// mean the phase did not run or the metric does not apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub m: usize,
    pub run: usize,
    pub seed: u64,
    pub selector: Option<Partitioner>,
    pub status: CellStatus,
    /// Subset selection or tree construction.
    pub selection_seconds: f64,
    pub hyp_seconds: f64,
    /// Final fit at θ*, excluding selection.
    pub train_seconds: f64,
    pub test_seconds_per_point: f64,
    pub smse: Option<f64>,
    /// Not available for `cg`, which predicts means only.
    pub msll: Option<f64>,
    /// Objective evaluations spent on hyperparameter learning (summed over leaves
    /// for separately trained local models).
    pub evaluations: usize,
    /// θ* (or the fixed θ); one entry per leaf for separately trained local models.
    pub theta: Vec<Hyperparameters>,
}

impl CellResult {
    pub fn failed(
        method: Method,
        m: usize,
        run: usize,
        seed: u64,
        selector: Option<Partitioner>,
        reason: String,
    ) -> Self {
        CellResult {
            method,
            m,
            run,
            seed,
            selector,
            status: CellStatus::Failed(reason),
            selection_seconds: 0.0,
            hyp_seconds: 0.0,
            train_seconds: 0.0,
            test_seconds_per_point: 0.0,
            smse: None,
            msll: None,
            evaluations: 0,
            theta: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }

    /// Training time as a user pays it, selection included.
    pub fn train_seconds_with_selection(&self) -> f64 {
        self.train_seconds + self.selection_seconds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    pub dataset: DatasetManifest,
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
}

impl ExperimentReport {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| !c.is_ok()).count()
    }

    pub fn cell(&self, method: Method, m: usize, run: usize) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.m == m && c.run == run)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
    }
}

pub const RESULTS_HEADER: [&str; 17] = [
    "method",
    "m",
    "run",
    "seed",
    "selector",
    "status",
    "error",
    "hyp_seconds",
    "selection_seconds",
    "train_seconds",
    "train_seconds_with_selection",
    "test_seconds_per_point",
    "smse",
    "msll",
    "evaluations",
    "theta",
    "leaves",
];

pub const CURVES_HEADER: [&str; 13] = [
    "method",
    "m",
    "runs",
    "failed",
    "mean_hyp_seconds",
    "mean_train_seconds",
    "mean_train_seconds_with_selection",
    "mean_test_seconds_per_point",
    "mean_total_seconds",
    "mean_smse",
    "median_smse",
    "mean_msll",
    "median_msll",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn theta_field(theta: &[Hyperparameters]) -> String {
    match theta {
        [one] => one
            .to_vec()
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(";"),
        _ => String::new(),
    }
}

/// One row per cell. `theta` holds the log-hyperparameters joined by `;`
/// (lengthscales, signal, noise) and is empty when there is one θ per leaf;
/// `leaves` is the number of θ vectors.
pub fn write_results_csv<W: Write>(report: &ExperimentReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RESULTS_HEADER)?;
    for c in &report.cells {
        let (status, error) = match &c.status {
            CellStatus::Ok => ("ok", String::new()),
            CellStatus::Failed(r) => ("failed", r.clone()),
        };
        out.write_record([
            c.method.as_str().to_string(),
            c.m.to_string(),
            c.run.to_string(),
            c.seed.to_string(),
            c.selector.map(|s| format!("{s:?}").to_lowercase()).unwrap_or_default(),
            status.to_string(),
            error,
            format!("{:e}", c.hyp_seconds),
            format!("{:e}", c.selection_seconds),
            format!("{:e}", c.train_seconds),
            format!("{:e}", c.train_seconds_with_selection()),
            format!("{:e}", c.test_seconds_per_point),
            opt(c.smse),
            opt(c.msll),
            c.evaluations.to_string(),
            theta_field(&c.theta),
            c.theta.len().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Aggregate of the successful runs of one (method, m) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: Method,
    pub m: usize,
    pub runs: usize,
    pub failed: usize,
    pub mean_hyp_seconds: f64,
    pub mean_train_seconds: f64,
    pub mean_train_seconds_with_selection: f64,
    pub mean_test_seconds_per_point: f64,
    /// Learning plus training plus total test time.
    pub mean_total_seconds: f64,
    pub mean_smse: Option<f64>,
    pub median_smse: Option<f64>,
    pub mean_msll: Option<f64>,
    pub median_msll: Option<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Per-(method, m) aggregates, ordered by method then m. `n_test` converts
/// per-point test time into total test time.
pub fn curves(cells: &[CellResult], n_test: usize) -> Vec<CurvePoint> {
    let mut groups: BTreeMap<(Method, usize), Vec<&CellResult>> = BTreeMap::new();
    for c in cells {
        groups.entry((c.method, c.m)).or_default().push(c);
    }
    groups
        .into_iter()
        .map(|((method, m), group)| {
            let ok: Vec<&CellResult> = group.iter().copied().filter(|c| c.is_ok()).collect();
            let col = |f: &dyn Fn(&CellResult) -> Option<f64>| ok.iter().filter_map(|c| f(c)).collect::<Vec<f64>>();
            let hyp = col(&|c| Some(c.hyp_seconds));
            let train = col(&|c| Some(c.train_seconds));
            let train_sel = col(&|c| Some(c.train_seconds_with_selection()));
            let test = col(&|c| Some(c.test_seconds_per_point));
            let total = col(&|c| Some(c.hyp_seconds + c.train_seconds + c.test_seconds_per_point * n_test as f64));
            let smse = col(&|c| c.smse);
            let msll = col(&|c| c.msll);
            CurvePoint {
                method,
                m,
                runs: ok.len(),
                failed: group.len() - ok.len(),
                mean_hyp_seconds: mean(&hyp).unwrap_or(f64::NAN),
                mean_train_seconds: mean(&train).unwrap_or(f64::NAN),
                mean_train_seconds_with_selection: mean(&train_sel).unwrap_or(f64::NAN),
                mean_test_seconds_per_point: mean(&test).unwrap_or(f64::NAN),
                mean_total_seconds: mean(&total).unwrap_or(f64::NAN),
                mean_smse: mean(&smse),
                median_smse: median(&smse),
                mean_msll: mean(&msll),
                median_msll: median(&msll),
            }
        })
        .collect()
}

pub fn write_curves_csv<W: Write>(points: &[CurvePoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CURVES_HEADER)?;
    let num = |v: f64| if v.is_nan() { String::new() } else { format!("{v:e}") };
    for p in points {
        out.write_record([
            p.method.as_str().to_string(),
            p.m.to_string(),
            p.runs.to_string(),
            p.failed.to_string(),
            num(p.mean_hyp_seconds),
            num(p.mean_train_seconds),
            num(p.mean_train_seconds_with_selection),
            num(p.mean_test_seconds_per_point),
            num(p.mean_total_seconds),
            opt(p.mean_smse),
            opt(p.median_smse),
            opt(p.mean_msll),
            opt(p.median_msll),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Curves,
}

impl OutputFormat {
    pub const ALL: [OutputFormat; 3] = [OutputFormat::Csv, OutputFormat::Json, OutputFormat::Curves];

    pub fn file_name(self) -> &'static str {
        match self {
            OutputFormat::Csv => "results.csv",
            OutputFormat::Json => "report.json",
            OutputFormat::Curves => "curves.csv",
        }
    }
}

/// Writes the requested renderings into `dir`, returning the paths written.
pub fn emit_results(report: &ExperimentReport, dir: &Path, formats: &[OutputFormat]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for &f in formats {
        let path = dir.join(f.file_name());
        let file = BufWriter::new(File::create(&path)?);
        match f {
            OutputFormat::Csv => write_results_csv(report, file)?,
            OutputFormat::Json => serde_json::to_writer_pretty(file, report)?,
            OutputFormat::Curves => write_curves_csv(&curves(&report.cells, report.dataset.n_test), file)?,
        }
        written.push(path);
    }
    Ok(written)
}
