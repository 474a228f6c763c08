//! CG residual and test-error traces with SoD reference points at the same θ.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::TraceConfig;
use super::run::fixed_hyperparameters;
use crate::data::DatasetManifest;
use crate::error::Result;
use crate::iterative::{cg_solve, CgStatus, DenseMvm, SmseEvaluator, SolveTrace, Termination};
use crate::linalg::JitterPolicy;
use crate::metrics::{msll, smse, TrivialPredictor};
use crate::selection::{select_random, SubsetChoice};
use crate::sod::sod_train_on;

/// SoD at the trace's θ: a horizontal reference line at `smse` reached after
/// `train_seconds` of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SodReference {
    pub m: usize,
    pub selection_seconds: f64,
    pub train_seconds: f64,
    pub test_seconds_per_point: f64,
    pub smse: f64,
    pub msll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub dataset: DatasetManifest,
    pub config: TraceConfig,
    /// Building the dense operator, excluded from the per-iteration seconds.
    pub setup_seconds: f64,
    pub status: CgStatus,
    pub iterations: usize,
    pub trace: SolveTrace,
    pub sod_reference: Vec<SodReference>,
}

pub fn run_trace(config: &TraceConfig) -> Result<TraceReport> {
    config.validate()?;
    let exp = config.as_experiment();
    let ds = exp.resolve_dataset()?;
    let hp = fixed_hyperparameters(&exp, &ds)?.expect("trace configs are never in learn mode");
    let trivial = TrivialPredictor::from_targets(ds.train_y.view())?;
    let (x, y) = (ds.train_x.view(), ds.train_y.view());

    let started = Instant::now();
    let op = DenseMvm::new(x, &hp)?;
    let setup_seconds = started.elapsed().as_secs_f64();
    let termination = Termination {
        max_iterations: Some(config.max_iterations),
        rel_tol: config.tol,
        time_budget_seconds: config.time_budget_seconds,
    };
    let evaluator = SmseEvaluator {
        x,
        hp: &hp,
        xstar: ds.test_x.view(),
        ystar: ds.test_y.view(),
        trivial,
    };
    let mut eval = |a: ndarray::ArrayView1<f64>| evaluator.evaluate(a);
    let out = cg_solve(&op, y, &termination, config.schedule, Some(&mut eval))?;
    drop(op);

    let jitter = JitterPolicy::default();
    let mut sod_reference = Vec::new();
    for &m in &config.sod_m {
        let started = Instant::now();
        let subset: SubsetChoice = select_random(ds.n_train(), m, config.seed)?;
        let selection_seconds = started.elapsed().as_secs_f64();
        let started = Instant::now();
        let model = sod_train_on(x, y, subset, &hp, &jitter)?;
        let train_seconds = started.elapsed().as_secs_f64();
        let started = Instant::now();
        let p = model.predict(ds.test_x.view())?;
        let test_seconds = started.elapsed().as_secs_f64();
        sod_reference.push(SodReference {
            m,
            selection_seconds,
            train_seconds,
            test_seconds_per_point: test_seconds / ds.n_test().max(1) as f64,
            smse: smse(p.mean.view(), ds.test_y.view(), &trivial)?,
            msll: msll(p.mean.view(), p.observation_variance.view(), ds.test_y.view(), &trivial)?,
        });
    }
    Ok(TraceReport {
        dataset: ds.manifest(),
        config: config.clone(),
        setup_seconds,
        status: out.status,
        iterations: out.iterations,
        trace: out.trace,
        sod_reference,
    })
}

/// Writes `cg_trace.csv`, `sod_reference.csv` and `trace.json` into `dir`.
pub fn emit_trace(report: &TraceReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let trace_path = dir.join("cg_trace.csv");
    report.trace.write_csv(BufWriter::new(File::create(&trace_path)?))?;
    let sod_path = dir.join("sod_reference.csv");
    let mut w = csv::Writer::from_path(&sod_path)?;
    w.write_record([
        "m",
        "selection_seconds",
        "train_seconds",
        "test_seconds_per_point",
        "smse",
        "msll",
    ])?;
    for r in &report.sod_reference {
        w.write_record([
            r.m.to_string(),
            format!("{:e}", r.selection_seconds),
            format!("{:e}", r.train_seconds),
            format!("{:e}", r.test_seconds_per_point),
            format!("{:e}", r.smse),
            format!("{:e}", r.msll),
        ])?;
    }
    w.flush()?;
    let json_path = dir.join("trace.json");
    serde_json::to_writer_pretty(BufWriter::new(File::create(&json_path)?), report)?;
    Ok(vec![trace_path, sod_path, json_path])
}
