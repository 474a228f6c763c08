//! Paired runs with learned and with generative hyperparameters.

use serde::{Deserialize, Serialize};

use super::config::{DatasetRef, ExperimentConfig, HyperparameterMode, Method};
use super::report::ExperimentReport;
use super::run::run_on_dataset;
use crate::error::{GprError, Result};
use crate::kernel::KernelFlavor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub method: Method,
    pub m: usize,
    pub run: usize,
    pub seed: u64,
    pub smse_learned: Option<f64>,
    pub smse_fixed: Option<f64>,
    /// `learned − fixed`; positive means learning did worse.
    pub delta_smse: Option<f64>,
    pub msll_learned: Option<f64>,
    pub msll_fixed: Option<f64>,
    pub delta_msll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedReport {
    pub learned: ExperimentReport,
    pub fixed: ExperimentReport,
    pub deltas: Vec<PairedDelta>,
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

/// Pairs cells of two reports over the same grid and seeds.
pub fn paired_deltas(learned: &ExperimentReport, fixed: &ExperimentReport) -> Vec<PairedDelta> {
    learned
        .cells
        .iter()
        .zip(&fixed.cells)
        .map(|(l, f)| {
            debug_assert_eq!((l.method, l.m, l.run, l.seed), (f.method, f.m, f.run, f.seed));
            let ok = |c: &super::report::CellResult, v: Option<f64>| if c.is_ok() { v } else { None };
            let (sl, sf) = (ok(l, l.smse), ok(f, f.smse));
            let (ml, mf) = (ok(l, l.msll), ok(f, f.msll));
            PairedDelta {
                method: l.method,
                m: l.m,
                run: l.run,
                seed: l.seed,
                smse_learned: sl,
                smse_fixed: sf,
                delta_smse: diff(sl, sf),
                msll_learned: ml,
                msll_fixed: mf,
                delta_msll: diff(ml, mf),
            }
        })
        .collect()
}

/// Runs the grid of `config` on its synthetic dataset twice with shared
/// seeds: once learning θ, once at the generating θ.
pub fn compare_fixed_vs_learned(config: &ExperimentConfig) -> Result<PairedReport> {
    if !matches!(config.dataset, DatasetRef::Synthetic(_)) {
        return Err(GprError::Config(
            "fixed-vs-learned comparison needs a synthetic dataset".into(),
        ));
    }
    let kernel = match &config.hyperparameters {
        HyperparameterMode::Learn { kernel } => *kernel,
        _ => KernelFlavor::Ard,
    };
    let mut learn_cfg = config.clone();
    learn_cfg.hyperparameters = HyperparameterMode::Learn { kernel };
    let mut fixed_cfg = config.clone();
    fixed_cfg.hyperparameters = HyperparameterMode::Generative;
    learn_cfg.validate()?;
    fixed_cfg.validate()?;

    let ds = config.resolve_dataset()?;
    let learned = run_on_dataset(&learn_cfg, &ds, None)?;
    let fixed = run_on_dataset(&fixed_cfg, &ds, None)?;
    let deltas = paired_deltas(&learned, &fixed);
    Ok(PairedReport { learned, fixed, deltas })
}

pub fn write_deltas_csv<W: std::io::Write>(deltas: &[PairedDelta], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "method",
        "m",
        "run",
        "seed",
        "smse_learned",
        "smse_fixed",
        "delta_smse",
        "msll_learned",
        "msll_fixed",
        "delta_msll",
    ])?;
    let f = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for d in deltas {
        out.write_record([
            d.method.as_str().to_string(),
            d.m.to_string(),
            d.run.to_string(),
            d.seed.to_string(),
            f(d.smse_learned),
            f(d.smse_fixed),
            f(d.delta_smse),
            f(d.msll_learned),
            f(d.msll_fixed),
            f(d.delta_msll),
        ])?;
    }
    out.flush()?;
    Ok(())
}
