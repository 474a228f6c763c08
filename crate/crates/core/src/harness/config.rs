//! Experiment configuration, read from versioned JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_dataset, standardize, Dataset, StandardizeOptions, SyntheticSpec};
use crate::error::{GprError, Result};
use crate::iterative::TraceSchedule;
use crate::kernel::{Hyperparameters, KernelFlavor};
use crate::local::LocalMode;
use crate::optimizer::OptBudget;
use crate::selection::Selector;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Sod,
    Fitc,
    Hybrid,
    Local,
    Cg,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Sod => "sod",
            Method::Fitc => "fitc",
            Method::Hybrid => "hybrid",
            Method::Local => "local",
            Method::Cg => "cg",
        }
    }

    /// Grid used when a method entry gives no `m` list, before capping at n/2.
    /// For `cg` the values are iteration budgets.
    pub fn default_grid(self) -> Vec<usize> {
        let pow2 = |lo: u32, hi: u32| (lo..=hi).map(|k| 1usize << k).collect();
        match self {
            Method::Exact => vec![],
            Method::Sod | Method::Local => pow2(5, 12),
            Method::Fitc | Method::Hybrid => pow2(3, 9),
            Method::Cg => pow2(0, 9),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Subset selector or partitioner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partitioner {
    Random,
    Fpc,
    Rpc,
}

impl Partitioner {
    pub fn selector(self) -> Option<Selector> {
        match self {
            Partitioner::Random => Some(Selector::Random),
            Partitioner::Fpc => Some(Selector::Fpc),
            Partitioner::Rpc => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: Method,
    /// Subset sizes, inducing counts, leaf sizes or (for `cg`) iteration budgets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<Partitioner>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_mode: Option<LocalMode>,
}

impl MethodSpec {
    pub fn new(method: Method, m: Vec<usize>) -> Self {
        MethodSpec {
            method,
            m: Some(m),
            selector: None,
            local_mode: None,
        }
    }

    pub fn with_selector(mut self, selector: Partitioner) -> Self {
        self.selector = Some(selector);
        self
    }

    pub fn with_local_mode(mut self, mode: LocalMode) -> Self {
        self.local_mode = Some(mode);
        self
    }

    pub fn partitioner(&self) -> Option<Partitioner> {
        match self.method {
            Method::Exact | Method::Cg => None,
            Method::Local => Some(self.selector.unwrap_or(Partitioner::Rpc)),
            _ => Some(self.selector.unwrap_or(Partitioner::Random)),
        }
    }

    /// The effective grid for `n` training points.
    pub fn grid(&self, n: usize) -> Vec<usize> {
        match self.method {
            Method::Exact => vec![n],
            _ => match &self.m {
                Some(m) => m.clone(),
                None => {
                    let cap = if self.method == Method::Cg {
                        usize::MAX
                    } else {
                        (n / 2).max(1)
                    };
                    let g: Vec<usize> = self.method.default_grid().into_iter().filter(|&m| m <= cap).collect();
                    if g.is_empty() {
                        vec![cap.min(n)]
                    } else {
                        g
                    }
                }
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRef {
    Synthetic(SyntheticSpec),
    Files {
        name: String,
        train: PathBuf,
        test: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum HyperparameterMode {
    /// ML-II on each method's own approximate likelihood.
    Learn {
        #[serde(default = "default_flavor")]
        kernel: KernelFlavor,
    },
    Fixed {
        value: Hyperparameters,
    },
    /// The synthetic generator's own hyperparameters.
    Generative,
}

fn default_flavor() -> KernelFlavor {
    KernelFlavor::Ard
}

impl Default for HyperparameterMode {
    fn default() -> Self {
        HyperparameterMode::Learn {
            kernel: default_flavor(),
        }
    }
}

impl HyperparameterMode {
    pub fn is_learn(&self) -> bool {
        matches!(self, HyperparameterMode::Learn { .. })
    }
}

fn default_schema() -> u32 {
    0
}

fn default_runs() -> usize {
    5
}

fn default_cg_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub dataset: DatasetRef,
    /// Standardize inputs and centre targets using training statistics.
    /// Defaults to on for files and off for synthetic data, whose inputs are
    /// already standard normal and whose generative θ should stay meaningful.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub hyperparameters: HyperparameterMode,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Run `r` uses `seeds[r]` when given, otherwise `seed + r`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub budget: OptBudget,
    /// Early-stopping tolerance for `cg` cells on top of their iteration budget.
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetRef, methods: Vec<MethodSpec>, hyperparameters: HyperparameterMode) -> Self {
        ExperimentConfig {
            schema: SCHEMA_VERSION,
            dataset,
            standardize: None,
            methods,
            hyperparameters,
            runs: default_runs(),
            seed: 0,
            seeds: None,
            budget: OptBudget::default(),
            cg_tol: default_cg_tol(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.resolve_relative_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve_relative_paths(&mut self, base: &Path) {
        if let DatasetRef::Files { train, test, .. } = &mut self.dataset {
            for p in [train, test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        match &self.seeds {
            Some(s) => s[run],
            None => self.seed.wrapping_add(run as u64),
        }
    }

    pub fn standardizes(&self) -> bool {
        self.standardize
            .unwrap_or(matches!(self.dataset, DatasetRef::Files { .. }))
    }

    /// Structural checks that need no data.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(GprError::Config(format!(
                "unsupported config schema {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        if self.methods.is_empty() {
            return Err(GprError::Config("no methods configured".into()));
        }
        if self.runs == 0 {
            return Err(GprError::Config("runs must be at least 1".into()));
        }
        if let Some(s) = &self.seeds {
            if s.len() < self.runs {
                return Err(GprError::Config(format!(
                    "{} seeds given for {} runs",
                    s.len(),
                    self.runs
                )));
            }
        }
        if let DatasetRef::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        } else if self.hyperparameters == HyperparameterMode::Generative {
            return Err(GprError::Config(
                "generative hyperparameters need a synthetic dataset".into(),
            ));
        }
        for spec in &self.methods {
            let p = spec.partitioner();
            let ok = match spec.method {
                Method::Exact | Method::Cg => spec.selector.is_none(),
                Method::Local => p == Some(Partitioner::Rpc),
                _ => matches!(p, Some(Partitioner::Random | Partitioner::Fpc)),
            };
            if !ok {
                return Err(GprError::Config(format!(
                    "selector {:?} is not valid for method {}",
                    spec.selector, spec.method
                )));
            }
            if spec.local_mode.is_some() && spec.method != Method::Local {
                return Err(GprError::Config(format!("local_mode given for method {}", spec.method)));
            }
            if spec.method == Method::Cg && self.hyperparameters.is_learn() {
                return Err(GprError::Config(
                    "cg has no marginal likelihood of its own; use fixed or generative hyperparameters".into(),
                ));
            }
            if spec.m.as_ref().is_some_and(|m| m.contains(&0)) {
                return Err(GprError::Config(format!("m = 0 in the {} grid", spec.method)));
            }
        }
        Ok(())
    }

    /// Checks that need the dataset size.
    pub fn validate_against(&self, n: usize) -> Result<()> {
        for spec in &self.methods {
            if spec.method == Method::Cg || spec.method == Method::Local {
                continue;
            }
            if let Some(&m) = spec.grid(n).iter().find(|&&m| m > n) {
                return Err(GprError::Config(format!(
                    "m = {m} exceeds n = {n} for method {}",
                    spec.method
                )));
            }
        }
        Ok(())
    }

    /// Loads or generates the dataset and applies standardization.
    pub fn resolve_dataset(&self) -> Result<Dataset> {
        let ds = match &self.dataset {
            DatasetRef::Synthetic(spec) => generate_synthetic(spec)?,
            DatasetRef::Files { name, train, test } => load_dataset(name, train, test)?,
        };
        if self.standardizes() {
            Ok(standardize(&ds, StandardizeOptions::default())?.0)
        } else {
            Ok(ds)
        }
    }
}

/// Configuration for the `trace` subcommand: a CG solve at fixed θ, with SoD
/// reference points at the same θ for error-versus-time comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub dataset: DatasetRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,
    pub hyperparameters: HyperparameterMode,
    pub max_iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_budget_seconds: Option<f64>,
    #[serde(default)]
    pub schedule: TraceSchedule,
    /// Subset sizes for the SoD reference points.
    #[serde(default)]
    pub sod_m: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl TraceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: TraceConfig = serde_json::from_str(&text)?;
        if let DatasetRef::Files { train, test, .. } = &mut cfg.dataset {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [train, test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(GprError::Config(format!(
                "unsupported config schema {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        if self.hyperparameters.is_learn() {
            return Err(GprError::Config(
                "traces run at fixed or generative hyperparameters".into(),
            ));
        }
        if self.hyperparameters == HyperparameterMode::Generative && !matches!(self.dataset, DatasetRef::Synthetic(_)) {
            return Err(GprError::Config(
                "generative hyperparameters need a synthetic dataset".into(),
            ));
        }
        Ok(())
    }

    pub fn as_experiment(&self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(
            self.dataset.clone(),
            vec![MethodSpec::new(Method::Sod, self.sod_m.clone())],
            self.hyperparameters.clone(),
        );
        cfg.standardize = self.standardize;
        cfg.seed = self.seed;
        cfg.runs = 1;
        cfg
    }
}
