//! Grid execution with separately clocked learning, training and test phases.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use ndarray::{ArrayView1, ArrayView2};

use super::config::{ExperimentConfig, HyperparameterMode, Method, MethodSpec, Partitioner};
use super::report::{CellResult, CellStatus, ExperimentReport};
use crate::data::Dataset;
use crate::error::{GprError, Result};
use crate::exact::{exact_logml, exact_train, LogMl, PredictiveDistribution};
use crate::fitc::{fitc_logml_on, fitc_train_on};
use crate::iterative::{cg_solve, mean_from_alpha, CgStatus, DenseMvm, Termination, TraceSchedule};
use crate::kernel::Hyperparameters;
use crate::linalg::JitterPolicy;
use crate::local::{learn_joint, learn_separate, local_train_on, LocalMode};
use crate::metrics::{msll, smse, TrivialPredictor};
use crate::optimizer::{initial_hyperparameters, maximize_logml, OptBudget};
use crate::selection::{build_rpc, select_subset};
use crate::sod::{sod_logml_on, sod_train_on};

/// Identifies one grid cell in the canonical ordering: methods in config
/// order, then m ascending as listed, then runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellKey {
    pub method_index: usize,
    pub m: usize,
    pub run: usize,
}

pub fn enumerate_cells(config: &ExperimentConfig, n: usize) -> Vec<CellKey> {
    let mut keys = Vec::new();
    for (method_index, spec) in config.methods.iter().enumerate() {
        for m in spec.grid(n) {
            for run in 0..config.runs {
                keys.push(CellKey { method_index, m, run });
            }
        }
    }
    keys
}

/// Subset of cells executed by one worker process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shard {
    pub index: usize,
    pub count: usize,
}

impl Shard {
    fn owns(&self, position: usize) -> bool {
        position % self.count == self.index
    }
}

struct Phases {
    selection_seconds: f64,
    hyp_seconds: f64,
    train_seconds: f64,
    test_seconds: f64,
    evaluations: usize,
    theta: Vec<Hyperparameters>,
    mean: ndarray::Array1<f64>,
    variance: Option<ndarray::Array1<f64>>,
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let started = Instant::now();
    let out = f()?;
    Ok((out, started.elapsed().as_secs_f64()))
}

fn predicted(p: PredictiveDistribution) -> (ndarray::Array1<f64>, Option<ndarray::Array1<f64>>) {
    (p.mean, Some(p.observation_variance))
}

struct CellContext<'a> {
    x: ArrayView2<'a, f64>,
    y: ArrayView1<'a, f64>,
    xs: ArrayView2<'a, f64>,
    fixed: Option<&'a Hyperparameters>,
    init: Option<Hyperparameters>,
    budget: &'a OptBudget,
    cg_tol: f64,
}

impl CellContext<'_> {
    /// θ₀ in learn mode, the fixed θ otherwise.
    fn start(&self) -> &Hyperparameters {
        self.fixed
            .or(self.init.as_ref())
            .expect("either fixed or initial hyperparameters")
    }

    fn learning(&self) -> bool {
        self.fixed.is_none()
    }

    fn optimize<F>(&self, objective: F) -> Result<(Hyperparameters, usize, f64)>
    where
        F: FnMut(&Hyperparameters) -> Result<LogMl>,
    {
        if !self.learning() {
            return Ok((self.start().clone(), 0, 0.0));
        }
        let (out, secs) = timed(|| maximize_logml(objective, self.start(), self.budget))?;
        Ok((out.hyperparameters, out.evaluations, secs))
    }

    fn run(&self, spec: &MethodSpec, m: usize, seed: u64) -> Result<Phases> {
        let (x, y, xs) = (self.x, self.y, self.xs);
        let jitter = JitterPolicy::default();
        let t = xs.nrows().max(1) as f64;
        match spec.method {
            Method::Exact => {
                let (theta, evaluations, hyp_seconds) = self.optimize(|hp: &Hyperparameters| exact_logml(x, y, hp))?;
                let (model, train_seconds) = timed(|| exact_train(x, y, &theta))?;
                let (p, test_seconds) = timed(|| model.predict(xs))?;
                let (mean, variance) = predicted(p);
                Ok(Phases {
                    selection_seconds: 0.0,
                    hyp_seconds,
                    train_seconds,
                    test_seconds: test_seconds / t,
                    evaluations,
                    theta: vec![theta],
                    mean,
                    variance,
                })
            }
            Method::Sod | Method::Fitc | Method::Hybrid => {
                let selector = spec
                    .partitioner()
                    .and_then(Partitioner::selector)
                    .expect("validated selector");
                let (subset, selection_seconds) = timed(|| select_subset(x, m, selector, seed))?;
                let (theta, evaluations, hyp_seconds) = if spec.method == Method::Fitc {
                    self.optimize(|hp: &Hyperparameters| fitc_logml_on(x, y, &subset.indices, hp, &jitter))?
                } else {
                    self.optimize(|hp: &Hyperparameters| sod_logml_on(x, y, &subset, hp, &jitter))?
                };
                let (p, train_seconds, test_seconds) = if spec.method == Method::Sod {
                    let (model, tr) = timed(|| sod_train_on(x, y, subset, &theta, &jitter))?;
                    let (p, te) = timed(|| model.predict(xs))?;
                    (p, tr, te)
                } else {
                    let (model, tr) = timed(|| fitc_train_on(x, y, subset, &theta, &jitter))?;
                    let (p, te) = timed(|| model.predict(xs))?;
                    (p, tr, te)
                };
                let (mean, variance) = predicted(p);
                Ok(Phases {
                    selection_seconds,
                    hyp_seconds,
                    train_seconds,
                    test_seconds: test_seconds / t,
                    evaluations,
                    theta: vec![theta],
                    mean,
                    variance,
                })
            }
            Method::Local => {
                let (tree, selection_seconds) = timed(|| build_rpc(x, m, seed))?;
                let mode = spec.local_mode.unwrap_or_default();
                let (thetas, evaluations, hyp_seconds) = match (self.learning(), mode) {
                    (false, _) => (vec![self.start().clone()], 0, 0.0),
                    (true, LocalMode::Joint) => {
                        let (out, secs) = timed(|| learn_joint(x, y, &tree, self.start(), self.budget))?;
                        (vec![out.hyperparameters], out.evaluations, secs)
                    }
                    (true, LocalMode::Separate) => {
                        let (outs, secs) = timed(|| learn_separate(x, y, &tree, self.start(), self.budget))?;
                        let evals = outs.iter().map(|o| o.evaluations).sum();
                        (outs.into_iter().map(|o| o.hyperparameters).collect(), evals, secs)
                    }
                };
                let (model, train_seconds) = timed(|| local_train_on(x, y, tree, &thetas, &jitter))?;
                let (p, test_seconds) = timed(|| model.predict(xs))?;
                let (mean, variance) = predicted(p);
                Ok(Phases {
                    selection_seconds,
                    hyp_seconds,
                    train_seconds,
                    test_seconds: test_seconds / t,
                    evaluations,
                    theta: thetas,
                    mean,
                    variance,
                })
            }
            Method::Cg => {
                let theta = self.start().clone();
                let termination = Termination::tolerance(self.cg_tol, m);
                let (alpha, train_seconds) = timed(|| {
                    let op = DenseMvm::new(x, &theta)?;
                    let out = cg_solve(&op, y, &termination, TraceSchedule::default(), None)?;
                    if let CgStatus::Breakdown(msg) = &out.status {
                        return Err(GprError::NonFinite(format!("CG breakdown: {msg}")));
                    }
                    Ok(out.alpha)
                })?;
                let (mean, test_seconds) = timed(|| mean_from_alpha(x, &theta, alpha.view(), xs))?;
                Ok(Phases {
                    selection_seconds: 0.0,
                    hyp_seconds: 0.0,
                    train_seconds,
                    test_seconds: test_seconds / t,
                    evaluations: 0,
                    theta: vec![theta],
                    mean,
                    variance: None,
                })
            }
        }
    }
}

/// Fixed θ for the config, or `None` in learn mode.
pub fn fixed_hyperparameters(config: &ExperimentConfig, ds: &Dataset) -> Result<Option<Hyperparameters>> {
    match &config.hyperparameters {
        HyperparameterMode::Learn { .. } => Ok(None),
        HyperparameterMode::Fixed { value } => {
            value.check_dim(ds.input_dim())?;
            Ok(Some(value.clone()))
        }
        HyperparameterMode::Generative => match &ds.synthetic {
            Some(spec) => Ok(Some(spec.generative_hyperparameters()?)),
            None => Err(GprError::Config(
                "generative hyperparameters need a synthetic dataset".into(),
            )),
        },
    }
}

/// Runs every cell of the grid on `ds`, or only the cells owned by `shard`.
/// Failures are recorded per cell and never abort the grid.
pub fn run_on_dataset(config: &ExperimentConfig, ds: &Dataset, shard: Option<Shard>) -> Result<ExperimentReport> {
    config.validate()?;
    let n = ds.n_train();
    config.validate_against(n)?;
    let fixed = fixed_hyperparameters(config, ds)?;
    let init = match &config.hyperparameters {
        HyperparameterMode::Learn { kernel } => {
            Some(initial_hyperparameters(ds.train_y.view(), ds.input_dim(), *kernel)?)
        }
        _ => None,
    };
    let trivial = TrivialPredictor::from_targets(ds.train_y.view())?;
    let ctx = CellContext {
        x: ds.train_x.view(),
        y: ds.train_y.view(),
        xs: ds.test_x.view(),
        fixed: fixed.as_ref(),
        init,
        budget: &config.budget,
        cg_tol: config.cg_tol,
    };

    let mut cells = Vec::new();
    for (position, key) in enumerate_cells(config, n).into_iter().enumerate() {
        if shard.is_some_and(|s| !s.owns(position)) {
            continue;
        }
        let spec = &config.methods[key.method_index];
        let seed = config.run_seed(key.run);
        let selector = spec.partitioner();
        log::info!("cell {} m={} run={} seed={}", spec.method, key.m, key.run, seed);
        let outcome = catch_unwind(AssertUnwindSafe(|| ctx.run(spec, key.m, seed)));
        let cell = match outcome {
            Ok(Ok(ph)) => {
                let metrics = smse(ph.mean.view(), ds.test_y.view(), &trivial).and_then(|s| {
                    let l = match &ph.variance {
                        Some(v) => Some(msll(ph.mean.view(), v.view(), ds.test_y.view(), &trivial)?),
                        None => None,
                    };
                    Ok((s, l))
                });
                match metrics {
                    Ok((s, l)) => CellResult {
                        method: spec.method,
                        m: key.m,
                        run: key.run,
                        seed,
                        selector,
                        status: CellStatus::Ok,
                        selection_seconds: ph.selection_seconds,
                        hyp_seconds: ph.hyp_seconds,
                        train_seconds: ph.train_seconds,
                        test_seconds_per_point: ph.test_seconds,
                        smse: Some(s),
                        msll: l,
                        evaluations: ph.evaluations,
                        theta: ph.theta,
                    },
                    Err(e) => CellResult::failed(spec.method, key.m, key.run, seed, selector, e.to_string()),
                }
            }
            Ok(Err(e)) => CellResult::failed(spec.method, key.m, key.run, seed, selector, e.to_string()),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                CellResult::failed(spec.method, key.m, key.run, seed, selector, format!("panicked: {msg}"))
            }
        };
        if let CellStatus::Failed(reason) = &cell.status {
            log::warn!("cell {} m={} run={} failed: {reason}", spec.method, key.m, key.run);
        }
        cells.push(cell);
    }
    Ok(ExperimentReport {
        schema: super::config::SCHEMA_VERSION,
        dataset: ds.manifest(),
        config: config.clone(),
        cells,
    })
}

/// Resolves the dataset and runs the whole grid in this process.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let ds = config.resolve_dataset()?;
    run_on_dataset(config, &ds, None)
}

/// Reassembles shard reports into canonical cell order.
pub fn merge_shards(config: &ExperimentConfig, parts: Vec<ExperimentReport>) -> Result<ExperimentReport> {
    let first = parts
        .first()
        .ok_or_else(|| GprError::Config("no shard reports to merge".into()))?;
    let dataset = first.dataset.clone();
    let n = dataset.n_train;
    let mut pool: Vec<CellResult> = parts.into_iter().flat_map(|p| p.cells).collect();
    let mut cells = Vec::with_capacity(pool.len());
    for key in enumerate_cells(config, n) {
        let method = config.methods[key.method_index].method;
        let selector = config.methods[key.method_index].partitioner();
        let pos = pool
            .iter()
            .position(|c| c.method == method && c.m == key.m && c.run == key.run && c.selector == selector);
        match pos {
            Some(p) => cells.push(pool.swap_remove(p)),
            None => cells.push(CellResult::failed(
                method,
                key.m,
                key.run,
                config.run_seed(key.run),
                selector,
                "worker produced no result for this cell".into(),
            )),
        }
    }
    Ok(ExperimentReport {
        schema: super::config::SCHEMA_VERSION,
        dataset,
        config: config.clone(),
        cells,
    })
}
