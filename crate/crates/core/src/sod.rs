//! Subset of Data: exact GPR on `m` selected training rows.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::Result;
use crate::exact::{exact_logml_with, exact_train_with, ExactModel, LogMl, PredictiveDistribution};
use crate::kernel::Hyperparameters;
use crate::linalg::JitterPolicy;
use crate::selection::{select_subset, Selector, SubsetChoice};

#[derive(Debug, Clone)]
pub struct SodModel {
    subset: SubsetChoice,
    inner: ExactModel,
}

/// Rows `subset` of `x` and `y`.
pub fn gather_rows(x: ArrayView2<f64>, y: ArrayView1<f64>, subset: &[usize]) -> (Array2<f64>, Array1<f64>) {
    (x.select(Axis(0), subset), y.select(Axis(0), subset))
}

pub fn sod_train(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    m: usize,
    selector: Selector,
    seed: u64,
    hp: &Hyperparameters,
) -> Result<SodModel> {
    let subset = select_subset(x, m, selector, seed)?;
    sod_train_on(x, y, subset, hp, &JitterPolicy::default())
}

/// Trains on an already chosen subset; the harness times selection separately.
pub fn sod_train_on(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    subset: SubsetChoice,
    hp: &Hyperparameters,
    jitter: &JitterPolicy,
) -> Result<SodModel> {
    let (xs, ys) = gather_rows(x, y, &subset.indices);
    let inner = exact_train_with(xs.view(), ys.view(), hp, jitter)?;
    Ok(SodModel { subset, inner })
}

impl SodModel {
    pub fn subset(&self) -> &SubsetChoice {
        &self.subset
    }

    pub fn inner(&self) -> &ExactModel {
        &self.inner
    }

    pub fn predict(&self, xstar: ArrayView2<f64>) -> Result<PredictiveDistribution> {
        self.inner.predict(xstar)
    }
}

pub fn sod_logml(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    m: usize,
    selector: Selector,
    seed: u64,
    hp: &Hyperparameters,
) -> Result<LogMl> {
    let subset = select_subset(x, m, selector, seed)?;
    sod_logml_on(x, y, &subset, hp, &JitterPolicy::default())
}

pub fn sod_logml_on(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    subset: &SubsetChoice,
    hp: &Hyperparameters,
    jitter: &JitterPolicy,
) -> Result<LogMl> {
    let (xs, ys) = gather_rows(x, y, &subset.indices);
    exact_logml_with(xs.view(), ys.view(), hp, jitter)
}
