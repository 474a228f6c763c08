//! Standardized mean squared error and mean standardized log loss, both
//! relative to a predictor that always returns the training mean and variance.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{GprError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrivialPredictor {
    pub train_mean: f64,
    /// Biased (`1/n`) variance of the training targets.
    pub train_variance: f64,
}

impl TrivialPredictor {
    pub fn from_targets(y: ArrayView1<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(GprError::Degenerate("no training targets".into()));
        }
        let train_mean = y.sum() / n as f64;
        let train_variance = y.iter().map(|v| (v - train_mean).powi(2)).sum::<f64>() / n as f64;
        Ok(TrivialPredictor {
            train_mean,
            train_variance,
        })
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(GprError::DimensionMismatch { expected: b, got: a });
    }
    if a == 0 {
        return Err(GprError::Degenerate("empty test set".into()));
    }
    Ok(())
}

pub fn smse(mean: ArrayView1<f64>, targets: ArrayView1<f64>, trivial: &TrivialPredictor) -> Result<f64> {
    check_lengths(mean.len(), targets.len())?;
    let mut sse = 0.0;
    let mut sse_trivial = 0.0;
    for (m, t) in mean.iter().zip(targets.iter()) {
        sse += (t - m).powi(2);
        sse_trivial += (t - trivial.train_mean).powi(2);
    }
    if !(sse_trivial > 0.0) {
        return Err(GprError::Degenerate(
            "test targets all equal the training mean; SMSE is undefined".into(),
        ));
    }
    Ok(sse / sse_trivial)
}

fn neg_log_density(y: f64, mean: f64, var: f64) -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * var).ln() + (y - mean).powi(2) / (2.0 * var)
}

/// Mean over test points of `−log N(y; μ, v) + log N(y; ȳ_train, s²_train)`,
/// in nats. `variance` must be the observation variance (latent plus noise).
pub fn msll(
    mean: ArrayView1<f64>,
    variance: ArrayView1<f64>,
    targets: ArrayView1<f64>,
    trivial: &TrivialPredictor,
) -> Result<f64> {
    check_lengths(mean.len(), targets.len())?;
    check_lengths(variance.len(), targets.len())?;
    if !(trivial.train_variance > 0.0) {
        return Err(GprError::Degenerate(
            "constant training targets; MSLL is undefined".into(),
        ));
    }
    let mut total = 0.0;
    for ((m, v), t) in mean.iter().zip(variance.iter()).zip(targets.iter()) {
        if !(*v > 0.0) || !v.is_finite() {
            return Err(GprError::NonFinite(format!("predictive variance {v}")));
        }
        total += neg_log_density(*t, *m, *v) - neg_log_density(*t, trivial.train_mean, trivial.train_variance);
    }
    Ok(total / targets.len() as f64)
}
