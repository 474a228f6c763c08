//! Full Gaussian process regression through one Cholesky factorization.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{GprError, Result};
use crate::kernel::{kernel_matrix, kernel_matrix_sym, lengthscale_contraction, Hyperparameters};
use crate::linalg::{column_sq_norms, Cholesky, JitterPolicy};

/// Test points are predicted in chunks of this many rows to bound memory.
pub(crate) const PREDICT_CHUNK: usize = 1024;

/// Per-test-point Gaussian predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: Array1<f64>,
    pub latent_variance: Array1<f64>,
    /// `latent_variance + σ²`
    pub observation_variance: Array1<f64>,
}

impl PredictiveDistribution {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub(crate) fn with_capacity(t: usize) -> Self {
        PredictiveDistribution {
            mean: Array1::zeros(t),
            latent_variance: Array1::zeros(t),
            observation_variance: Array1::zeros(t),
        }
    }

    pub(crate) fn set(&mut self, i: usize, mean: f64, latent: f64, observation: f64) {
        self.mean[i] = mean;
        self.latent_variance[i] = latent;
        self.observation_variance[i] = observation;
    }
}

/// Log marginal likelihood and its gradient with respect to the log-hyperparameters
/// (lengthscales, signal, noise).
#[derive(Debug, Clone, PartialEq)]
pub struct LogMl {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LogMl {
    pub(crate) fn accumulate(&mut self, other: &LogMl) {
        self.value += other.value;
        for (g, o) in self.grad.iter_mut().zip(&other.grad) {
            *g += o;
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExactModel {
    training_inputs: Array2<f64>,
    cholesky: Cholesky,
    alpha: Array1<f64>,
    hp: Hyperparameters,
}

pub(crate) fn check_xy(x: ArrayView2<f64>, y: ArrayView1<f64>, hp: &Hyperparameters) -> Result<()> {
    if x.nrows() == 0 {
        return Err(GprError::Degenerate("no training points".into()));
    }
    if x.nrows() != y.len() {
        return Err(GprError::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GprError::NonFinite("training targets".into()));
    }
    hp.check_dim(x.ncols())
}

fn noisy_gram(x: ArrayView2<f64>, hp: &Hyperparameters) -> Result<Array2<f64>> {
    let mut k = kernel_matrix_sym(x, hp)?;
    let sn2 = hp.noise_variance();
    k.diag_mut().mapv_inplace(|d| d + sn2);
    Ok(k)
}

pub fn exact_train(x: ArrayView2<f64>, y: ArrayView1<f64>, hp: &Hyperparameters) -> Result<ExactModel> {
    exact_train_with(x, y, hp, &JitterPolicy::default())
}

pub fn exact_train_with(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    hp: &Hyperparameters,
    jitter: &JitterPolicy,
) -> Result<ExactModel> {
    check_xy(x, y, hp)?;
    let cholesky = Cholesky::factor(noisy_gram(x, hp)?, jitter)?;
    let alpha = cholesky.solve_vec(y);
    Ok(ExactModel {
        training_inputs: x.to_owned(),
        cholesky,
        alpha,
        hp: hp.clone(),
    })
}

impl ExactModel {
    pub fn alpha(&self) -> &Array1<f64> {
        &self.alpha
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.cholesky
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn training_inputs(&self) -> &Array2<f64> {
        &self.training_inputs
    }

    pub fn n_train(&self) -> usize {
        self.training_inputs.nrows()
    }

    /// Predictive mean `k*ᵀ α` and variance `k** − ‖L⁻¹ k*‖²`.
    pub fn predict(&self, xstar: ArrayView2<f64>) -> Result<PredictiveDistribution> {
        let dim = self.training_inputs.ncols();
        if xstar.ncols() != dim {
            return Err(GprError::DimensionMismatch {
                expected: dim,
                got: xstar.ncols(),
            });
        }
        let t = xstar.nrows();
        let mut out = PredictiveDistribution::with_capacity(t);
        let sf2 = self.hp.signal_variance();
        let sn2 = self.hp.noise_variance();
        let floor = sf2 * 1e-15;
        for start in (0..t).step_by(PREDICT_CHUNK) {
            let end = (start + PREDICT_CHUNK).min(t);
            let chunk = xstar.slice(s![start..end, ..]);
            // n × c
            let kx = kernel_matrix(self.training_inputs.view(), chunk, &self.hp)?;
            // sequential accumulation over training rows keeps each mean
            // independent of the batch size
            let mut mean = Array1::<f64>::zeros(end - start);
            for (row, &w) in kx.rows().into_iter().zip(self.alpha.iter()) {
                mean.scaled_add(w, &row);
            }
            let v = self.cholesky.solve_lower(kx.view());
            let explained = column_sq_norms(v.view());
            for j in 0..end - start {
                let latent = (sf2 - explained[j]).clamp(floor, sf2);
                out.set(start + j, mean[j], latent, latent + sn2);
            }
        }
        Ok(out)
    }

    /// Predictive means only, `O(n)` per point.
    pub fn predict_mean(&self, xstar: ArrayView2<f64>) -> Result<Array1<f64>> {
        let kx = kernel_matrix(xstar, self.training_inputs.view(), &self.hp)?;
        Ok(kx.dot(&self.alpha))
    }
}

pub fn exact_logml(x: ArrayView2<f64>, y: ArrayView1<f64>, hp: &Hyperparameters) -> Result<LogMl> {
    exact_logml_with(x, y, hp, &JitterPolicy::default())
}

/// `L = −½ yᵀα − Σ log L_ii − (n/2) log 2π` with the trace-identity gradient
/// `∂L/∂θ = ½ tr((ααᵀ − (K+σ²I)⁻¹) ∂(K+σ²I)/∂θ)`.
pub fn exact_logml_with(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    hp: &Hyperparameters,
    jitter: &JitterPolicy,
) -> Result<LogMl> {
    check_xy(x, y, hp)?;
    let n = x.nrows();
    let k = kernel_matrix_sym(x, hp)?;
    let mut ky = k.clone();
    let sn2 = hp.noise_variance();
    ky.diag_mut().mapv_inplace(|d| d + sn2);
    let chol = Cholesky::factor(ky, jitter)?;
    let alpha = chol.solve_vec(y);
    let value = -0.5 * y.dot(&alpha) - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // W = ααᵀ − K⁻¹, reusing the inverse buffer
    let mut w = chol.inverse();
    for i in 0..n {
        for j in 0..n {
            w[[i, j]] = alpha[i] * alpha[j] - w[[i, j]];
        }
    }
    let trace_w = w.diag().sum();
    let h = &w * &k;
    let mut grad: Vec<f64> = lengthscale_contraction(x, x, h.view(), hp)
        .into_iter()
        .map(|v| 0.5 * v)
        .collect();
    grad.push(h.sum());
    grad.push(sn2 * trace_w);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(GprError::NonFinite("exact log marginal likelihood".into()));
    }
    Ok(LogMl { value, grad })
}
