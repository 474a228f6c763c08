//! Squared-exponential covariance, isotropic and ARD, in log-parameterization.
//!
//! The parameter vector used by the optimizers is ordered
//! `[log ℓ_1, …, log ℓ_L, log σ_f, log σ]` with `L = 1` (isotropic) or `D` (ARD).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{GprError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFlavor {
    Isotropic,
    Ard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHyperparameters", into = "RawHyperparameters")]
pub struct Hyperparameters {
    flavor: KernelFlavor,
    log_lengthscales: Vec<f64>,
    log_signal_std: f64,
    log_noise_std: f64,
}

#[derive(Serialize, Deserialize)]
struct RawHyperparameters {
    flavor: KernelFlavor,
    log_lengthscales: Vec<f64>,
    log_signal_std: f64,
    log_noise_std: f64,
}

impl TryFrom<RawHyperparameters> for Hyperparameters {
    type Error = GprError;

    fn try_from(raw: RawHyperparameters) -> Result<Self> {
        match raw.flavor {
            KernelFlavor::Isotropic => {
                if raw.log_lengthscales.len() != 1 {
                    return Err(GprError::InvalidHyperparameters(
                        "isotropic kernel takes exactly one lengthscale".into(),
                    ));
                }
                Hyperparameters::isotropic(raw.log_lengthscales[0], raw.log_signal_std, raw.log_noise_std)
            }
            KernelFlavor::Ard => Hyperparameters::ard(raw.log_lengthscales, raw.log_signal_std, raw.log_noise_std),
        }
    }
}

impl From<Hyperparameters> for RawHyperparameters {
    fn from(hp: Hyperparameters) -> Self {
        RawHyperparameters {
            flavor: hp.flavor,
            log_lengthscales: hp.log_lengthscales,
            log_signal_std: hp.log_signal_std,
            log_noise_std: hp.log_noise_std,
        }
    }
}

impl Hyperparameters {
    pub fn isotropic(log_lengthscale: f64, log_signal_std: f64, log_noise_std: f64) -> Result<Self> {
        Self::build(
            KernelFlavor::Isotropic,
            vec![log_lengthscale],
            log_signal_std,
            log_noise_std,
        )
    }

    pub fn ard(log_lengthscales: Vec<f64>, log_signal_std: f64, log_noise_std: f64) -> Result<Self> {
        if log_lengthscales.is_empty() {
            return Err(GprError::InvalidHyperparameters(
                "ARD kernel needs at least one lengthscale".into(),
            ));
        }
        Self::build(KernelFlavor::Ard, log_lengthscales, log_signal_std, log_noise_std)
    }

    /// Flavor-aware constructor from the flat optimizer vector.
    pub fn from_params(flavor: KernelFlavor, params: &[f64]) -> Result<Self> {
        if params.len() < 3 {
            return Err(GprError::InvalidHyperparameters(format!(
                "parameter vector too short ({})",
                params.len()
            )));
        }
        let n_ls = params.len() - 2;
        if flavor == KernelFlavor::Isotropic && n_ls != 1 {
            return Err(GprError::InvalidHyperparameters(
                "isotropic kernel takes exactly one lengthscale".into(),
            ));
        }
        Self::build(flavor, params[..n_ls].to_vec(), params[n_ls], params[n_ls + 1])
    }

    fn build(
        flavor: KernelFlavor,
        log_lengthscales: Vec<f64>,
        log_signal_std: f64,
        log_noise_std: f64,
    ) -> Result<Self> {
        let finite =
            log_lengthscales.iter().all(|v| v.is_finite()) && log_signal_std.is_finite() && log_noise_std.is_finite();
        if !finite {
            return Err(GprError::InvalidHyperparameters(
                "all log-hyperparameters must be finite".into(),
            ));
        }
        Ok(Hyperparameters {
            flavor,
            log_lengthscales,
            log_signal_std,
            log_noise_std,
        })
    }

    /// Same values, ARD flavor with `dim` lengthscales (isotropic value broadcast).
    pub fn to_ard(&self, dim: usize) -> Result<Self> {
        match self.flavor {
            KernelFlavor::Ard => {
                self.check_dim(dim)?;
                Ok(self.clone())
            }
            KernelFlavor::Isotropic => Self::ard(
                vec![self.log_lengthscales[0]; dim],
                self.log_signal_std,
                self.log_noise_std,
            ),
        }
    }

    pub fn flavor(&self) -> KernelFlavor {
        self.flavor
    }

    pub fn log_lengthscales(&self) -> &[f64] {
        &self.log_lengthscales
    }

    pub fn log_signal_std(&self) -> f64 {
        self.log_signal_std
    }

    pub fn log_noise_std(&self) -> f64 {
        self.log_noise_std
    }

    /// Lengthscale applying to input dimension `d`.
    pub fn lengthscale(&self, d: usize) -> f64 {
        match self.flavor {
            KernelFlavor::Isotropic => self.log_lengthscales[0].exp(),
            KernelFlavor::Ard => self.log_lengthscales[d].exp(),
        }
    }

    pub fn signal_variance(&self) -> f64 {
        (2.0 * self.log_signal_std).exp()
    }

    pub fn noise_variance(&self) -> f64 {
        (2.0 * self.log_noise_std).exp()
    }

    pub fn num_lengthscales(&self) -> usize {
        self.log_lengthscales.len()
    }

    /// Total number of log-hyperparameters, noise included.
    pub fn num_params(&self) -> usize {
        self.log_lengthscales.len() + 2
    }

    pub fn signal_index(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn noise_index(&self) -> usize {
        self.log_lengthscales.len() + 1
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.log_lengthscales.clone();
        v.push(self.log_signal_std);
        v.push(self.log_noise_std);
        v
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.num_params() {
            return Err(GprError::DimensionMismatch {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        Self::from_params(self.flavor, params)
    }

    pub fn with_log_noise_std(&self, log_noise_std: f64) -> Result<Self> {
        let mut p = self.to_vec();
        *p.last_mut().unwrap() = log_noise_std;
        self.with_params(&p)
    }

    /// Input dimension check: ARD must match exactly, isotropic fits any D.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.flavor == KernelFlavor::Ard && self.log_lengthscales.len() != dim {
            return Err(GprError::DimensionMismatch {
                expected: self.log_lengthscales.len(),
                got: dim,
            });
        }
        Ok(())
    }

    fn inverse_lengthscales(&self, dim: usize) -> Array1<f64> {
        Array1::from_shape_fn(dim, |d| 1.0 / self.lengthscale(d))
    }
}

/// `σ_f² exp(−½ Σ_d (x_d − x'_d)² / ℓ_d²)`, accumulated per dimension.
pub fn kernel_eval(x: ArrayView1<f64>, x2: ArrayView1<f64>, hp: &Hyperparameters) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(GprError::DimensionMismatch {
            expected: x.len(),
            got: x2.len(),
        });
    }
    hp.check_dim(x.len())?;
    let mut r2 = 0.0;
    for d in 0..x.len() {
        let t = (x[d] - x2[d]) / hp.lengthscale(d);
        r2 += t * t;
    }
    Ok(hp.signal_variance() * (-0.5 * r2).exp())
}

fn scaled(x: ArrayView2<f64>, hp: &Hyperparameters) -> Array2<f64> {
    let inv = hp.inverse_lengthscales(x.ncols());
    let mut out = x.as_standard_layout().into_owned();
    for mut row in out.rows_mut() {
        row *= &inv;
    }
    out
}

fn row_sq_norms(x: &Array2<f64>) -> Array1<f64> {
    x.map_axis(Axis(1), |r| r.dot(&r))
}

/// Cross-covariance `K(A, B)` from expanded-norm distances. The inner products
/// are accumulated by hand rather than through GEMM so every entry is
/// independent of how many rows are evaluated together.
pub fn kernel_matrix(a: ArrayView2<f64>, b: ArrayView2<f64>, hp: &Hyperparameters) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(GprError::DimensionMismatch {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    hp.check_dim(a.ncols())?;
    let sa = scaled(a, hp);
    let sb = scaled(b, hp);
    let na = row_sq_norms(&sa);
    let nb = row_sq_norms(&sb);
    let sf2 = hp.signal_variance();
    let (rows, cols, d) = (a.nrows(), b.nrows(), a.ncols());
    if rows == 0 || cols == 0 || d == 0 {
        return Ok(Array2::from_elem((rows, cols), sf2));
    }
    let flat_a = sa.as_slice().expect("standard layout");
    let flat_b = sb.as_slice().expect("standard layout");
    let mut k = Array2::zeros((rows, cols));
    let out = k.as_slice_mut().expect("fresh array");
    for ((row, ai), ni) in out.chunks_exact_mut(cols).zip(flat_a.chunks_exact(d)).zip(na.iter()) {
        for ((g, bj), nj) in row.iter_mut().zip(flat_b.chunks_exact(d)).zip(nb.iter()) {
            let cross: f64 = ai.iter().zip(bj).map(|(p, q)| p * q).sum();
            let r2 = (ni + nj - 2.0 * cross).max(0.0);
            *g = sf2 * (-0.5 * r2).exp();
        }
    }
    Ok(k)
}

/// `K(X, X)`: lower triangle computed, mirrored, exact `σ_f²` diagonal.
/// Entries agree bit for bit with [`kernel_matrix`]`(x, x)` off the diagonal.
pub fn kernel_matrix_sym(x: ArrayView2<f64>, hp: &Hyperparameters) -> Result<Array2<f64>> {
    hp.check_dim(x.ncols())?;
    let sx = scaled(x, hp);
    let nx = row_sq_norms(&sx);
    let sf2 = hp.signal_variance();
    let (n, d) = (x.nrows(), x.ncols());
    if d == 0 {
        return Ok(Array2::from_elem((n, n), sf2));
    }
    let rows: Vec<&[f64]> = sx.as_slice().expect("standard layout").chunks_exact(d).collect();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        k[[i, i]] = sf2;
        for j in 0..i {
            let cross: f64 = rows[i].iter().zip(rows[j]).map(|(p, q)| p * q).sum();
            let r2 = (nx[i] + nx[j] - 2.0 * cross).max(0.0);
            let v = sf2 * (-0.5 * r2).exp();
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    Ok(k)
}

/// `∂K/∂θ_which` on `K(X, X)` for a lengthscale or the signal amplitude.
///
/// The noise term is not a kernel parameter; `which == hp.noise_index()` is
/// rejected like any other out-of-range index.
pub fn kernel_matrix_grad(x: ArrayView2<f64>, hp: &Hyperparameters, which: usize) -> Result<Array2<f64>> {
    let count = hp.num_lengthscales() + 1;
    if which >= count {
        return Err(GprError::HyperparameterIndex { index: which, count });
    }
    let k = kernel_matrix_sym(x, hp)?;
    if which == hp.signal_index() {
        return Ok(k * 2.0);
    }
    let n = x.nrows();
    let dims: Vec<usize> = match hp.flavor() {
        KernelFlavor::Isotropic => (0..x.ncols()).collect(),
        KernelFlavor::Ard => vec![which],
    };
    let mut g = k;
    for i in 0..n {
        for j in 0..n {
            let mut r2 = 0.0;
            for &d in &dims {
                let t = (x[[i, d]] - x[[j, d]]) / hp.lengthscale(d);
                r2 += t * t;
            }
            g[[i, j]] *= r2;
        }
    }
    Ok(g)
}

/// Contracts a weighted kernel matrix `H = W ∘ K(A, B)` against the lengthscale
/// derivatives: entry `p` is `Σ_ij H_ij (a_id − b_jd)² / ℓ_d²` for the
/// dimensions `d` governed by lengthscale `p`. This equals `Σ W ∘ ∂K/∂log ℓ_p`
/// without materialising any derivative matrix.
pub fn lengthscale_contraction(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    weighted_k: ArrayView2<f64>,
    hp: &Hyperparameters,
) -> Vec<f64> {
    let dim = a.ncols();
    let row_sums = weighted_k.sum_axis(Axis(1));
    let col_sums = weighted_k.sum_axis(Axis(0));
    let mut per_dim = vec![0.0; dim];
    for (d, out) in per_dim.iter_mut().enumerate() {
        let ad = a.column(d);
        let bd = b.column(d);
        let a2: f64 = ad.iter().zip(row_sums.iter()).map(|(v, s)| v * v * s).sum();
        let b2: f64 = bd.iter().zip(col_sums.iter()).map(|(v, s)| v * v * s).sum();
        let cross = ad.dot(&weighted_k.dot(&bd));
        let ell = hp.lengthscale(d);
        *out = (a2 + b2 - 2.0 * cross) / (ell * ell);
    }
    match hp.flavor() {
        KernelFlavor::Isotropic => vec![per_dim.iter().sum()],
        KernelFlavor::Ard => per_dim,
    }
}
