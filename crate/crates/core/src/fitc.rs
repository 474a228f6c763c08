//! FITC: inducing points drawn from the training inputs, a rank-`m` plus
//! diagonal training covariance, and the Hybrid procedure that learns
//! hyperparameters on the SoD likelihood before a single FITC fit.
//!
//! With `V = L_uu⁻¹ K_un`, `Λ = diag(K − VᵀV) + σ²` and `A = I + V Λ⁻¹ Vᵀ`
//! every quantity below costs `O(m²n)` time and `O(mn)` memory.

use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{GprError, Result};
use crate::exact::{check_xy, LogMl, PredictiveDistribution, PREDICT_CHUNK};
use crate::kernel::{kernel_matrix, kernel_matrix_sym, lengthscale_contraction, Hyperparameters};
use crate::linalg::{column_sq_norms, Cholesky, JitterPolicy};
use crate::optimizer::{maximize_logml, OptBudget, OptOutcome};
use crate::selection::{select_subset, Selector, SubsetChoice};
use crate::sod::sod_logml_on;

/// SoR / FITC covariance routed through a fixed inducing set.
#[derive(Debug, Clone)]
pub struct FitcKernel {
    inducing: Array2<f64>,
    luu: Cholesky,
    hp: Hyperparameters,
}

impl FitcKernel {
    pub fn new(inducing: ArrayView2<f64>, hp: &Hyperparameters) -> Result<Self> {
        Self::with_jitter(inducing, hp, &JitterPolicy::default())
    }

    pub fn with_jitter(inducing: ArrayView2<f64>, hp: &Hyperparameters, jitter: &JitterPolicy) -> Result<Self> {
        if inducing.nrows() == 0 {
            return Err(GprError::Degenerate("empty inducing set".into()));
        }
        let luu = Cholesky::factor(kernel_matrix_sym(inducing, hp)?, jitter)?;
        Ok(FitcKernel {
            inducing: inducing.to_owned(),
            luu,
            hp: hp.clone(),
        })
    }

    /// `k(x_i, U) K_uu⁻¹ k(U, x_j)`.
    pub fn sor(&self, xi: ArrayView1<f64>, xj: ArrayView1<f64>) -> Result<f64> {
        let ki = kernel_matrix(self.inducing.view(), xi.insert_axis(Axis(0)), &self.hp)?;
        let kj = kernel_matrix(self.inducing.view(), xj.insert_axis(Axis(0)), &self.hp)?;
        let wi = self.luu.solve_lower_vec(ki.column(0));
        let wj = self.luu.solve_lower_vec(kj.column(0));
        Ok(wi.dot(&wj))
    }

    /// `k_FITC`: SoR everywhere except when both arguments are the same point
    /// instance, where the exact `k(x, x)` is restored.
    pub fn eval(&self, xi: ArrayView1<f64>, xj: ArrayView1<f64>, same_instance: bool) -> Result<f64> {
        if same_instance {
            crate::kernel::kernel_eval(xi, xj, &self.hp)
        } else {
            self.sor(xi, xj)
        }
    }
}

pub fn fitc_kernel_eval(
    xi: ArrayView1<f64>,
    xj: ArrayView1<f64>,
    same_instance: bool,
    inducing: ArrayView2<f64>,
    hp: &Hyperparameters,
) -> Result<f64> {
    FitcKernel::new(inducing, hp)?.eval(xi, xj, same_instance)
}

/// Shared factorization of the FITC training covariance.
struct FitcFactors {
    inducing_inputs: Array2<f64>,
    luu: Cholesky,
    lambda: Array1<f64>,
    la: Cholesky,
    r: Array1<f64>,
    grad: Option<GradientTerms>,
}

/// Intermediates only the likelihood gradient needs. Training skips them to
/// avoid two m × n copies.
struct GradientTerms {
    kuu: Array2<f64>,
    kun: Array2<f64>,
    /// `L_uu⁻¹ K_un`
    v: Array2<f64>,
}

fn factorize(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    inducing: &[usize],
    hp: &Hyperparameters,
    jitter: &JitterPolicy,
    keep_gradient_terms: bool,
) -> Result<FitcFactors> {
    check_xy(x, y, hp)?;
    let n = x.nrows();
    if inducing.is_empty() || inducing.iter().any(|&i| i >= n) {
        return Err(GprError::SubsetSize { m: inducing.len(), n });
    }
    let u = x.select(Axis(0), inducing);
    let kuu = kernel_matrix_sym(u.view(), hp)?;
    let luu = Cholesky::factor(kuu.clone(), jitter)?;
    let kun = kernel_matrix(u.view(), x, hp)?;
    let (v, kun) = if keep_gradient_terms {
        (luu.solve_lower(kun.view()), Some(kun))
    } else {
        (luu.solve_lower_owned(kun), None)
    };
    let sf2 = hp.signal_variance();
    let sn2 = hp.noise_variance();
    let lambda = column_sq_norms(v.view()).mapv(|q| (sf2 - q).max(0.0) + sn2);
    if lambda.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(GprError::NonFinite("FITC diagonal correction".into()));
    }
    let y_over = &y / &lambda;
    let r = v.dot(&y_over);
    let inv_sqrt = lambda.mapv(|l| 1.0 / l.sqrt());
    let (mut vs, v) = match kun {
        Some(_) => (v.clone(), Some(v)),
        None => (v, None),
    };
    for mut row in vs.rows_mut() {
        row.zip_mut_with(&inv_sqrt, |a, &s| *a *= s);
    }
    let mut a = vs.dot(&vs.t());
    drop(vs);
    a.diag_mut().mapv_inplace(|d| d + 1.0);
    let la = Cholesky::factor(a, jitter)?;
    debug_assert_eq!(r.len(), inducing.len());
    let grad = match (kun, v) {
        (Some(kun), Some(v)) => Some(GradientTerms { kuu, kun, v }),
        _ => None,
    };
    Ok(FitcFactors {
        inducing_inputs: u,
        luu,
        lambda,
        la,
        r,
        grad,
    })
}

#[derive(Debug, Clone)]
pub struct FitcModel {
    inducing: SubsetChoice,
    inducing_inputs: Array2<f64>,
    luu: Cholesky,
    la: Cholesky,
    beta: Array1<f64>,
    hp: Hyperparameters,
}

pub fn fitc_train(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    m: usize,
    selector: Selector,
    seed: u64,
    hp: &Hyperparameters,
) -> Result<FitcModel> {
    let inducing = select_subset(x, m, selector, seed)?;
    fitc_train_on(x, y, inducing, hp, &JitterPolicy::default())
}

pub fn fitc_train_on(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    inducing: SubsetChoice,
    hp: &Hyperparameters,
    jitter: &JitterPolicy,
) -> Result<FitcModel> {
    let f = factorize(x, y, &inducing.indices, hp, jitter, false)?;
    // β = L_uu⁻ᵀ A⁻¹ V Λ⁻¹ y
    let beta = f.luu.solve_upper_vec(f.la.solve_vec(f.r.view()).view());
    Ok(FitcModel {
        inducing,
        inducing_inputs: f.inducing_inputs,
        luu: f.luu,
        la: f.la,
        beta,
        hp: hp.clone(),
    })
}

impl FitcModel {
    pub fn inducing(&self) -> &SubsetChoice {
        &self.inducing
    }

    pub fn inducing_inputs(&self) -> &Array2<f64> {
        &self.inducing_inputs
    }

    /// Mean weights: `f̄_* = Σ_i β_i k(x_*, u_i)`.
    pub fn beta(&self) -> &Array1<f64> {
        &self.beta
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    /// Variance `k** − ‖L_uu⁻¹ k_u*‖² + ‖L_A⁻¹ L_uu⁻¹ k_u*‖²`, i.e. the exact
    /// predictive variance under `k_FITC`.
    pub fn predict(&self, xstar: ArrayView2<f64>) -> Result<PredictiveDistribution> {
        let dim = self.inducing_inputs.ncols();
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
            let ku = kernel_matrix(self.inducing_inputs.view(), xstar.slice(s![start..end, ..]), &self.hp)?;
            // sequential accumulation over training rows keeps each mean
            // independent of the batch size
            let mut mean = Array1::<f64>::zeros(end - start);
            for (row, &w) in ku.rows().into_iter().zip(self.beta.iter()) {
                mean.scaled_add(w, &row);
            }
            let w = self.luu.solve_lower(ku.view());
            let z = self.la.solve_lower(w.view());
            let qss = column_sq_norms(w.view());
            let back = column_sq_norms(z.view());
            for j in 0..end - start {
                let latent = (sf2 - qss[j] + back[j]).clamp(floor, sf2);
                out.set(start + j, mean[j], latent, latent + sn2);
            }
        }
        Ok(out)
    }
}

pub fn fitc_logml(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    m: usize,
    selector: Selector,
    seed: u64,
    hp: &Hyperparameters,
) -> Result<LogMl> {
    let inducing = select_subset(x, m, selector, seed)?;
    fitc_logml_on(x, y, &inducing.indices, hp, &JitterPolicy::default())
}

/// FITC log marginal likelihood and gradient for a fixed inducing set.
pub fn fitc_logml_on(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    inducing: &[usize],
    hp: &Hyperparameters,
    jitter: &JitterPolicy,
) -> Result<LogMl> {
    let f = factorize(x, y, inducing, hp, jitter, true)?;
    let g = f.grad.as_ref().expect("gradient terms requested");
    let n = x.nrows();
    let sn2 = hp.noise_variance();
    let sf2 = hp.signal_variance();

    let ar = f.la.solve_vec(f.r.view()); // A⁻¹ r
    let quad = y.iter().zip(f.lambda.iter()).map(|(yi, l)| yi * yi / l).sum::<f64>() - f.r.dot(&ar);
    let log_det = f.lambda.iter().map(|l| l.ln()).sum::<f64>() + f.la.log_det();
    let value = -0.5 * quad - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // α = C⁻¹ y = Λ⁻¹ (y − Vᵀ A⁻¹ r)
    let alpha = (&y - &g.v.t().dot(&ar)) / &f.lambda;
    // β = P α = L_uu⁻ᵀ A⁻¹ r
    let beta = f.luu.solve_upper_vec(ar.view());
    // diag(C⁻¹) through B = L_A⁻¹ V
    let b = f.la.solve_lower(g.v.view());
    let b_sq = column_sq_norms(b.view());
    let cdiag = Zip::from(&f.lambda)
        .and(&b_sq)
        .map_collect(|l, bs| 1.0 / l - bs / (l * l));
    let w = Zip::from(&alpha).and(&cdiag).map_collect(|a, c| 0.5 * (a * a - c));

    let p = f.luu.solve_upper(g.v.view()); // K_uu⁻¹ K_un
    let inv_lambda = f.lambda.mapv(|l| 1.0 / l);
    // M = P C⁻¹ = L_uu⁻ᵀ L_A⁻ᵀ B Λ⁻¹
    let m_mat = f.luu.solve_upper(f.la.solve_upper((&b * &inv_lambda).view()).view());
    // M Pᵀ = L_uu⁻ᵀ (I − A⁻¹) L_uu⁻¹
    let e = f.luu.lower_inverse();
    let ainv_e = f.la.inverse().dot(&e);
    let mpt = e.t().dot(&e) - e.t().dot(&ainv_e);
    let pw = &p * &w;
    let s_mat = pw.dot(&p.t());

    // G_un = β αᵀ − M − 2 P diag(w)
    let mut g_un = m_mat;
    g_un.mapv_inplace(|v| -v);
    Zip::from(&mut g_un).and(&pw).for_each(|g, pw| *g -= 2.0 * pw);
    for (k, mut row) in g_un.rows_mut().into_iter().enumerate() {
        row.scaled_add(beta[k], &alpha);
    }
    // G_uu = −½ ββᵀ + ½ M Pᵀ + S
    let mut g_uu = mpt * 0.5 + s_mat;
    let mm = beta.len();
    for k in 0..mm {
        for l in 0..mm {
            g_uu[[k, l]] -= 0.5 * beta[k] * beta[l];
        }
    }

    let h_un = &g_un * &g.kun;
    let h_uu = &g_uu * &g.kuu;
    let u = f.inducing_inputs.view();
    let c_un = lengthscale_contraction(u, x, h_un.view(), hp);
    let c_uu = lengthscale_contraction(u, u, h_uu.view(), hp);
    let mut grad: Vec<f64> = c_un.iter().zip(&c_uu).map(|(a, b)| a + b).collect();

    // jitter scales with σ_f², so the signal derivative of K_uu + jI is 2(K_uu + jI)
    let jitter_term = f.luu.jitter() * g_uu.diag().sum();
    let w_sum = w.sum();
    grad.push(2.0 * (h_un.sum() + h_uu.sum() + jitter_term + sf2 * w_sum));
    grad.push(2.0 * sn2 * w_sum);

    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(GprError::NonFinite("FITC log marginal likelihood".into()));
    }
    Ok(LogMl { value, grad })
}

/// Hybrid result: the FITC model plus what the SoD learning stage produced.
#[derive(Debug, Clone)]
pub struct HybridOutcome {
    pub model: FitcModel,
    pub optimization: OptOutcome,
    pub learning_seconds: f64,
    pub training_seconds: f64,
}

/// Learns hyperparameters on the SoD likelihood of the selected subset, then
/// fits FITC with the same subset as inducing set.
pub fn hybrid_train(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    m: usize,
    selector: Selector,
    seed: u64,
    init: &Hyperparameters,
    budget: &OptBudget,
) -> Result<HybridOutcome> {
    let subset = select_subset(x, m, selector, seed)?;
    hybrid_train_on(x, y, subset, init, budget, &JitterPolicy::default())
}

pub fn hybrid_train_on(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    subset: SubsetChoice,
    init: &Hyperparameters,
    budget: &OptBudget,
    jitter: &JitterPolicy,
) -> Result<HybridOutcome> {
    let started = Instant::now();
    let optimization = maximize_logml(
        |hp: &Hyperparameters| sod_logml_on(x, y, &subset, hp, jitter),
        init,
        budget,
    )?;
    let learning_seconds = started.elapsed().as_secs_f64();
    let started = Instant::now();
    let model = fitc_train_on(x, y, subset, &optimization.hyperparameters, jitter)?;
    let training_seconds = started.elapsed().as_secs_f64();
    Ok(HybridOutcome {
        model,
        optimization,
        learning_seconds,
        training_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::kernel_eval;
    use ndarray::array;

    fn toy() -> (Array2<f64>, Array1<f64>) {
        let x = array![
            [0.0, 0.1],
            [0.5, -0.3],
            [1.2, 0.8],
            [-0.9, 0.4],
            [0.3, 1.5],
            [-1.1, -0.7]
        ];
        let y = array![0.2, -0.4, 1.0, 0.5, -0.1, 0.7];
        (x, y)
    }

    #[test]
    fn diagonal_is_exact() {
        let (x, _) = toy();
        let hp = Hyperparameters::isotropic(0.1, 0.2, -1.0).unwrap();
        let kern = FitcKernel::new(x.slice(s![..2, ..]), &hp).unwrap();
        for i in 0..x.nrows() {
            let v = kern.eval(x.row(i), x.row(i), true).unwrap();
            assert_eq!(v, kernel_eval(x.row(i), x.row(i), &hp).unwrap());
        }
    }

    #[test]
    fn sor_exact_when_one_argument_is_inducing() {
        let (x, _) = toy();
        let hp = Hyperparameters::isotropic(0.1, 0.2, -1.0).unwrap();
        let kern = FitcKernel::new(x.slice(s![..3, ..]), &hp).unwrap();
        for j in 0..x.nrows() {
            let sor = kern.sor(x.row(1), x.row(j)).unwrap();
            let exact = kernel_eval(x.row(1), x.row(j), &hp).unwrap();
            assert!((sor - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn far_point_reverts_to_prior() {
        let (x, y) = toy();
        let hp = Hyperparameters::isotropic(0.0, 0.1, -1.5).unwrap();
        let model = fitc_train(x.view(), y.view(), 3, Selector::Random, 1, &hp).unwrap();
        let p = model.predict(array![[50.0, -50.0]].view()).unwrap();
        assert!(p.mean[0].abs() < 1e-12);
        assert!((p.latent_variance[0] - hp.signal_variance()).abs() < 1e-12);
    }

    #[test]
    fn batching_does_not_change_predictions() {
        let (x, y) = toy();
        let hp = Hyperparameters::ard(vec![0.1, -0.2], 0.1, -1.5).unwrap();
        let model = fitc_train(x.view(), y.view(), 4, Selector::Fpc, 2, &hp).unwrap();
        let xs = Array2::from_shape_fn((100, 2), |(i, j)| (i as f64 * 0.037 + j as f64 * 0.51).sin() * 2.0);
        let batch = model.predict(xs.view()).unwrap();
        for i in 0..100 {
            let single = model.predict(xs.slice(s![i..i + 1, ..])).unwrap();
            assert_eq!(single.mean[0], batch.mean[i]);
            assert_eq!(single.latent_variance[0], batch.latent_variance[i]);
        }
    }

    #[test]
    fn zero_budget_hybrid_is_plain_fitc() {
        let (x, y) = toy();
        let hp = Hyperparameters::isotropic(0.0, 0.0, -1.0).unwrap();
        let budget = OptBudget {
            max_evaluations: 0,
            ..OptBudget::default()
        };
        let h = hybrid_train(x.view(), y.view(), 3, Selector::Random, 5, &hp, &budget).unwrap();
        let plain = fitc_train(x.view(), y.view(), 3, Selector::Random, 5, &hp).unwrap();
        assert_eq!(h.model.inducing(), plain.inducing());
        assert_eq!(h.model.beta(), plain.beta());
        assert_eq!(h.optimization.hyperparameters, hp);
    }
}
