//! C ABI over `gpr-approx`.
//!
//! Every function returns a [`GprStatus`]. On failure the message is kept in
//! thread-local storage and can be copied out with [`gpr_last_error_message`].
//! Matrices are dense row-major `f64` buffers. Handles are opaque and must be
//! released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gpr_approx::data::{generate_synthetic, Dataset, SyntheticSpec};
use gpr_approx::optimizer::initial_hyperparameters;
use gpr_approx::{
    exact_logml, exact_train, fitc_train, local_train, maximize_logml, sod_train, ExactModel, FitcModel, GprError,
    Hyperparameters, KernelFlavor, LocalModel, OptBudget, PredictiveDistribution, Selector, SodModel,
};
use ndarray::{ArrayView1, ArrayView2};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GprStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NotPositiveDefinite = 4,
    NonFinite = 5,
    Degenerate = 6,
    Io = 7,
    Panic = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GprMethod {
    Exact = 0,
    Sod = 1,
    Fitc = 2,
    Local = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GprKernel {
    Isotropic = 0,
    Ard = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GprSelector {
    Random = 0,
    Fpc = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GprSynthetic {
    Synth2 = 0,
    Synth8 = 1,
}

enum Inner {
    Exact(ExactModel),
    Sod(SodModel),
    Fitc(FitcModel),
    Local(LocalModel),
}

/// A trained model.
pub struct GprModel {
    inner: Inner,
    dim: usize,
}

/// A train/test dataset.
pub struct GprDataset {
    inner: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &GprError) -> GprStatus {
    match err {
        GprError::DimensionMismatch { .. } => GprStatus::DimensionMismatch,
        GprError::HyperparameterIndex { .. }
        | GprError::InvalidHyperparameters(_)
        | GprError::SubsetSize { .. }
        | GprError::Config(_) => GprStatus::InvalidArgument,
        GprError::NotPositiveDefinite { .. } => GprStatus::NotPositiveDefinite,
        GprError::LeafFailure { source, .. } => status_of(source),
        GprError::NonFinite(_) => GprStatus::NonFinite,
        GprError::Degenerate(_) => GprStatus::Degenerate,
        GprError::Io(_) | GprError::Parse { .. } | GprError::Csv(_) => GprStatus::Io,
        GprError::Json(_) => GprStatus::Internal,
    }
}

struct Failure(GprStatus, String);

impl From<GprError> for Failure {
    fn from(e: GprError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(GprStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(GprStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any error and converts panics into `GprStatus::Panic`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GprStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GprStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            GprStatus::Panic
        }
    }
}

unsafe fn matrix<'a>(data: *const f64, rows: usize, cols: usize, what: &str) -> Result<ArrayView2<'a, f64>, Failure> {
    if data.is_null() {
        return Err(null(what));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| invalid(format!("{what}: size overflow")))?;
    let slice = std::slice::from_raw_parts(data, len);
    ArrayView2::from_shape((rows, cols), slice).map_err(|e| invalid(format!("{what}: {e}")))
}

unsafe fn vector<'a>(data: *const f64, len: usize, what: &str) -> Result<ArrayView1<'a, f64>, Failure> {
    if data.is_null() {
        return Err(null(what));
    }
    Ok(ArrayView1::from(std::slice::from_raw_parts(data, len)))
}

unsafe fn hyperparameters(kernel: GprKernel, params: *const f64, n_params: usize) -> Result<Hyperparameters, Failure> {
    let p = vector(params, n_params, "params")?;
    let flavor = match kernel {
        GprKernel::Isotropic => KernelFlavor::Isotropic,
        GprKernel::Ard => KernelFlavor::Ard,
    };
    Ok(Hyperparameters::from_params(flavor, p.as_slice().unwrap_or(&[]))?)
}

unsafe fn write_out(src: &[f64], dst: *mut f64) {
    if !dst.is_null() {
        ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    }
}

/// Number of log-hyperparameters for `kernel` on `dim` inputs.
#[no_mangle]
pub extern "C" fn gpr_num_params(kernel: GprKernel, dim: usize) -> usize {
    match kernel {
        GprKernel::Isotropic => 3,
        GprKernel::Ard => dim + 2,
    }
}

/// Copies the message of the last failure on this thread into `buf`,
/// truncated and NUL-terminated. Returns the full message length, or 0 when
/// the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gpr_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            0
        }
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Trains a model on `n × dim` inputs `x` and targets `y`.
///
/// `m` is the subset size (SoD), inducing count (FITC) or leaf capacity
/// (Local) and is ignored for `GPR_METHOD_EXACT`; `selector` applies to SoD
/// and FITC.
///
/// # Safety
/// `x` must hold `n * dim` values, `y` `n` values and `params`
/// `n_params` values. `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gpr_model_train(
    method: GprMethod,
    x: *const f64,
    n: usize,
    dim: usize,
    y: *const f64,
    m: usize,
    selector: GprSelector,
    seed: u64,
    kernel: GprKernel,
    params: *const f64,
    n_params: usize,
    out: *mut *mut GprModel,
) -> GprStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let x = matrix(x, n, dim, "x")?;
        let y = vector(y, n, "y")?;
        let hp = hyperparameters(kernel, params, n_params)?;
        let sel = match selector {
            GprSelector::Random => Selector::Random,
            GprSelector::Fpc => Selector::Fpc,
        };
        let inner = match method {
            GprMethod::Exact => Inner::Exact(exact_train(x, y, &hp)?),
            GprMethod::Sod => Inner::Sod(sod_train(x, y, m, sel, seed, &hp)?),
            GprMethod::Fitc => Inner::Fitc(fitc_train(x, y, m, sel, seed, &hp)?),
            GprMethod::Local => Inner::Local(local_train(x, y, m, seed, &hp)?),
        };
        *out = Box::into_raw(Box::new(GprModel { inner, dim }));
        Ok(())
    })
}

/// Predicts at `t × dim` test inputs. Any of the three output buffers of
/// length `t` may be null.
///
/// # Safety
/// `model` must come from [`gpr_model_train`]; `xstar` must hold `t * dim`
/// values and each non-null output `t` values.
#[no_mangle]
pub unsafe extern "C" fn gpr_model_predict(
    model: *const GprModel,
    xstar: *const f64,
    t: usize,
    dim: usize,
    mean: *mut f64,
    latent_variance: *mut f64,
    observation_variance: *mut f64,
) -> GprStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if dim != model.dim {
            return Err(Failure(
                GprStatus::DimensionMismatch,
                format!("model has input dimension {}, got {dim}", model.dim),
            ));
        }
        let xs = matrix(xstar, t, dim, "xstar")?;
        let p: PredictiveDistribution = match &model.inner {
            Inner::Exact(e) => e.predict(xs)?,
            Inner::Sod(s) => s.predict(xs)?,
            Inner::Fitc(f) => f.predict(xs)?,
            Inner::Local(l) => l.predict(xs)?,
        };
        write_out(p.mean.as_slice().unwrap(), mean);
        write_out(p.latent_variance.as_slice().unwrap(), latent_variance);
        write_out(p.observation_variance.as_slice().unwrap(), observation_variance);
        Ok(())
    })
}

/// Input dimension the model was trained on, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from [`gpr_model_train`].
#[no_mangle]
pub unsafe extern "C" fn gpr_model_dim(model: *const GprModel) -> usize {
    model.as_ref().map_or(0, |m| m.dim)
}

/// # Safety
/// `model` must be null or come from [`gpr_model_train`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn gpr_model_free(model: *mut GprModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Exact log marginal likelihood and its gradient (length `n_params`, may be
/// null) with respect to the log-hyperparameters.
///
/// # Safety
/// Buffer sizes as in [`gpr_model_train`]; `value` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gpr_exact_logml(
    x: *const f64,
    n: usize,
    dim: usize,
    y: *const f64,
    kernel: GprKernel,
    params: *const f64,
    n_params: usize,
    value: *mut f64,
    grad: *mut f64,
) -> GprStatus {
    guard(|| {
        if value.is_null() {
            return Err(null("value"));
        }
        let x = matrix(x, n, dim, "x")?;
        let y = vector(y, n, "y")?;
        let hp = hyperparameters(kernel, params, n_params)?;
        let l = exact_logml(x, y, &hp)?;
        *value = l.value;
        write_out(&l.grad, grad);
        Ok(())
    })
}

/// Maximizes the exact log marginal likelihood from the standard starting
/// point using at most `max_evaluations` objective calls. Writes the learned
/// log-hyperparameters (length [`gpr_num_params`]) to `params_out`.
///
/// # Safety
/// `x` must hold `n * dim` values, `y` `n` values and `params_out`
/// `gpr_num_params(kernel, dim)` writable values.
#[no_mangle]
pub unsafe extern "C" fn gpr_learn_hyperparameters(
    x: *const f64,
    n: usize,
    dim: usize,
    y: *const f64,
    kernel: GprKernel,
    max_evaluations: usize,
    params_out: *mut f64,
) -> GprStatus {
    guard(|| {
        if params_out.is_null() {
            return Err(null("params_out"));
        }
        let x = matrix(x, n, dim, "x")?;
        let y = vector(y, n, "y")?;
        let flavor = match kernel {
            GprKernel::Isotropic => KernelFlavor::Isotropic,
            GprKernel::Ard => KernelFlavor::Ard,
        };
        let init = initial_hyperparameters(y, dim, flavor)?;
        let budget = OptBudget {
            max_evaluations,
            ..OptBudget::default()
        };
        let outcome = maximize_logml(|hp| exact_logml(x, y, hp), &init, &budget)?;
        write_out(&outcome.hyperparameters.to_vec(), params_out);
        Ok(())
    })
}

/// Draws one of the built-in synthetic benchmarks.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gpr_dataset_synthetic(
    kind: GprSynthetic,
    n_train: usize,
    n_test: usize,
    seed: u64,
    out: *mut *mut GprDataset,
) -> GprStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let spec = match kind {
            GprSynthetic::Synth2 => SyntheticSpec::synth2(n_train, n_test, seed),
            GprSynthetic::Synth8 => SyntheticSpec::synth8(n_train, n_test, seed),
        };
        let inner = generate_synthetic(&spec)?;
        *out = Box::into_raw(Box::new(GprDataset { inner }));
        Ok(())
    })
}

/// Writes the training size, test size and input dimension. Any output may be null.
///
/// # Safety
/// `dataset` must come from [`gpr_dataset_synthetic`].
#[no_mangle]
pub unsafe extern "C" fn gpr_dataset_shape(
    dataset: *const GprDataset,
    n_train: *mut usize,
    n_test: *mut usize,
    dim: *mut usize,
) -> GprStatus {
    guard(|| {
        let ds = &dataset.as_ref().ok_or_else(|| null("dataset"))?.inner;
        for (dst, v) in [
            (n_train, ds.train_x.nrows()),
            (n_test, ds.test_x.nrows()),
            (dim, ds.train_x.ncols()),
        ] {
            if !dst.is_null() {
                *dst = v;
            }
        }
        Ok(())
    })
}

/// Copies the training (`test == false`) or test split into row-major `x`
/// and `y`. Either output may be null.
///
/// # Safety
/// `x` must hold `rows * dim` and `y` `rows` writable values for the chosen split.
#[no_mangle]
pub unsafe extern "C" fn gpr_dataset_copy(
    dataset: *const GprDataset,
    test: bool,
    x: *mut f64,
    y: *mut f64,
) -> GprStatus {
    guard(|| {
        let ds = &dataset.as_ref().ok_or_else(|| null("dataset"))?.inner;
        let (xs, ys) = if test {
            (&ds.test_x, &ds.test_y)
        } else {
            (&ds.train_x, &ds.train_y)
        };
        let xs = xs.as_standard_layout();
        write_out(xs.as_slice().unwrap(), x);
        write_out(&ys.to_vec(), y);
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or come from [`gpr_dataset_synthetic`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn gpr_dataset_free(dataset: *mut GprDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}
