//! Conjugate gradients for `(K + σ²I) α = y` behind a matrix-vector product
//! interface, with per-iteration residual and test-error tracing.

use std::io::Write;
use std::time::{Duration, Instant};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GprError, Result};
use crate::exact::PREDICT_CHUNK;
use crate::kernel::{kernel_matrix, kernel_matrix_sym, Hyperparameters};
use crate::metrics::{smse, TrivialPredictor};

/// `v ↦ (K + σ²I) v` for a fixed training set and θ.
pub trait MvmOperator {
    fn dim(&self) -> usize;

    fn apply(&self, v: ArrayView1<f64>) -> Array1<f64>;

    /// Kernel evaluations charged per `apply`.
    fn kernel_evaluations_per_apply(&self) -> u64 {
        (self.dim() as u64).pow(2)
    }
}

/// The operator held as an explicit dense matrix.
#[derive(Debug, Clone)]
pub struct DenseMvm {
    matrix: Array2<f64>,
}

impl DenseMvm {
    pub fn new(x: ArrayView2<f64>, hp: &Hyperparameters) -> Result<Self> {
        let mut matrix = kernel_matrix_sym(x, hp)?;
        let sn2 = hp.noise_variance();
        matrix.diag_mut().mapv_inplace(|d| d + sn2);
        Ok(DenseMvm { matrix })
    }

    pub fn from_matrix(matrix: Array2<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(GprError::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        Ok(DenseMvm { matrix })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }
}

impl MvmOperator for DenseMvm {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, v: ArrayView1<f64>) -> Array1<f64> {
        self.matrix.dot(&v)
    }
}

/// Checks linearity and symmetry of `op` on seeded random vectors, to
/// relative tolerance `tol`.
pub fn check_operator(op: &dyn MvmOperator, seed: u64, tol: f64) -> Result<()> {
    let n = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || Array1::from_shape_fn(n, |_| StandardNormal.sample(&mut rng));
    let (u, v) = (draw(), draw());
    let (a, b) = (0.7, -1.3);
    let combined = op.apply((&u * a + &v * b).view());
    let ou = op.apply(u.view());
    let ov = op.apply(v.view());
    let separate = &ou * a + &ov * b;
    let diff = (&combined - &separate).mapv(|d| d * d).sum().sqrt();
    let scale = separate.mapv(|d| d * d).sum().sqrt().max(f64::MIN_POSITIVE);
    if !(diff <= tol * scale) {
        return Err(GprError::Degenerate(format!(
            "operator is not linear: relative deviation {:e}",
            diff / scale
        )));
    }
    let (uv, vu) = (u.dot(&ov), v.dot(&ou));
    if !((uv - vu).abs() <= tol * uv.abs().max(vu.abs()).max(f64::MIN_POSITIVE)) {
        return Err(GprError::Degenerate(format!(
            "operator is not symmetric: {uv:e} vs {vu:e}"
        )));
    }
    Ok(())
}

/// When CG stops. At least one limit must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Termination {
    pub max_iterations: Option<usize>,
    /// Relative residual `‖(K+σ²I)α − y‖ / ‖y‖` below which the solve stops.
    pub rel_tol: Option<f64>,
    pub time_budget_seconds: Option<f64>,
}

impl Termination {
    pub fn iterations(k: usize) -> Self {
        Termination {
            max_iterations: Some(k),
            ..Termination::default()
        }
    }

    /// Tolerance with a safety cap of `max_iterations`.
    pub fn tolerance(tol: f64, max_iterations: usize) -> Self {
        Termination {
            max_iterations: Some(max_iterations),
            rel_tol: Some(tol),
            time_budget_seconds: None,
        }
    }

    pub fn time(seconds: f64) -> Self {
        Termination {
            time_budget_seconds: Some(seconds),
            ..Termination::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iterations.is_none() && self.rel_tol.is_none() && self.time_budget_seconds.is_none() {
            return Err(GprError::Config("CG termination needs at least one limit".into()));
        }
        if self.rel_tol.is_some_and(|t| !(t > 0.0)) {
            return Err(GprError::Config("CG tolerance must be positive".into()));
        }
        if self.time_budget_seconds.is_some_and(|t| !(t >= 0.0)) {
            return Err(GprError::Config("CG time budget must be non-negative".into()));
        }
        Ok(())
    }
}

/// Iterations at which the test-error callback runs: every iteration up to
/// `dense_until`, then every `every`-th.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSchedule {
    pub dense_until: usize,
    pub every: usize,
}

impl Default for TraceSchedule {
    fn default() -> Self {
        TraceSchedule {
            dense_until: 32,
            every: 4,
        }
    }
}

impl TraceSchedule {
    pub fn includes(&self, iteration: usize) -> bool {
        iteration <= self.dense_until || (self.every > 0 && iteration % self.every == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub residual: f64,
    /// Solve time so far, excluding test-error evaluation.
    pub seconds: f64,
    pub smse: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub rows: Vec<TraceRow>,
}

impl SolveTrace {
    pub const CSV_HEADER: &'static str = "iteration,residual,seconds,smse";

    /// Writes `iteration,residual,seconds,smse`; `smse` is empty when not evaluated.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            match r.smse {
                Some(e) => writeln!(w, "{},{:e},{:e},{:e}", r.iteration, r.residual, r.seconds, e)?,
                None => writeln!(w, "{},{:e},{:e},", r.iteration, r.residual, r.seconds)?,
            }
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CgStatus {
    Converged,
    MaxIterations,
    TimeBudget,
    /// A non-finite or non-positive curvature appeared; `alpha` is the last good iterate.
    Breakdown(String),
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub alpha: Array1<f64>,
    pub trace: SolveTrace,
    pub status: CgStatus,
    pub iterations: usize,
}

impl CgOutcome {
    pub fn into_result(self) -> Result<CgOutcome> {
        match &self.status {
            CgStatus::Breakdown(msg) => Err(GprError::NonFinite(format!(
                "CG breakdown after {} iterations: {msg}",
                self.iterations
            ))),
            _ => Ok(self),
        }
    }
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Plain CG from `α₀ = 0`. `evaluate` is called on the schedule with the
/// current iterate and its result stored as the trace's `smse`; its running
/// time is excluded from the recorded seconds and the time budget.
///
/// Callback scoring an intermediate `α`, typically by test SMSE.
pub type AlphaEvaluator<'a> = &'a mut dyn FnMut(ArrayView1<f64>) -> Result<f64>;

/// Convergence is tested on the recursively updated residual and confirmed
/// against the true residual; if they disagree the residual is recomputed
/// and iteration continues.
pub fn cg_solve(
    op: &dyn MvmOperator,
    y: ArrayView1<f64>,
    termination: &Termination,
    schedule: TraceSchedule,
    mut evaluate: Option<AlphaEvaluator>,
) -> Result<CgOutcome> {
    termination.validate()?;
    let n = op.dim();
    if y.len() != n {
        return Err(GprError::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GprError::NonFinite("CG right-hand side".into()));
    }
    let y = y.to_owned();
    let y_norm = norm(&y);
    let mut alpha = Array1::zeros(n);
    let mut trace = SolveTrace::default();
    let mut elapsed = Duration::ZERO;
    let smse_at = |it: usize, alpha: &Array1<f64>, ev: &mut Option<AlphaEvaluator>| match ev {
        Some(f) if schedule.includes(it) => f(alpha.view()).map(Some),
        _ => Ok(None),
    };
    trace.rows.push(TraceRow {
        iteration: 0,
        residual: if y_norm > 0.0 { 1.0 } else { 0.0 },
        seconds: 0.0,
        smse: smse_at(0, &alpha, &mut evaluate)?,
    });
    if y_norm == 0.0 {
        return Ok(CgOutcome {
            alpha,
            trace,
            status: CgStatus::Converged,
            iterations: 0,
        });
    }

    let mut r = y.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let mut iteration = 0;
    let status = loop {
        if termination.max_iterations.is_some_and(|k| iteration >= k) {
            break CgStatus::MaxIterations;
        }
        if termination
            .time_budget_seconds
            .is_some_and(|t| elapsed.as_secs_f64() >= t)
        {
            break CgStatus::TimeBudget;
        }
        let started = Instant::now();
        let q = op.apply(p.view());
        let pq = p.dot(&q);
        if !pq.is_finite() || pq <= 0.0 {
            break CgStatus::Breakdown(format!("curvature pᵀAp = {pq:e} at iteration {}", iteration + 1));
        }
        let gamma = rr / pq;
        let next_alpha = &alpha + &(&p * gamma);
        if next_alpha.iter().any(|v| !v.is_finite()) {
            break CgStatus::Breakdown(format!("non-finite iterate at iteration {}", iteration + 1));
        }
        alpha = next_alpha;
        r.scaled_add(-gamma, &q);
        let mut rr_new = r.dot(&r);
        iteration += 1;
        let mut residual = rr_new.sqrt() / y_norm;
        let mut converged = termination.rel_tol.is_some_and(|tol| residual < tol);
        if converged {
            r = &y - &op.apply(alpha.view());
            rr_new = r.dot(&r);
            residual = rr_new.sqrt() / y_norm;
            converged = termination.rel_tol.is_some_and(|tol| residual < tol);
            if !converged {
                // restart from the true residual
                p = r.clone();
                rr = rr_new;
            }
        } else {
            p = &r + &(&p * (rr_new / rr));
            rr = rr_new;
        }
        elapsed += started.elapsed();
        if !residual.is_finite() {
            break CgStatus::Breakdown(format!("non-finite residual at iteration {iteration}"));
        }
        trace.rows.push(TraceRow {
            iteration,
            residual,
            seconds: elapsed.as_secs_f64(),
            smse: smse_at(iteration, &alpha, &mut evaluate)?,
        });
        if converged {
            break CgStatus::Converged;
        }
    };
    Ok(CgOutcome {
        alpha,
        trace,
        status,
        iterations: iteration,
    })
}

/// Predictive means `K(X*, X) α`.
pub fn mean_from_alpha(
    x: ArrayView2<f64>,
    hp: &Hyperparameters,
    alpha: ArrayView1<f64>,
    xstar: ArrayView2<f64>,
) -> Result<Array1<f64>> {
    if alpha.len() != x.nrows() {
        return Err(GprError::DimensionMismatch {
            expected: x.nrows(),
            got: alpha.len(),
        });
    }
    hp.check_dim(x.ncols())?;
    let t = xstar.nrows();
    let mut out = Array1::zeros(t);
    for start in (0..t).step_by(PREDICT_CHUNK) {
        let end = (start + PREDICT_CHUNK).min(t);
        let k = kernel_matrix(xstar.slice(s![start..end, ..]), x, hp)?;
        out.slice_mut(s![start..end]).assign(&k.dot(&alpha));
    }
    Ok(out)
}

/// Test-set SMSE of the mean predictor built from an iterate.
pub struct SmseEvaluator<'a> {
    pub x: ArrayView2<'a, f64>,
    pub hp: &'a Hyperparameters,
    pub xstar: ArrayView2<'a, f64>,
    pub ystar: ArrayView1<'a, f64>,
    pub trivial: TrivialPredictor,
}

impl SmseEvaluator<'_> {
    pub fn evaluate(&self, alpha: ArrayView1<f64>) -> Result<f64> {
        let mean = mean_from_alpha(self.x, self.hp, alpha, self.xstar)?;
        smse(mean.view(), self.ystar, &self.trivial)
    }
}
