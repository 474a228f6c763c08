//! Hyperparameter learning by nonlinear conjugate gradients.
//!
//! A port of Rasmussen's `minimize.m`: Polak-Ribière directions with a
//! cubic/quadratic line search enforcing the strong Wolfe conditions. The
//! budget counts objective evaluations, as `minimize.m` does for a negative
//! `length` argument, so no call is ever made past `max_evaluations`.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{GprError, Result};
use crate::exact::LogMl;
use crate::kernel::{Hyperparameters, KernelFlavor};

const INT: f64 = 0.1;
const EXT: f64 = 3.0;
const MAX: usize = 20;
const RATIO: f64 = 100.0;
const SIG: f64 = 0.5;
const RHO: f64 = 0.01;

/// Objective calls beyond `max_evaluations` the line search may make. The
/// evaluation counter is checked before every call, so there is no overdraft.
pub const EVALUATION_OVERDRAFT: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptBudget {
    pub max_evaluations: usize,
    /// Stop once the gradient norm of an accepted iterate falls below this.
    pub grad_tol: f64,
    /// Stop once an accepted step improves L by less than `rel_tol · max(|L|, 1)`.
    pub rel_tol: f64,
}

impl Default for OptBudget {
    fn default() -> Self {
        OptBudget {
            max_evaluations: 100,
            grad_tol: 1e-8,
            rel_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub evaluation: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    GradientTolerance,
    RelativeImprovement,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptOutcome {
    pub hyperparameters: Hyperparameters,
    /// L at the returned hyperparameters; `None` when the budget was zero.
    pub value: Option<f64>,
    pub evaluations: usize,
    /// Accepted iterates, starting with θ₀.
    pub trace: Vec<TracePoint>,
    pub stop: StopReason,
}

/// Standard starting point on standardized data: unit lengthscales,
/// `σ_f = std(y)`, `σ = std(y)/10`.
pub fn initial_hyperparameters(y: ArrayView1<f64>, dim: usize, flavor: KernelFlavor) -> Result<Hyperparameters> {
    let n = y.len();
    let sd = if n > 1 {
        let mean = y.sum() / n as f64;
        (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let sd = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
    let log_sf = sd.ln();
    let log_sn = (sd / 10.0).ln();
    match flavor {
        KernelFlavor::Isotropic => Hyperparameters::isotropic(0.0, log_sf, log_sn),
        KernelFlavor::Ard => Hyperparameters::ard(vec![0.0; dim], log_sf, log_sn),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], t: f64, s: &[f64]) -> Vec<f64> {
    x.iter().zip(s).map(|(a, b)| a + t * b).collect()
}

/// Minimization view of the objective: returns `(−L, −∇L)` or `None` when the
/// trial point could not be evaluated.
struct Negated<'a, F> {
    objective: F,
    template: &'a Hyperparameters,
    evaluations: usize,
}

impl<F> Negated<'_, F>
where
    F: FnMut(&Hyperparameters) -> Result<LogMl>,
{
    fn eval(&mut self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evaluations += 1;
        let hp = self.template.with_params(theta).ok()?;
        let l = (self.objective)(&hp).ok()?;
        if !l.value.is_finite() || l.grad.iter().any(|g| !g.is_finite()) || l.grad.len() != theta.len() {
            return None;
        }
        Some((-l.value, l.grad.iter().map(|g| -g).collect()))
    }
}

/// Maximizes `objective` starting from `init`. The accepted L values are
/// non-decreasing and at most `budget.max_evaluations` calls are made.
pub fn maximize_logml<F>(objective: F, init: &Hyperparameters, budget: &OptBudget) -> Result<OptOutcome>
where
    F: FnMut(&Hyperparameters) -> Result<LogMl>,
{
    let limit = budget.max_evaluations;
    if limit == 0 {
        return Ok(OptOutcome {
            hyperparameters: init.clone(),
            value: None,
            evaluations: 0,
            trace: Vec::new(),
            stop: StopReason::Budget,
        });
    }
    let mut f = Negated {
        objective,
        template: init,
        evaluations: 0,
    };
    let mut x = init.to_vec();
    let (mut f0, mut df0) = f
        .eval(&x)
        .ok_or_else(|| GprError::NonFinite("objective failed at the initial hyperparameters".into()))?;
    let mut trace = vec![TracePoint {
        evaluation: 1,
        value: -f0,
    }];
    let mut s: Vec<f64> = df0.iter().map(|g| -g).collect();
    let mut d0 = -dot(&s, &s);
    let mut x3 = 1.0 / (1.0 - d0);
    let mut ls_failed = false;
    let mut stop = StopReason::Budget;

    if dot(&df0, &df0).sqrt() <= budget.grad_tol {
        stop = StopReason::GradientTolerance;
    }

    while stop == StopReason::Budget && f.evaluations < limit {
        let (mut best_x, mut best_f, mut best_df) = (x.clone(), f0, df0.clone());
        let mut m = MAX.min(limit - f.evaluations);

        let (mut x2, mut f2, mut d2);
        let (mut f3, mut df3, mut d3);
        let (mut x4, mut f4, mut d4) = (0.0, 0.0, 0.0);
        loop {
            x2 = 0.0;
            f2 = f0;
            d2 = d0;
            f3 = f0;
            df3 = df0.clone();
            let mut success = false;
            while !success && m > 0 {
                m -= 1;
                match f.eval(&axpy(&x, x3, &s)) {
                    Some((fv, dv)) => {
                        f3 = fv;
                        df3 = dv;
                        success = true;
                    }
                    None => x3 = (x2 + x3) / 2.0,
                }
            }
            if f3 < best_f {
                best_x = axpy(&x, x3, &s);
                best_f = f3;
                best_df = df3.clone();
            }
            d3 = dot(&df3, &s);
            if d3 > SIG * d0 || f3 > f0 + x3 * RHO * d0 || m == 0 {
                break;
            }
            // cubic extrapolation
            let (x1, f1, d1) = (x2, f2, d2);
            x2 = x3;
            f2 = f3;
            d2 = d3;
            let a = 6.0 * (f1 - f2) + 3.0 * (d2 + d1) * (x2 - x1);
            let b = 3.0 * (f2 - f1) - (2.0 * d1 + d2) * (x2 - x1);
            let disc = b * b - a * d1 * (x2 - x1);
            x3 = x1 - d1 * (x2 - x1).powi(2) / (b + disc.sqrt());
            if !x3.is_finite() || disc < 0.0 || x3 < 0.0 || x3 > x2 * EXT {
                x3 = x2 * EXT;
            } else if x3 < x2 + INT * (x2 - x1) {
                x3 = x2 + INT * (x2 - x1);
            }
        }

        while (d3.abs() > -SIG * d0 || f3 > f0 + x3 * RHO * d0) && m > 0 {
            if d3 > 0.0 || f3 > f0 + x3 * RHO * d0 {
                x4 = x3;
                f4 = f3;
                d4 = d3;
            } else {
                x2 = x3;
                f2 = f3;
                d2 = d3;
            }
            if f4 > f0 {
                // quadratic interpolation
                x3 = x2 - (0.5 * d2 * (x4 - x2).powi(2)) / (f4 - f2 - d2 * (x4 - x2));
            } else {
                // cubic interpolation
                let a = 6.0 * (f2 - f4) / (x4 - x2) + 3.0 * (d4 + d2);
                let b = 3.0 * (f4 - f2) - (2.0 * d2 + d4) * (x4 - x2);
                x3 = x2 + ((b * b - a * d2 * (x4 - x2).powi(2)).sqrt() - b) / a;
            }
            if !x3.is_finite() {
                x3 = (x2 + x4) / 2.0;
            }
            x3 = x3.min(x4 - INT * (x4 - x2)).max(x2 + INT * (x4 - x2));
            m -= 1;
            match f.eval(&axpy(&x, x3, &s)) {
                Some((fv, dv)) => {
                    f3 = fv;
                    df3 = dv;
                    if f3 < best_f {
                        best_x = axpy(&x, x3, &s);
                        best_f = f3;
                        best_df = df3.clone();
                    }
                    d3 = dot(&df3, &s);
                }
                None => {
                    // treat an unevaluable point as too far along the line
                    f3 = f64::INFINITY;
                    d3 = f64::INFINITY;
                }
            }
        }

        if d3.abs() < -SIG * d0 && f3 < f0 + x3 * RHO * d0 {
            let previous = f0;
            x = axpy(&x, x3, &s);
            f0 = f3;
            trace.push(TracePoint {
                evaluation: f.evaluations,
                value: -f0,
            });
            let beta = (dot(&df3, &df3) - dot(&df0, &df3)) / dot(&df0, &df0);
            s = s.iter().zip(&df3).map(|(si, gi)| beta * si - gi).collect();
            df0 = df3;
            let d_prev = d0;
            d0 = dot(&df0, &s);
            if d0 > 0.0 {
                s = df0.iter().map(|g| -g).collect();
                d0 = -dot(&s, &s);
            }
            x3 *= RATIO.min(d_prev / (d0 - f64::MIN_POSITIVE));
            ls_failed = false;
            if dot(&df0, &df0).sqrt() <= budget.grad_tol {
                stop = StopReason::GradientTolerance;
            } else if (previous - f0).abs() <= budget.rel_tol * f0.abs().max(1.0) {
                stop = StopReason::RelativeImprovement;
            }
        } else {
            // restore the best point seen and restart along steepest descent
            if best_f < f0 {
                trace.push(TracePoint {
                    evaluation: f.evaluations,
                    value: -best_f,
                });
            }
            x = best_x;
            f0 = best_f;
            df0 = best_df;
            if ls_failed || f.evaluations >= limit {
                if ls_failed {
                    stop = StopReason::LineSearchFailed;
                }
                break;
            }
            s = df0.iter().map(|g| -g).collect();
            d0 = -dot(&s, &s);
            x3 = 1.0 / (1.0 - d0);
            ls_failed = true;
        }
    }

    Ok(OptOutcome {
        hyperparameters: init.with_params(&x)?,
        value: Some(-f0),
        evaluations: f.evaluations,
        trace,
        stop,
    })
}
