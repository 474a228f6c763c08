mod common;

use gpr_approx::data::{generate_synthetic, SyntheticSpec};
use gpr_approx::exact::LogMl;
use gpr_approx::kernel::kernel_matrix_sym;
use gpr_approx::linalg::{Cholesky, JitterPolicy};
use gpr_approx::optimizer::{initial_hyperparameters, StopReason, EVALUATION_OVERDRAFT};
use gpr_approx::{exact_logml, maximize_logml, GprError, Hyperparameters, KernelFlavor, OptBudget};
use ndarray::{Array1, ArrayView1, ArrayView2};
use proptest::prelude::*;

fn budget(n: usize) -> OptBudget {
    OptBudget {
        max_evaluations: n,
        ..OptBudget::default()
    }
}

/// Log marginal likelihood value only, for the grid search.
fn logml_value(x: ArrayView2<f64>, y: ArrayView1<f64>, p: &[f64]) -> f64 {
    let hp = Hyperparameters::from_params(KernelFlavor::Isotropic, p).unwrap();
    let mut k = kernel_matrix_sym(x, &hp).unwrap();
    k.diag_mut().mapv_inplace(|d| d + hp.noise_variance());
    let Ok(c) = Cholesky::factor(k, &JitterPolicy::default()) else {
        return f64::NEG_INFINITY;
    };
    let alpha = c.solve_vec(y);
    -0.5 * y.dot(&alpha) - 0.5 * c.log_det() - 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Exhaustive search on a 3-parameter box, refined twice around the best cell.
fn grid_optimum(x: ArrayView2<f64>, y: ArrayView1<f64>, centre: [f64; 3]) -> [f64; 3] {
    let mut best = centre;
    let mut step = 0.4;
    for _ in 0..3 {
        let c = best;
        let mut best_v = f64::NEG_INFINITY;
        for i in -4..=4 {
            for j in -4..=4 {
                for k in -4..=4 {
                    let p = [c[0] + i as f64 * step, c[1] + j as f64 * step, c[2] + k as f64 * step];
                    let v = logml_value(x, y, &p);
                    if v > best_v {
                        best_v = v;
                        best = p;
                    }
                }
            }
        }
        step /= 4.0;
    }
    best
}

#[test]
fn zero_budget_returns_start() {
    let init = Hyperparameters::isotropic(0.3, -0.2, -1.0).unwrap();
    let mut calls = 0;
    let out = maximize_logml(
        |_| {
            calls += 1;
            Err(GprError::Degenerate("unused".into()))
        },
        &init,
        &budget(0),
    )
    .unwrap();
    assert_eq!(calls, 0);
    assert_eq!(out.hyperparameters, init);
    assert_eq!(out.stop, StopReason::Budget);
}

#[test]
fn concave_quadratic_reaches_its_maximum() {
    let c = [0.7, -1.2, 0.4];
    let init = Hyperparameters::isotropic(0.0, 0.0, 0.0).unwrap();
    let out = maximize_logml(
        |hp| {
            let t = hp.to_vec();
            Ok(LogMl {
                value: -(0..3).map(|i| (t[i] - c[i]).powi(2)).sum::<f64>(),
                grad: (0..3).map(|i| -2.0 * (t[i] - c[i])).collect(),
            })
        },
        &init,
        &budget(50),
    )
    .unwrap();
    assert!(out.evaluations <= 50);
    for (a, b) in out.hyperparameters.to_vec().iter().zip(c) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn recovers_grid_search_optimum() {
    let spec = SyntheticSpec {
        input_dim: 2,
        n_train: 200,
        n_test: 1,
        lengthscale: 1.0,
        signal_std: 1.0,
        noise_variance: 0.01,
        seed: 17,
    };
    let ds = generate_synthetic(&spec).unwrap();
    let (x, y) = (ds.train_x.view(), ds.train_y.view());
    let gen = spec.generative_hyperparameters().unwrap().to_vec();
    let start = Hyperparameters::isotropic(gen[0] + 0.5, gen[1] - 0.5, gen[2] + 0.5).unwrap();
    let out = maximize_logml(|hp| exact_logml(x, y, hp), &start, &budget(100)).unwrap();
    let grid = grid_optimum(x, y, [gen[0], gen[1], gen[2]]);
    let got = out.hyperparameters.to_vec();
    for i in 0..3 {
        assert!((got[i] - grid[i]).abs() < 0.3, "{got:?} vs grid {grid:?}");
    }
    assert!(out.value.unwrap() >= logml_value(x, y, &grid) - 1e-3);
}

#[test]
fn failures_at_trial_points_are_survived() {
    // the objective refuses to leave the half-space t₀ < 1
    let init = Hyperparameters::isotropic(0.0, 0.0, 0.0).unwrap();
    let out = maximize_logml(
        |hp| {
            let t = hp.to_vec();
            if t[0] >= 1.0 {
                return Err(GprError::Degenerate("outside".into()));
            }
            Ok(LogMl {
                value: 3.0 * t[0] - t[1] * t[1] - t[2] * t[2],
                grad: vec![3.0, -2.0 * t[1], -2.0 * t[2]],
            })
        },
        &init,
        &budget(60),
    )
    .unwrap();
    let t = out.hyperparameters.to_vec();
    assert!(t[0] < 1.0 && t[0] > 0.5, "{t:?}");
    assert!(maximize_logml(|_| Err(GprError::Degenerate("always".into())), &init, &budget(10)).is_err());
}

#[test]
fn initial_point_convention() {
    let y = Array1::from(vec![1.0, 3.0, 5.0, 7.0]);
    let sd = (20.0f64 / 3.0).sqrt();
    let hp = initial_hyperparameters(y.view(), 3, KernelFlavor::Ard).unwrap();
    assert_eq!(hp.log_lengthscales(), &[0.0, 0.0, 0.0]);
    assert!((hp.log_signal_std() - sd.ln()).abs() < 1e-15);
    assert!((hp.log_noise_std() - (sd / 10.0).ln()).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn accepted_values_never_decrease_and_budget_holds(
        c in proptest::collection::vec(-2.0f64..2.0, 3),
        scale in proptest::collection::vec(0.1f64..10.0, 3),
        max in 1usize..60,
    ) {
        let init = Hyperparameters::isotropic(0.0, 0.0, 0.0).unwrap();
        let mut calls = 0;
        let out = maximize_logml(
            |hp| {
                calls += 1;
                let t = hp.to_vec();
                // a non-quadratic concave-ish surface
                let value = -(0..3).map(|i| scale[i] * (t[i] - c[i]).powi(2) + 0.1 * (t[i] - c[i]).powi(4)).sum::<f64>();
                let grad = (0..3).map(|i| -(2.0 * scale[i] * (t[i] - c[i]) + 0.4 * (t[i] - c[i]).powi(3))).collect();
                Ok(LogMl { value, grad })
            },
            &init,
            &budget(max),
        )
        .unwrap();
        prop_assert!(calls <= max + EVALUATION_OVERDRAFT);
        prop_assert_eq!(calls, out.evaluations);
        for w in out.trace.windows(2) {
            prop_assert!(w[1].value >= w[0].value);
        }
    }
}
