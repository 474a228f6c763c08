mod common;

use std::path::Path;
use std::process::Command;

use common::{normal_matrix, rng, smooth_targets};
use gpr_approx::data::{write_csv, Dataset, SyntheticSpec};
use gpr_approx::harness::{
    curves, emit_results, enumerate_cells, paired_deltas, run_experiment, run_on_dataset, write_results_csv,
    CellStatus, DatasetRef, ExperimentConfig, ExperimentReport, HyperparameterMode, Method, MethodSpec, OutputFormat,
    Partitioner, RESULTS_HEADER,
};
use gpr_approx::optimizer::OptBudget;
use gpr_approx::{Hyperparameters, KernelFlavor};
use ndarray::Array1;

fn synth(n: usize, t: usize) -> DatasetRef {
    DatasetRef::Synthetic(SyntheticSpec {
        noise_variance: 1e-2,
        ..SyntheticSpec::synth2(n, t, 4)
    })
}

fn small_budget() -> OptBudget {
    OptBudget {
        max_evaluations: 25,
        ..OptBudget::default()
    }
}

#[test]
fn sod_with_all_points_matches_exact_cell() {
    let hp = Hyperparameters::isotropic(0.1, -0.2, -2.0).unwrap();
    let mut cfg = ExperimentConfig::new(
        synth(120, 60),
        vec![
            MethodSpec::new(Method::Exact, vec![]),
            MethodSpec::new(Method::Sod, vec![120]),
        ],
        HyperparameterMode::Fixed { value: hp.clone() },
    );
    cfg.runs = 1;
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.failed_cells(), 0);
    let exact = report.cell(Method::Exact, 120, 0).unwrap();
    let sod = report.cell(Method::Sod, 120, 0).unwrap();
    let (a, b) = (exact.smse.unwrap(), sod.smse.unwrap());
    assert!((a - b).abs() <= 1e-10 * a.abs(), "{a} {b}");
    let (a, b) = (exact.msll.unwrap(), sod.msll.unwrap());
    assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} {b}");
    assert_eq!(exact.theta, vec![hp.clone()]);
    assert_eq!(exact.evaluations, 0);
    assert_eq!(exact.hyp_seconds, 0.0);
}

#[test]
fn hybrid_learns_the_sod_hyperparameters() {
    let mut cfg = ExperimentConfig::new(
        synth(200, 50),
        vec![
            MethodSpec::new(Method::Sod, vec![40]).with_selector(Partitioner::Fpc),
            MethodSpec::new(Method::Hybrid, vec![40]).with_selector(Partitioner::Fpc),
        ],
        HyperparameterMode::Learn {
            kernel: KernelFlavor::Ard,
        },
    );
    cfg.runs = 2;
    cfg.budget = small_budget();
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.failed_cells(), 0);
    for run in 0..2 {
        let sod = report.cell(Method::Sod, 40, run).unwrap();
        let hybrid = report.cell(Method::Hybrid, 40, run).unwrap();
        assert_eq!(sod.theta, hybrid.theta);
        assert_eq!(sod.evaluations, hybrid.evaluations);
        assert!(sod.evaluations > 0 && sod.evaluations <= 25);
        assert_eq!(hybrid.selector, Some(Partitioner::Fpc));
    }
}

#[test]
fn generative_mode_uses_the_generating_hyperparameters() {
    let spec = SyntheticSpec::synth2(80, 20, 9);
    let mut cfg = ExperimentConfig::new(
        DatasetRef::Synthetic(spec.clone()),
        vec![
            MethodSpec::new(Method::Fitc, vec![8, 16]),
            MethodSpec::new(Method::Cg, vec![5]),
        ],
        HyperparameterMode::Generative,
    );
    cfg.runs = 1;
    let report = run_experiment(&cfg).unwrap();
    let want = spec.generative_hyperparameters().unwrap();
    assert_eq!(want.to_vec(), vec![0.0, 0.0, 0.5 * 1e-6f64.ln()]);
    for c in &report.cells {
        assert!(c.is_ok(), "{:?}", c.status);
        assert_eq!(c.theta, vec![want.clone()]);
    }
    let cg = report.cell(Method::Cg, 5, 0).unwrap();
    assert!(cg.msll.is_none() && cg.smse.is_some());
}

#[test]
fn every_cell_is_reported_in_grid_order() {
    let mut cfg = ExperimentConfig::new(
        synth(100, 30),
        vec![
            MethodSpec::new(Method::Sod, vec![10, 20]),
            MethodSpec::new(Method::Local, vec![25]),
            MethodSpec::new(Method::Exact, vec![]),
        ],
        HyperparameterMode::Fixed {
            value: Hyperparameters::isotropic(0.0, 0.0, -2.0).unwrap(),
        },
    );
    cfg.runs = 3;
    cfg.seed = 40;
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.cells.len(), (2 + 1 + 1) * 3);
    assert_eq!(enumerate_cells(&cfg, 100).len(), report.cells.len());
    let order: Vec<(Method, usize, usize, u64)> = report.cells.iter().map(|c| (c.method, c.m, c.run, c.seed)).collect();
    assert_eq!(order[0], (Method::Sod, 10, 0, 40));
    assert_eq!(order[3], (Method::Sod, 20, 0, 40));
    assert_eq!(order[7], (Method::Local, 25, 1, 41));
    assert_eq!(order[11], (Method::Exact, 100, 2, 42));
    assert!(report.cells.iter().all(|c| c.is_ok()));
    let local = report.cell(Method::Local, 25, 0).unwrap();
    assert!(local.selection_seconds > 0.0);
}

/// Test targets equal to the training mean leave SMSE undefined, so every
/// cell fails while the grid still completes.
fn degenerate_files(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let x = normal_matrix(&mut rng(110), 40, 2);
    let y = Array1::from_shape_fn(40, |i| if i % 2 == 0 { 1.0 } else { -1.0 });
    let xs = normal_matrix(&mut rng(111), 10, 2);
    let train = dir.join("train.csv");
    let test = dir.join("test.csv");
    write_csv(&train, x.view(), y.view()).unwrap();
    write_csv(&test, xs.view(), Array1::zeros(10).view()).unwrap();
    (train, test)
}

#[test]
fn failing_cells_are_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = degenerate_files(dir.path());
    let mut cfg = ExperimentConfig::new(
        DatasetRef::Files {
            name: "flat".into(),
            train,
            test,
        },
        vec![
            MethodSpec::new(Method::Sod, vec![8]),
            MethodSpec::new(Method::Exact, vec![]),
        ],
        HyperparameterMode::Fixed {
            value: Hyperparameters::isotropic(0.0, 0.0, -1.0).unwrap(),
        },
    );
    cfg.runs = 2;
    cfg.standardize = Some(false);
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.cells.len(), 4);
    assert_eq!(report.failed_cells(), 4);
    for c in &report.cells {
        match &c.status {
            CellStatus::Failed(reason) => assert!(reason.contains("SMSE"), "{reason}"),
            CellStatus::Ok => unreachable!(),
        }
    }
    let pts = curves(&report.cells, 10);
    assert!(pts
        .iter()
        .all(|p| p.runs == 0 && p.failed == 2 && p.mean_smse.is_none()));
}

fn tiny_report() -> ExperimentReport {
    let mut cfg = ExperimentConfig::new(
        synth(60, 20),
        vec![
            MethodSpec::new(Method::Sod, vec![10]),
            MethodSpec::new(Method::Fitc, vec![6]),
        ],
        HyperparameterMode::Fixed {
            value: Hyperparameters::isotropic(0.0, 0.0, -2.0).unwrap(),
        },
    );
    cfg.runs = 1;
    run_experiment(&cfg).unwrap()
}

#[test]
fn results_csv_has_one_row_per_cell() {
    let report = tiny_report();
    let mut buf = Vec::new();
    write_results_csv(&report, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], RESULTS_HEADER.join(","));
    assert!(lines[1].starts_with("sod,10,0,0,random,ok,"));
    let theta = lines[2].split(',').nth(15).unwrap();
    assert_eq!(theta.split(';').count(), 3);

    let mut empty = report.clone();
    empty.cells.clear();
    let mut buf = Vec::new();
    write_results_csv(&empty, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
}

#[test]
fn json_report_round_trips() {
    let report = tiny_report();
    let dir = tempfile::tempdir().unwrap();
    let written = emit_results(&report, dir.path(), &OutputFormat::ALL).unwrap();
    assert_eq!(written.len(), 3);
    let back = ExperimentReport::load_json(&dir.path().join("report.json")).unwrap();
    assert_eq!(back, report);
    let curves_csv = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    assert_eq!(curves_csv.lines().count(), 3);
}

#[test]
fn deltas_are_learned_minus_fixed() {
    let mut learned = tiny_report();
    let fixed = tiny_report();
    learned.cells[0].smse = Some(0.5);
    learned.cells[1].status = CellStatus::Failed("boom".into());
    let d = paired_deltas(&learned, &fixed);
    assert_eq!(d.len(), 2);
    assert_eq!(d[0].delta_smse, Some(0.5 - fixed.cells[0].smse.unwrap()));
    assert_eq!(
        d[0].delta_msll,
        Some(learned.cells[0].msll.unwrap() - fixed.cells[0].msll.unwrap())
    );
    assert_eq!(d[1].delta_smse, None);
    assert_eq!(d[1].smse_fixed, fixed.cells[1].smse);
}

#[test]
fn sod_and_fitc_test_costs_are_comparable() {
    let mut r = rng(112);
    let x = normal_matrix(&mut r, 2000, 2);
    let y = smooth_targets(&mut r, x.view(), 0.1);
    let xs = normal_matrix(&mut r, 4000, 2);
    let ys = smooth_targets(&mut r, xs.view(), 0.1);
    let ds = Dataset::new("timing", x, y, xs, ys).unwrap();
    let mut cfg = ExperimentConfig::new(
        DatasetRef::Files {
            name: "unused".into(),
            train: "unused".into(),
            test: "unused".into(),
        },
        vec![
            MethodSpec::new(Method::Sod, vec![256]),
            MethodSpec::new(Method::Fitc, vec![256]),
        ],
        HyperparameterMode::Fixed {
            value: Hyperparameters::isotropic(0.0, 0.0, -2.0).unwrap(),
        },
    );
    cfg.runs = 3;
    let report = run_on_dataset(&cfg, &ds, None).unwrap();
    let best = |m: Method| {
        report
            .cells
            .iter()
            .filter(|c| c.method == m)
            .map(|c| c.test_seconds_per_point)
            .fold(f64::INFINITY, f64::min)
    };
    let (sod, fitc) = (best(Method::Sod), best(Method::Fitc));
    assert!(sod > 0.0 && fitc > 0.0);
    assert!(fitc / sod < 3.0 && sod / fitc < 3.0, "sod {sod:e} fitc {fitc:e}");
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gpr-approx"))
}

fn write_config(dir: &Path, name: &str, body: &serde_json::Value) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(body).unwrap()).unwrap();
    p
}

#[test]
fn cli_gen_run_curves_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let gen_cfg = write_config(
        d,
        "gen.json",
        &serde_json::json!({"schema": 1, "synthetic": {"input_dim": 2, "n_train": 64, "n_test": 16, "noise_variance": 1e-4}}),
    );
    let st = bin()
        .args(["gen", "--config"])
        .arg(&gen_cfg)
        .arg("--out")
        .arg(d.join("data"))
        .arg("--seed")
        .arg("3")
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&st.stdout).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert!(d.join("data/train.csv").exists() && d.join("data/manifest.json").exists());

    let run_cfg = write_config(
        d,
        "run.json",
        &serde_json::json!({
            "schema": 1,
            "dataset": {"files": {"name": "gen", "train": "data/train.csv", "test": "data/test.csv"}},
            "methods": [{"method": "sod", "m": [8, 16]}, {"method": "fitc", "m": [4]}],
            "hyperparameters": {"mode": "fixed", "value": {"flavor": "isotropic", "log_lengthscales": [0.0], "log_signal_std": 0.0, "log_noise_std": -2.0}},
            "runs": 2
        }),
    );
    let st = bin()
        .arg("run")
        .arg("--config")
        .arg(&run_cfg)
        .arg("--out")
        .arg(d.join("out"))
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    let csv = std::fs::read_to_string(d.join("out/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);

    let st = bin()
        .arg("run")
        .arg("--config")
        .arg(&run_cfg)
        .arg("--out")
        .arg(d.join("sharded"))
        .args(["--jobs", "2"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    let a = ExperimentReport::load_json(&d.join("out/report.json")).unwrap();
    let b = ExperimentReport::load_json(&d.join("sharded/report.json")).unwrap();
    let key = |r: &ExperimentReport| {
        r.cells
            .iter()
            .map(|c| (c.method, c.m, c.run, c.smse))
            .collect::<Vec<_>>()
    };
    assert_eq!(key(&a), key(&b));

    let st = bin()
        .arg("curves")
        .arg("--report")
        .arg(d.join("out/report.json"))
        .arg("--out")
        .arg(d.join("curves"))
        .output()
        .unwrap();
    assert!(st.status.success());
    assert_eq!(
        std::fs::read_to_string(d.join("curves/curves.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 3
    );

    let (train, test) = degenerate_files(d);
    let bad_cfg = write_config(
        d,
        "bad.json",
        &serde_json::json!({
            "schema": 1,
            "dataset": {"files": {"name": "flat", "train": train, "test": test}},
            "standardize": false,
            "methods": [{"method": "sod", "m": [8]}],
            "hyperparameters": {"mode": "fixed", "value": {"flavor": "isotropic", "log_lengthscales": [0.0], "log_signal_std": 0.0, "log_noise_std": -1.0}},
            "runs": 1
        }),
    );
    let st = bin()
        .arg("run")
        .arg("--config")
        .arg(&bad_cfg)
        .arg("--out")
        .arg(d.join("bad"))
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(d.join("bad/results.csv").exists());

    let wrong_schema = write_config(
        d,
        "schema.json",
        &serde_json::json!({"schema": 2, "dataset": {"synthetic": {"input_dim": 2, "n_train": 10, "n_test": 5, "noise_variance": 0.1}},
                            "methods": [{"method": "exact"}]}),
    );
    let st = bin()
        .arg("run")
        .arg("--config")
        .arg(&wrong_schema)
        .arg("--out")
        .arg(d.join("x"))
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&st.stderr).contains("schema"));

    let st = bin().arg("run").arg("--out").arg(d.join("y")).output().unwrap();
    assert_eq!(st.status.code(), Some(1));
}

#[test]
fn cli_trace_writes_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "trace.json",
        &serde_json::json!({
            "schema": 1,
            "dataset": {"synthetic": {"input_dim": 8, "n_train": 300, "n_test": 50, "noise_variance": 1e-3}},
            "hyperparameters": {"mode": "generative"},
            "max_iterations": 40,
            "sod_m": [16, 64]
        }),
    );
    let st = bin()
        .arg("trace")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("t"))
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let trace = std::fs::read_to_string(dir.path().join("t/cg_trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,residual,seconds,smse"));
    assert!(trace.lines().count() > 20);
    let sod = std::fs::read_to_string(dir.path().join("t/sod_reference.csv")).unwrap();
    assert_eq!(sod.lines().count(), 3);
}
