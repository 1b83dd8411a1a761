use std::fs;
use std::path::Path;

use ndarray::Array1;
use pmc_lstd::features::{q_table, FeatureMapSpec};
use pmc_lstd::mdp::exact_optimal;
use pmc_lstd_bench::config::{ExperimentConfig, Method};
use pmc_lstd_bench::sweep::{
    chain_model, companion_path, mean_over_trials, nmse, run_sweep, write_output, write_weights, RESULTS_HEADER,
};

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(text).unwrap()
}

const SMALL: &str = "\
sweep=noise_count
values=0,2,4,8
m=60
methods=lstd,ridge
ridge_grid=0.01,1
mode=evaluate
seed=5
";

#[test]
fn one_row_per_value_method_and_trial() {
    let out = run_sweep(&config(SMALL)).unwrap();
    assert_eq!(out.rows.len(), 4 * 2 * 30);
    for (i, row) in out.rows.iter().enumerate() {
        assert!(row.nmse.is_finite() && row.nmse >= 0.0);
        assert_eq!(row.trial, i % 30);
        assert_eq!(row.wall_time_ms, 0.0);
    }
    // Ridge has two grid points, lstd one, at every sweep value.
    assert_eq!(out.grid.len(), 4 * 3);
    assert_eq!(out.grid.iter().filter(|g| g.selected).count(), 4 * 2);
}

#[test]
fn identical_configs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let text = "\
sweep=sample_count
values=40,80
n_noise=3
trials=3
methods=pmc,l1,lstd
mu_grid=0.3,1
q=auto,4
mode=evaluate
tol=1e-6
seed=17
";
    let mut cfg = config(text);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    write_output(&run_sweep(&cfg).unwrap(), &a).unwrap();
    cfg.workers = 3;
    write_output(&run_sweep(&cfg).unwrap(), &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(
        fs::read(companion_path(&a, "grid")).unwrap(),
        fs::read(companion_path(&b, "grid")).unwrap()
    );
    let text = fs::read_to_string(&a).unwrap();
    assert!(text.starts_with(&format!("{RESULTS_HEADER}\n")));
    assert!(!text.contains('\r'));
    assert_eq!(text.lines().count(), 1 + 2 * 3 * 3);
}

#[test]
fn minimal_config_runs() {
    let out = run_sweep(&config("sweep=noise_count\nvalues=1\nm=20\ntrials=1\nmethods=lstd\n")).unwrap();
    assert_eq!(out.rows.len(), 1);
    // Default mode is policy iteration, which records per-iteration diagnostics.
    assert_eq!(out.diagnostics.len(), 10);
}

#[test]
fn reported_nmse_is_reproducible_from_dumped_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        "sweep=noise_count\nvalues=0,5\nm=80\ntrials=4\nmethods=l1,lstd\nmu_grid=0.5\nmode=evaluate\ntol=1e-7\n",
    );
    let out = run_sweep(&cfg).unwrap();
    let path = dir.path().join("w.csv");
    write_weights(&out.weights, &path).unwrap();
    let exact = exact_optimal(&chain_model(0.9).unwrap()).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), out.rows.len());
    for (rec, row) in records.iter().zip(&out.rows) {
        assert_eq!(rec[0].parse::<usize>().unwrap(), row.sweep_value);
        assert_eq!(rec[1].parse::<Method>().unwrap(), row.method);
        let w: Array1<f64> = rec[3].split(' ').map(|t| t.parse().unwrap()).collect();
        let q = q_table(&FeatureMapSpec::chain_default(row.sweep_value, 0), &w).unwrap();
        let recomputed = nmse(exact.v.view(), q.view()).unwrap();
        assert!((recomputed - row.nmse).abs() <= 1e-12, "{recomputed} vs {}", row.nmse);
    }
}

#[test]
fn trial_mean_is_order_invariant() {
    let out = run_sweep(&config(SMALL)).unwrap();
    let mut values: Vec<f64> = out.rows.iter().filter(|r| r.sweep_value == 8).map(|r| r.nmse).collect();
    let reference = mean_over_trials(&values);
    values.reverse();
    assert_eq!(mean_over_trials(&values), reference);
    values.rotate_left(17);
    assert_eq!(mean_over_trials(&values), reference);
    let selected = out
        .grid
        .iter()
        .find(|g| g.selected && g.sweep_value == 8 && g.method == Method::Lstd)
        .unwrap();
    let lstd: Vec<f64> = out
        .rows
        .iter()
        .filter(|r| r.sweep_value == 8 && r.method == Method::Lstd)
        .map(|r| r.nmse)
        .collect();
    assert_eq!(selected.mean_nmse, mean_over_trials(&lstd));
}

#[test]
fn global_tuning_uses_one_grid_point() {
    let mut cfg = config(SMALL);
    cfg.tuning = pmc_lstd_bench::config::Tuning::Global;
    cfg.trials = 3;
    let out = run_sweep(&cfg).unwrap();
    let ridge: Vec<&str> = out
        .rows
        .iter()
        .filter(|r| r.method == Method::Ridge)
        .map(|r| r.hyperparams.as_str())
        .collect();
    assert!(ridge.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn api_mode_writes_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("sweep=noise_count\nvalues=0,3\nm=100\ntrials=2\nmethods=lstd\niterations=4\n");
    let out = run_sweep(&cfg).unwrap();
    let path = dir.path().join("r.csv");
    write_output(&out, &path).unwrap();
    let diag = fs::read_to_string(companion_path(&path, "diagnostics")).unwrap();
    assert_eq!(diag.lines().count(), 1 + 2 * 2 * 4);
    assert!(Path::new(&companion_path(&path, "grid")).exists());
}

#[test]
fn unwritable_output_is_an_error() {
    let out = run_sweep(&config(
        "sweep=noise_count\nvalues=0\nm=20\ntrials=1\nmethods=lstd\nmode=evaluate\n",
    ))
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert!(write_output(&out, blocker.join("r.csv")).is_err());
}
