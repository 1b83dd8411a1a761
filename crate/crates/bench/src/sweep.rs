//! Chain-walk sweeps: NMSE of each method over noise-count or sample-count grids.
//!
//! Work is split into `(sweep value, trial)` units. A unit draws its batch and
//! feature noise from the trial seed, assembles the LSTD operator once and runs
//! every grid point of every method on it. Units run on a rayon pool and are
//! collected in a fixed order; the worker count never changes the output.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use ndarray::{Array1, ArrayView1, ArrayView2};
use pmc_lstd::features::{build_lstd_data, q_table, FeatureMapSpec};
use pmc_lstd::inclusion::StopRule;
use pmc_lstd::lstd::{assemble_operator, Estimator, SolverOptions, SubspaceChoice, TauChoice};
use pmc_lstd::mdp::{exact_optimal, sample_batch, ChainMdpModel, ExactSolution};
use pmc_lstd::policy_iteration::{approximate_policy_iteration, step_seeds, ApiSettings};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Method, Mode, QSpec, TauSpec, Tuning};
use crate::BenchError;

/// Exact CSV header of the results file.
pub const RESULTS_HEADER: &str = "sweep_value,method,trial,nmse,iterations,wall_time_ms,hyperparams";
pub const GRID_HEADER: &str = "sweep_value,method,hyperparams,mean_nmse,mean_iterations,selected";
pub const DIAGNOSTICS_HEADER: &str = "sweep_value,method,trial,iteration,delta1,delta2,sup_gap";
pub const WEIGHTS_HEADER: &str = "sweep_value,method,trial,weights";

/// States of the benchmark chain.
pub const CHAIN_STATES: usize = 20;
pub const CHAIN_SUCCESS_PROB: f64 = 0.9;

/// `Σ_s [V*(s) − min_a Q̂(s,a)]² / Σ_s V*(s)²`.
pub fn nmse(v_star: ArrayView1<f64>, q_hat: ArrayView2<f64>) -> Result<f64, BenchError> {
    if q_hat.nrows() != v_star.len() {
        return Err(BenchError::Shape(format!(
            "Q̂ has {} states, V* has {}",
            q_hat.nrows(),
            v_star.len()
        )));
    }
    let den: f64 = v_star.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(BenchError::ZeroDenominator);
    }
    let num: f64 = v_star
        .iter()
        .zip(q_hat.rows())
        .map(|(&v, row)| {
            let best = row.iter().copied().fold(f64::INFINITY, f64::min);
            (v - best) * (v - best)
        })
        .sum();
    Ok(num / den)
}

/// Mean of `values`, summed in sorted order.
pub fn mean_over_trials(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep_value: usize,
    pub method: Method,
    pub trial: usize,
    pub nmse: f64,
    pub iterations: usize,
    pub wall_time_ms: f64,
    pub hyperparams: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    pub sweep_value: usize,
    pub method: Method,
    pub hyperparams: String,
    pub mean_nmse: f64,
    pub mean_iterations: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub sweep_value: usize,
    pub method: Method,
    pub trial: usize,
    pub iteration: usize,
    pub delta1: f64,
    pub delta2: f64,
    pub sup_gap: f64,
}

/// Weights behind one result row.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRecord {
    pub sweep_value: usize,
    pub method: Method,
    pub trial: usize,
    pub weights: Array1<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    pub grid: Vec<GridSummary>,
    /// Per-iteration policy-iteration diagnostics of the emitted rows (api mode).
    pub diagnostics: Vec<DiagnosticRow>,
    pub weights: Vec<WeightRecord>,
}

/// One hyperparameter setting of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub method: Method,
    pub estimator: Estimator,
    pub label: String,
}

/// Grid points of every configured method, in evaluation order. Iterative
/// methods run from the largest `μ` down.
pub fn grid_points(cfg: &ExperimentConfig) -> Vec<GridPoint> {
    let mut points = Vec::new();
    for &method in &cfg.methods {
        match method {
            Method::Lstd => points.push(GridPoint {
                method,
                estimator: Estimator::Lstd,
                label: String::new(),
            }),
            Method::Ridge => {
                for &ridge in &cfg.ridge_grid {
                    points.push(GridPoint {
                        method,
                        estimator: Estimator::Ridge { ridge },
                        label: format!("ridge={ridge}"),
                    });
                }
            }
            Method::L1 => {
                for mu in descending(cfg.mu_grid_for(method)) {
                    points.push(GridPoint {
                        method,
                        estimator: Estimator::L1 { mu },
                        label: format!("mu={mu}"),
                    });
                }
            }
            Method::Pmc => {
                for mu in descending(cfg.mu_grid_for(method)) {
                    for &tau in &cfg.tau_grid {
                        for &q in &cfg.q_grid {
                            let tau_choice = match tau {
                                TauSpec::Fixed(t) => TauChoice::Fixed(t),
                                TauSpec::Smallest => TauChoice::Smallest,
                            };
                            let q_choice = match q {
                                QSpec::Auto => SubspaceChoice::Rank,
                                QSpec::Fixed(q) => SubspaceChoice::Fixed(q),
                            };
                            points.push(GridPoint {
                                method,
                                estimator: Estimator::Pmc {
                                    mu,
                                    tau: tau_choice,
                                    q: q_choice,
                                },
                                label: format!("mu={mu};tau={tau};q={q}"),
                            });
                        }
                    }
                }
            }
        }
    }
    points
}

fn descending(grid: &[f64]) -> Vec<f64> {
    let mut g = grid.to_vec();
    g.sort_by(|a, b| b.total_cmp(a));
    g.dedup();
    g
}

/// Benchmark chain with the configured discount.
pub fn chain_model(gamma: f64) -> Result<ChainMdpModel, BenchError> {
    ChainMdpModel::new(CHAIN_STATES, CHAIN_SUCCESS_PROB, gamma).map_err(|e| BenchError::Core {
        context: "chain model".into(),
        source: e,
    })
}

/// Seed of trial `trial`: base seed plus the trial index.
pub fn trial_seed(cfg: &ExperimentConfig, trial: usize) -> u64 {
    cfg.seed.wrapping_add(trial as u64)
}

#[derive(Debug, Clone)]
struct PointOutcome {
    nmse: f64,
    iterations: usize,
    wall_ms: f64,
    weights: Array1<f64>,
    diagnostics: Vec<(f64, f64, f64)>,
}

struct Unit {
    value_idx: usize,
    trial: usize,
}

fn core_err(context: String) -> impl FnOnce(pmc_lstd::Error) -> BenchError {
    move |source| BenchError::Core { context, source }
}

fn solver_options(cfg: &ExperimentConfig) -> SolverOptions {
    SolverOptions {
        stop: StopRule {
            tolerance: cfg.tol,
            max_iterations: cfg.max_iters,
        },
        epsilon: cfg.epsilon,
    }
}

fn run_unit(
    cfg: &ExperimentConfig,
    model: &ChainMdpModel,
    optimal: &ExactSolution,
    points: &[GridPoint],
    unit: &Unit,
) -> Result<Vec<PointOutcome>, BenchError> {
    let value = cfg.values[unit.value_idx];
    let (m, n_noise) = cfg.point(value);
    let seed = trial_seed(cfg, unit.trial);
    let options = solver_options(cfg);
    let ctx = |what: &str, label: &str| format!("{what} (sweep value {value}, trial {}, {label})", unit.trial);
    let mut outcomes = Vec::with_capacity(points.len());

    match cfg.mode {
        Mode::Evaluate => {
            let (sample_seed, feature_seed) = step_seeds(seed, 0);
            let spec = FeatureMapSpec::chain_default(n_noise, feature_seed);
            let batch = sample_batch(model, m, sample_seed).map_err(core_err(ctx("sampling", "")))?;
            let data = build_lstd_data(&spec, &batch, &optimal.policy, model.gamma())
                .map_err(core_err(ctx("features", "")))?;
            let op = assemble_operator(&data).map_err(core_err(ctx("operator assembly", "")))?;
            let mut previous: Option<(Method, Array1<f64>)> = None;
            for point in points {
                let warm = match &previous {
                    Some((method, w)) if cfg.warm_start && *method == point.method => Some(w.view()),
                    _ => None,
                };
                let start = Instant::now();
                let est = point
                    .estimator
                    .estimate(&op, options, warm)
                    .map_err(core_err(ctx(point.method.label(), &point.label)))?;
                let wall_ms = start.elapsed().as_secs_f64() * 1e3;
                let q_hat = q_table(&spec, &est.weights).map_err(core_err(ctx("Q table", &point.label)))?;
                outcomes.push(PointOutcome {
                    nmse: nmse(optimal.v.view(), q_hat.view())?,
                    iterations: est.iterations,
                    wall_ms,
                    weights: est.weights.clone(),
                    diagnostics: Vec::new(),
                });
                previous = Some((point.method, est.weights));
            }
        }
        Mode::Api => {
            let spec = FeatureMapSpec::chain_default(n_noise, seed);
            for point in points {
                let settings = ApiSettings {
                    solver: options,
                    ..ApiSettings::new(m, cfg.iterations, seed)
                };
                let start = Instant::now();
                let run = approximate_policy_iteration(model, &spec, &point.estimator, &settings)
                    .map_err(core_err(ctx(point.method.label(), &point.label)))?;
                let wall_ms = start.elapsed().as_secs_f64() * 1e3;
                let d = &run.diagnostics;
                outcomes.push(PointOutcome {
                    nmse: nmse(optimal.v.view(), run.final_q().view())?,
                    iterations: run.solver_iterations.iter().sum(),
                    wall_ms,
                    weights: run.weights.last().expect("K ≥ 1").clone(),
                    diagnostics: (0..d.len()).map(|k| (d.delta1[k], d.delta2[k], d.sup_gap[k])).collect(),
                });
            }
        }
    }
    Ok(outcomes)
}

/// Runs the sweep described by `cfg`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput, BenchError> {
    run_sweep_with_progress(cfg, |_, _| {})
}

/// [`run_sweep`] reporting `(finished units, total units)` after each unit.
pub fn run_sweep_with_progress(
    cfg: &ExperimentConfig,
    progress: impl Fn(usize, usize) + Sync,
) -> Result<SweepOutput, BenchError> {
    cfg.validate()?;
    let model = chain_model(cfg.gamma)?;
    let optimal = exact_optimal(&model).map_err(core_err("exact solution".into()))?;
    let points = grid_points(cfg);
    let units: Vec<Unit> = (0..cfg.values.len())
        .flat_map(|value_idx| (0..cfg.trials).map(move |trial| Unit { value_idx, trial }))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| BenchError::Shape(format!("thread pool: {e}")))?;
    let done = AtomicUsize::new(0);
    let total = units.len();
    let outcomes: Vec<Vec<PointOutcome>> = pool.install(|| {
        units
            .par_iter()
            .map(|unit| {
                let out = run_unit(cfg, &model, &optimal, &points, unit);
                progress(done.fetch_add(1, Ordering::Relaxed) + 1, total);
                out
            })
            .collect::<Result<_, _>>()
    })?;

    // outcomes[value_idx * trials + trial][point]
    let at = |v: usize, t: usize, p: usize| &outcomes[v * cfg.trials + t][p];
    let n_values = cfg.values.len();
    let mean_nmse: Vec<Vec<f64>> = (0..n_values)
        .map(|v| {
            (0..points.len())
                .map(|p| {
                    let per_trial: Vec<f64> = (0..cfg.trials).map(|t| at(v, t, p).nmse).collect();
                    mean_over_trials(&per_trial)
                })
                .collect()
        })
        .collect();

    let mut selected = vec![vec![0usize; cfg.methods.len()]; n_values];
    for (mi, &method) in cfg.methods.iter().enumerate() {
        let candidates: Vec<usize> = (0..points.len()).filter(|&p| points[p].method == method).collect();
        let score = |v: Option<usize>, p: usize| match v {
            Some(v) => nan_last(mean_nmse[v][p]),
            None => nan_last((0..n_values).map(|v| mean_nmse[v][p]).sum()),
        };
        let best = |v: Option<usize>| {
            candidates
                .iter()
                .copied()
                .fold(None::<usize>, |best, p| match best {
                    Some(b) if score(v, b) <= score(v, p) => Some(b),
                    _ => Some(p),
                })
                .expect("validated grids are nonempty")
        };
        match cfg.tuning {
            Tuning::PerValue => (0..n_values).for_each(|v| selected[v][mi] = best(Some(v))),
            Tuning::Global => {
                let b = best(None);
                (0..n_values).for_each(|v| selected[v][mi] = b);
            }
        }
    }

    let mut output = SweepOutput::default();
    for (v, &value) in cfg.values.iter().enumerate() {
        for (mi, &method) in cfg.methods.iter().enumerate() {
            let p = selected[v][mi];
            for trial in 0..cfg.trials {
                let o = at(v, trial, p);
                output.rows.push(ResultRow {
                    sweep_value: value,
                    method,
                    trial,
                    nmse: o.nmse,
                    iterations: o.iterations,
                    wall_time_ms: if cfg.timing { o.wall_ms } else { 0.0 },
                    hyperparams: points[p].label.clone(),
                });
                for (k, &(delta1, delta2, sup_gap)) in o.diagnostics.iter().enumerate() {
                    output.diagnostics.push(DiagnosticRow {
                        sweep_value: value,
                        method,
                        trial,
                        iteration: k,
                        delta1,
                        delta2,
                        sup_gap,
                    });
                }
                output.weights.push(WeightRecord {
                    sweep_value: value,
                    method,
                    trial,
                    weights: o.weights.clone(),
                });
            }
            for (p, point) in points.iter().enumerate().filter(|(_, pt)| pt.method == method) {
                let iters: Vec<f64> = (0..cfg.trials).map(|t| at(v, t, p).iterations as f64).collect();
                output.grid.push(GridSummary {
                    sweep_value: value,
                    method,
                    hyperparams: point.label.clone(),
                    mean_nmse: mean_nmse[v][p],
                    mean_iterations: mean_over_trials(&iters),
                    selected: p == selected[v][mi],
                });
            }
        }
    }
    Ok(output)
}

fn nan_last(x: f64) -> f64 {
    if x.is_nan() {
        f64::INFINITY
    } else {
        x
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> BenchError + '_ {
    move |e| BenchError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> BenchError + '_ {
    move |e| BenchError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, BenchError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(path))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_records<I, R>(path: &Path, header: &str, records: I) -> Result<(), BenchError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(path)?);
    writer.write_record(header.split(',')).map_err(csv_err(path))?;
    for record in records {
        writer.write_record(record).map_err(csv_err(path))?;
    }
    writer.flush().map_err(io_err(path))
}

/// Writes the result rows under [`RESULTS_HEADER`].
pub fn write_results(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<(), BenchError> {
    write_records(
        path.as_ref(),
        RESULTS_HEADER,
        rows.iter().map(|r| {
            [
                r.sweep_value.to_string(),
                r.method.to_string(),
                r.trial.to_string(),
                r.nmse.to_string(),
                r.iterations.to_string(),
                r.wall_time_ms.to_string(),
                r.hyperparams.clone(),
            ]
        }),
    )
}

pub fn write_grid_summary(grid: &[GridSummary], path: impl AsRef<Path>) -> Result<(), BenchError> {
    write_records(
        path.as_ref(),
        GRID_HEADER,
        grid.iter().map(|g| {
            [
                g.sweep_value.to_string(),
                g.method.to_string(),
                g.hyperparams.clone(),
                g.mean_nmse.to_string(),
                g.mean_iterations.to_string(),
                g.selected.to_string(),
            ]
        }),
    )
}

pub fn write_diagnostics(rows: &[DiagnosticRow], path: impl AsRef<Path>) -> Result<(), BenchError> {
    write_records(
        path.as_ref(),
        DIAGNOSTICS_HEADER,
        rows.iter().map(|d| {
            [
                d.sweep_value.to_string(),
                d.method.to_string(),
                d.trial.to_string(),
                d.iteration.to_string(),
                d.delta1.to_string(),
                d.delta2.to_string(),
                d.sup_gap.to_string(),
            ]
        }),
    )
}

/// Weights as space-separated round-trip floats.
pub fn write_weights(records: &[WeightRecord], path: impl AsRef<Path>) -> Result<(), BenchError> {
    write_records(
        path.as_ref(),
        WEIGHTS_HEADER,
        records.iter().map(|w| {
            let joined = w.weights.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
            [
                w.sweep_value.to_string(),
                w.method.to_string(),
                w.trial.to_string(),
                joined,
            ]
        }),
    )
}

/// Companion path `results.csv` → `results.<suffix>.csv`.
pub fn companion_path(path: &Path, suffix: &str) -> std::path::PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path.extension().map(|e| e.to_string_lossy().into_owned());
    let name = match ext {
        Some(ext) => format!("{stem}.{suffix}.{ext}"),
        None => format!("{stem}.{suffix}"),
    };
    path.with_file_name(name)
}

/// Writes rows, grid summary and (when present) diagnostics next to `path`.
pub fn write_output(output: &SweepOutput, path: impl AsRef<Path>) -> Result<(), BenchError> {
    let path = path.as_ref();
    write_results(&output.rows, path)?;
    write_grid_summary(&output.grid, companion_path(path, "grid"))?;
    if !output.diagnostics.is_empty() {
        write_diagnostics(&output.diagnostics, companion_path(path, "diagnostics"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn nmse_examples() {
        let v = Array1::from_elem(20, 1.0);
        let exact = Array2::from_elem((20, 2), 1.0);
        assert_eq!(nmse(v.view(), exact.view()).unwrap(), 0.0);
        assert_eq!(nmse(v.view(), Array2::zeros((20, 2)).view()).unwrap(), 1.0);
        let mut q = Array2::from_elem((20, 2), 1.0);
        q[[0, 0]] = 0.5;
        q[[0, 1]] = 3.0;
        assert!((nmse(v.view(), q.view()).unwrap() - 0.0125).abs() < 1e-15);
    }

    #[test]
    fn nmse_rejects_zero_value_function() {
        assert!(matches!(
            nmse(Array1::zeros(2).view(), Array2::zeros((2, 2)).view()),
            Err(BenchError::ZeroDenominator)
        ));
        assert!(nmse(array![1.0].view(), Array2::zeros((2, 2)).view()).is_err());
    }

    #[test]
    fn trial_mean_ignores_order() {
        let a = [0.1, 0.7, 1e-17, 0.3, 2.5];
        let b = [2.5, 1e-17, 0.3, 0.1, 0.7];
        assert_eq!(mean_over_trials(&a), mean_over_trials(&b));
    }

    #[test]
    fn grid_runs_mu_downward() {
        let cfg = ExperimentConfig::parse(
            "sweep=noise_count\nvalues=0\nm=10\nmethods=lstd,l1,pmc\nmu_grid=1,10,3\nq=auto,4\n",
        )
        .unwrap();
        let labels: Vec<String> = grid_points(&cfg).into_iter().map(|p| p.label).collect();
        assert_eq!(
            labels,
            [
                "",
                "mu=10",
                "mu=3",
                "mu=1",
                "mu=10;tau=smallest;q=auto",
                "mu=10;tau=smallest;q=4",
                "mu=3;tau=smallest;q=auto",
                "mu=3;tau=smallest;q=4",
                "mu=1;tau=smallest;q=auto",
                "mu=1;tau=smallest;q=4",
            ]
        );
    }

    #[test]
    fn companion_paths() {
        assert_eq!(
            companion_path(Path::new("out/r.csv"), "grid"),
            Path::new("out/r.grid.csv")
        );
        assert_eq!(companion_path(Path::new("r"), "grid"), Path::new("r.grid"));
    }
}
