use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pmc_lstd::features::{build_lstd_data, FeatureMapSpec};
use pmc_lstd::inclusion::StopRule;
use pmc_lstd::lstd::{assemble_operator, Estimator, SolverOptions, SubspaceChoice, TauChoice};
use pmc_lstd::mdp::{exact_optimal, sample_batch};
use pmc_lstd::policy_iteration::step_seeds;
use pmc_lstd_bench::config::{ExperimentConfig, Method, QSpec, TauSpec};
use pmc_lstd_bench::dataset::{read_dataset, write_dataset};
use pmc_lstd_bench::sweep::{self, chain_model, grid_points, run_sweep_with_progress, trial_seed};
use pmc_lstd_bench::BenchError;

#[derive(Parser)]
#[command(
    name = "pmc-lstd",
    version,
    about = "Sparse LSTD with the projective minimax concave penalty"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SolverFlags {
    /// Relative step tolerance of the iterative solvers.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a chain-walk sweep from a config file.
    Chainwalk {
        #[arg(long)]
        config: PathBuf,
        /// Results CSV; overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Write one row of weights per result row to this file.
        #[arg(long = "weights-out")]
        weights_out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Fit one estimator to a dataset dump.
    Solve {
        /// Dataset dump (`m n gamma` header, then rows of Φ, Φ' and payoff).
        data: PathBuf,
        #[arg(long, default_value = "pmc")]
        method: Method,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        /// A positive number or `smallest`.
        #[arg(long, default_value = "smallest")]
        tau: TauSpec,
        /// A subspace dimension or `auto` (numerical rank).
        #[arg(long, default_value = "auto")]
        q: QSpec,
        #[arg(long, default_value_t = 1.0)]
        ridge: f64,
        /// Write the weights here, one per line.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Print V*, Q* and the optimal policy of the chain.
    Exact {
        #[arg(long, default_value_t = sweep::CHAIN_STATES)]
        states: usize,
        #[arg(long = "success-prob", default_value_t = sweep::CHAIN_SUCCESS_PROB)]
        success_prob: f64,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
    },
    /// Check a config and report the derived solver parameters.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Sample a chain-walk dataset under the optimal policy and dump it.
    Dataset {
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        noise: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn io_err(path: &std::path::Path) -> impl Fn(std::io::Error) -> BenchError + '_ {
    move |e| BenchError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn core(context: &str) -> impl FnOnce(pmc_lstd::Error) -> BenchError + '_ {
    move |source| BenchError::Core {
        context: context.to_string(),
        source,
    }
}

fn apply_solver_flags(cfg: &mut ExperimentConfig, flags: &SolverFlags) {
    if let Some(tol) = flags.tol {
        cfg.tol = tol;
    }
    if let Some(max_iters) = flags.max_iters {
        cfg.max_iters = max_iters;
    }
}

fn run(command: Command) -> Result<(), BenchError> {
    match command {
        Command::Chainwalk {
            config,
            out,
            seed,
            trials,
            workers,
            weights_out,
            quiet,
            solver,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            apply_solver_flags(&mut cfg, &solver);
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(trials) = trials {
                cfg.trials = trials;
            }
            if let Some(workers) = workers {
                cfg.workers = workers;
            }
            let out = out
                .or_else(|| cfg.output.as_ref().map(PathBuf::from))
                .ok_or_else(|| BenchError::Io {
                    path: config.display().to_string(),
                    message: "no output path (set `output` or pass --out)".into(),
                })?;
            let weights_out = weights_out.or_else(|| cfg.weights_out.as_ref().map(PathBuf::from));
            let output = run_sweep_with_progress(&cfg, |done, total| {
                if !quiet {
                    eprint!("\r{done}/{total} units");
                    if done == total {
                        eprintln!();
                    }
                }
            })?;
            sweep::write_output(&output, &out)?;
            if let Some(path) = weights_out {
                sweep::write_weights(&output.weights, path)?;
            }
            if !quiet {
                for g in output.grid.iter().filter(|g| g.selected) {
                    eprintln!(
                        "{}={} {:<5} nmse={:.6} iters={:.0} {}",
                        cfg.sweep.label(),
                        g.sweep_value,
                        g.method,
                        g.mean_nmse,
                        g.mean_iterations,
                        g.hyperparams
                    );
                }
            }
            Ok(())
        }
        Command::Solve {
            data,
            method,
            mu,
            tau,
            q,
            ridge,
            out,
            solver,
        } => {
            let file = File::open(&data).map_err(io_err(&data))?;
            let dataset = read_dataset(BufReader::new(file))?;
            let op = assemble_operator(&dataset).map_err(core("operator assembly"))?;
            let estimator = match method {
                Method::Lstd => Estimator::Lstd,
                Method::Ridge => Estimator::Ridge { ridge },
                Method::L1 => Estimator::L1 { mu },
                Method::Pmc => Estimator::Pmc {
                    mu,
                    tau: tau_choice(tau),
                    q: q_choice(q),
                },
            };
            let options = solver_options(&solver);
            let est = estimator.estimate(&op, options, None).map_err(core("solve"))?;
            println!("method {method}");
            if let Some((mu, tau, q)) = est.resolved {
                println!("mu {mu}\ntau {tau}\nq {q}");
            }
            println!("iterations {}\nconverged {}", est.iterations, est.converged);
            let nonzero = est.weights.iter().filter(|w| **w != 0.0).count();
            println!("nonzero {nonzero}/{}", est.weights.len());
            match out {
                Some(path) => {
                    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
                    for v in &est.weights {
                        writeln!(w, "{v}").map_err(io_err(&path))?;
                    }
                    w.flush().map_err(io_err(&path))?;
                }
                None => {
                    for v in &est.weights {
                        println!("{v}");
                    }
                }
            }
            if !est.converged {
                eprintln!("warning: solver stopped at the iteration cap before reaching the tolerance");
            }
            Ok(())
        }
        Command::Exact {
            states,
            success_prob,
            gamma,
        } => {
            let model = pmc_lstd::mdp::ChainMdpModel::new(states, success_prob, gamma).map_err(core("chain model"))?;
            let exact = exact_optimal(&model).map_err(core("exact solution"))?;
            println!("state,v_star,q_left,q_right,policy");
            for s in 0..states {
                println!(
                    "{},{},{},{},{}",
                    s + 1,
                    exact.v[s],
                    exact.q[[s, 0]],
                    exact.q[[s, 1]],
                    exact.policy.action(s + 1)
                );
            }
            Ok(())
        }
        Command::Validate { config, seed, solver } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            apply_solver_flags(&mut cfg, &solver);
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            cfg.validate()?;
            println!(
                "config ok: {} values x {} methods x {} trials = {} rows",
                cfg.values.len(),
                cfg.methods.len(),
                cfg.trials,
                cfg.values.len() * cfg.methods.len() * cfg.trials
            );
            let value = cfg.values[0];
            let (m, n_noise) = cfg.point(value);
            let model = chain_model(cfg.gamma)?;
            let exact = exact_optimal(&model).map_err(core("exact solution"))?;
            let (sample_seed, feature_seed) = step_seeds(trial_seed(&cfg, 0), 0);
            let spec = FeatureMapSpec::chain_default(n_noise, feature_seed);
            let batch = sample_batch(&model, m, sample_seed).map_err(core("sampling"))?;
            let data = build_lstd_data(&spec, &batch, &exact.policy, model.gamma()).map_err(core("features"))?;
            let op = assemble_operator(&data).map_err(core("operator assembly"))?;
            println!(
                "trial 0 at {}={value}: m={m} n={} rank={} ||A||={:.6} lambda_min_pp={:.6e}",
                cfg.sweep.label(),
                spec.dim(),
                op.rank,
                op.spectral_norm_a,
                op.lambda_min_pp
            );
            let options = SolverOptions {
                stop: StopRule {
                    tolerance: cfg.tol,
                    max_iterations: cfg.max_iters,
                },
                epsilon: cfg.epsilon,
            };
            for point in grid_points(&cfg) {
                match point
                    .estimator
                    .config(&op, options)
                    .map_err(core("solver configuration"))?
                {
                    Some(c) => println!(
                        "{:<5} {:<32} tau={:.6e} q={} alpha={:.6e} beta={:.6} eta={:.6} epsilon={:.6}",
                        point.method.label(),
                        point.label,
                        c.tau,
                        c.q,
                        c.alpha,
                        c.beta(&op),
                        c.schedule.eta(0),
                        c.schedule.epsilon
                    ),
                    None => println!("{:<5} {:<32} closed form", point.method.label(), point.label),
                }
            }
            Ok(())
        }
        Command::Dataset {
            m,
            noise,
            seed,
            gamma,
            out,
        } => {
            let model = chain_model(gamma)?;
            let exact = exact_optimal(&model).map_err(core("exact solution"))?;
            let (sample_seed, feature_seed) = step_seeds(seed, 0);
            let spec = FeatureMapSpec::chain_default(noise, feature_seed);
            let batch = sample_batch(&model, m, sample_seed).map_err(core("sampling"))?;
            let data = build_lstd_data(&spec, &batch, &exact.policy, gamma).map_err(core("features"))?;
            let file = File::create(&out).map_err(io_err(&out))?;
            write_dataset(&data, BufWriter::new(file)).map_err(io_err(&out))
        }
    }
}

fn tau_choice(tau: TauSpec) -> TauChoice {
    match tau {
        TauSpec::Fixed(t) => TauChoice::Fixed(t),
        TauSpec::Smallest => TauChoice::Smallest,
    }
}

fn q_choice(q: QSpec) -> SubspaceChoice {
    match q {
        QSpec::Auto => SubspaceChoice::Rank,
        QSpec::Fixed(q) => SubspaceChoice::Fixed(q),
    }
}

fn solver_options(flags: &SolverFlags) -> SolverOptions {
    let default = StopRule::default();
    SolverOptions {
        stop: StopRule {
            tolerance: flags.tol.unwrap_or(default.tolerance),
            max_iterations: flags.max_iters.unwrap_or(default.max_iterations),
        },
        epsilon: None,
    }
}
