//! Approximate policy iteration with sampled LSTD-type evaluation.
//!
//! Every iteration collects a fresh batch, evaluates the current policy with an
//! [`Estimator`], extends the estimate to all pairs through the feature map (noise
//! at its mean) and improves greedily. Exact oracles on the known kernel provide
//! the suboptimality diagnostics `δ₁`, `δ₂` and `‖Q̂ − Q*‖∞`.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::features::{build_lstd_data, q_table, FeatureMapSpec};
use crate::lstd::{assemble_operator, Estimator, SolverOptions};
use crate::mdp::{
    apply_optimal_operator, apply_policy_operator, exact_optimal, exact_q_policy, sample_batch, Action, ChainMdpModel,
    ExactSolution, Policy,
};
use crate::rng::derive_seed;

pub use crate::mdp::greedy_policy;

/// Per-iteration suboptimality diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PiDiagnostics {
    /// `‖Q̂^{π_k} − Q^{π_k}‖∞`.
    pub delta1: Vec<f64>,
    /// `‖T_{π_{k+1}} Q̂^{π_k} − T_* Q̂^{π_k}‖∞`.
    pub delta2: Vec<f64>,
    /// `‖Q̂^{π_k} − Q*‖∞`.
    pub sup_gap: Vec<f64>,
}

impl PiDiagnostics {
    pub fn len(&self) -> usize {
        self.sup_gap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sup_gap.is_empty()
    }

    /// Records iteration `k` given its estimate, the policy it evaluated and the
    /// improved policy.
    pub fn record(
        &mut self,
        model: &ChainMdpModel,
        optimal: &ExactSolution,
        q_hat: ArrayView2<f64>,
        evaluated: &Policy,
        improved: &Policy,
    ) -> Result<()> {
        let exact = exact_q_policy(model, evaluated)?;
        self.delta1.push(sup_dist(q_hat, exact.q.view()));
        let t_pi = apply_policy_operator(model, improved, q_hat);
        let t_star = apply_optimal_operator(model, q_hat);
        self.delta2.push(sup_dist(t_pi.view(), t_star.view()));
        self.sup_gap.push(sup_dist(q_hat, optimal.q.view()));
        Ok(())
    }
}

fn sup_dist(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Knobs of an approximate policy-iteration run.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiSettings {
    pub samples_per_iteration: usize,
    pub iterations: usize,
    pub seed: u64,
    /// `π_0`; all-`left` when absent.
    pub initial_policy: Option<Policy>,
    pub solver: SolverOptions,
}

impl ApiSettings {
    pub fn new(samples_per_iteration: usize, iterations: usize, seed: u64) -> Self {
        Self {
            samples_per_iteration,
            iterations,
            seed,
            initial_policy: None,
            solver: SolverOptions::default(),
        }
    }
}

/// Outcome of a single sampled evaluation of a fixed policy.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    pub weights: Array1<f64>,
    /// `Q̂(s, a) = ŵᵀφ(s, a)` with noise at its mean.
    pub q_hat: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Seeds for the batch and the feature noise of evaluation step `k` of a run.
pub fn step_seeds(run_seed: u64, k: usize) -> (u64, u64) {
    (
        derive_seed(run_seed, 2 * k as u64),
        derive_seed(run_seed, 2 * k as u64 + 1),
    )
}

/// Samples `m` transitions, builds the LSTD system for `policy` and evaluates it.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy(
    model: &ChainMdpModel,
    spec: &FeatureMapSpec,
    estimator: &Estimator,
    policy: &Policy,
    m: usize,
    sample_seed: u64,
    feature_seed: u64,
    solver: impl Into<SolverOptions>,
) -> Result<PolicyEvaluation> {
    let batch = sample_batch(model, m, sample_seed)?;
    let data = build_lstd_data(&spec.with_seed(feature_seed), &batch, policy, model.gamma())?;
    let op = assemble_operator(&data)?;
    let est = estimator.estimate(&op, solver, None)?;
    let q_hat = q_table(spec, &est.weights)?;
    Ok(PolicyEvaluation {
        weights: est.weights,
        q_hat,
        iterations: est.iterations,
        converged: est.converged,
    })
}

#[derive(Debug, Clone)]
pub struct ApiRun {
    /// `π_0, …, π_K`.
    pub policies: Vec<Policy>,
    /// `ŵ_0, …, ŵ_{K−1}`.
    pub weights: Vec<Array1<f64>>,
    pub q_estimates: Vec<Array2<f64>>,
    pub solver_iterations: Vec<usize>,
    /// Whether each evaluation's solver met its tolerance. Non-convergence is
    /// recorded, not fatal.
    pub solver_converged: Vec<bool>,
    pub diagnostics: PiDiagnostics,
}

impl ApiRun {
    pub fn final_policy(&self) -> &Policy {
        self.policies.last().expect("at least π_0")
    }

    pub fn final_q(&self) -> &Array2<f64> {
        self.q_estimates.last().expect("at least one iteration")
    }
}

/// Approximate policy iteration for `settings.iterations` steps.
pub fn approximate_policy_iteration(
    model: &ChainMdpModel,
    spec: &FeatureMapSpec,
    estimator: &Estimator,
    settings: &ApiSettings,
) -> Result<ApiRun> {
    if settings.iterations == 0 {
        return Err(Error::Precondition("approximate policy iteration needs K ≥ 1".into()));
    }
    if settings.samples_per_iteration == 0 {
        return Err(Error::Precondition(
            "approximate policy iteration needs m ≥ 1 samples".into(),
        ));
    }
    if spec.n_states != model.n_states() {
        return Err(Error::Precondition(format!(
            "feature map covers {} states, model has {}",
            spec.n_states,
            model.n_states()
        )));
    }
    let optimal = exact_optimal(model)?;
    let mut policy = settings
        .initial_policy
        .clone()
        .unwrap_or_else(|| Policy::uniform(model.n_states(), Action::Left));
    if policy.n_states() != model.n_states() {
        return Err(Error::Precondition("initial policy does not match the model".into()));
    }

    let mut run = ApiRun {
        policies: vec![policy.clone()],
        weights: Vec::with_capacity(settings.iterations),
        q_estimates: Vec::with_capacity(settings.iterations),
        solver_iterations: Vec::with_capacity(settings.iterations),
        solver_converged: Vec::with_capacity(settings.iterations),
        diagnostics: PiDiagnostics::default(),
    };
    for k in 0..settings.iterations {
        let (sample_seed, feature_seed) = step_seeds(settings.seed, k);
        let eval = evaluate_policy(
            model,
            spec,
            estimator,
            &policy,
            settings.samples_per_iteration,
            sample_seed,
            feature_seed,
            settings.solver,
        )?;
        let improved = greedy_policy(eval.q_hat.view());
        run.diagnostics
            .record(model, &optimal, eval.q_hat.view(), &policy, &improved)?;
        run.weights.push(eval.weights);
        run.q_estimates.push(eval.q_hat);
        run.solver_iterations.push(eval.iterations);
        run.solver_converged.push(eval.converged);
        run.policies.push(improved.clone());
        policy = improved;
    }
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub delta1: f64,
    pub delta2: f64,
    /// Largest `‖Q̂^{π_k} − Q*‖∞` over the last quarter of the iterations.
    pub measured_limsup: f64,
    /// `(2γδ₁ + δ₂) / (1 − γ)²`.
    pub bound: f64,
    pub holds: bool,
}

/// Absolute slack of the bound comparison.
pub const BOUND_TOLERANCE: f64 = 1e-9;

/// Compares the tail suboptimality with `(2γδ₁ + δ₂)/(1 − γ)²`, taking `δ₁`, `δ₂`
/// as the maxima over the recorded window.
pub fn pi_bound_check(diag: &PiDiagnostics, gamma: f64) -> Result<BoundCheck> {
    if diag.is_empty() {
        return Err(Error::Precondition("no policy-iteration diagnostics recorded".into()));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidParameter {
            name: "gamma",
            value: gamma,
            reason: "must lie in [0, 1)",
        });
    }
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let delta1 = max(&diag.delta1);
    let delta2 = max(&diag.delta2);
    let window = diag.len().div_ceil(4);
    let measured_limsup = max(&diag.sup_gap[diag.len() - window..]);
    let bound = (2.0 * gamma * delta1 + delta2) / ((1.0 - gamma) * (1.0 - gamma));
    Ok(BoundCheck {
        delta1,
        delta2,
        measured_limsup,
        bound,
        holds: measured_limsup <= bound + BOUND_TOLERANCE,
    })
}
