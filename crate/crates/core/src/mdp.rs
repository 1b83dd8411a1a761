//! The chain-walk benchmark and exact Bellman solvers.
//!
//! States are numbered `1..=n_states`. Payoffs follow the cost convention used by
//! every solver in the crate: the benchmark's reward of 1 at both end states is
//! stored as a payoff of −1, and policies minimize.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::lu_solve;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Left, Action::Right];

    pub fn index(self) -> usize {
        match self {
            Action::Left => 0,
            Action::Right => 1,
        }
    }

    pub fn opposite(self) -> Action {
        match self {
            Action::Left => Action::Right,
            Action::Right => Action::Left,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Action::Left => "left",
            Action::Right => "right",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Deterministic stationary policy, one action per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy(Vec<Action>);

impl Policy {
    pub fn new(actions: Vec<Action>) -> Self {
        Self(actions)
    }

    pub fn uniform(n_states: usize, action: Action) -> Self {
        Self(vec![action; n_states])
    }

    /// Action in state `s` (1-based).
    pub fn action(&self, s: usize) -> Action {
        self.0[s - 1]
    }

    pub fn actions(&self) -> &[Action] {
        &self.0
    }

    pub fn n_states(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(match a {
                Action::Left => "L",
                Action::Right => "R",
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainMdpModel {
    n_states: usize,
    success_prob: f64,
    gamma: f64,
    /// `n_states × 2`, cost convention.
    payoff: Array2<f64>,
}

impl ChainMdpModel {
    /// Chain with reward 1 (payoff −1) at both end states and 0 elsewhere.
    pub fn new(n_states: usize, success_prob: f64, gamma: f64) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::Precondition("chain needs at least one state".into()));
        }
        let mut payoff = Array2::zeros((n_states, 2));
        payoff.row_mut(0).fill(-1.0);
        payoff.row_mut(n_states - 1).fill(-1.0);
        Self::with_payoff(n_states, success_prob, gamma, payoff)
    }

    /// The 20-state benchmark: success probability 0.9, discount 0.9.
    pub fn benchmark() -> Self {
        Self::new(20, 0.9, 0.9).expect("benchmark parameters are valid")
    }

    pub fn with_payoff(n_states: usize, success_prob: f64, gamma: f64, payoff: Array2<f64>) -> Result<Self> {
        if !(success_prob > 0.0 && success_prob < 1.0) {
            return Err(Error::InvalidParameter {
                name: "success_prob",
                value: success_prob,
                reason: "must lie in (0, 1)",
            });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                value: gamma,
                reason: "must lie in [0, 1)",
            });
        }
        if payoff.dim() != (n_states, 2) {
            return Err(Error::Precondition(format!(
                "payoff table must be {n_states}×2, got {:?}",
                payoff.dim()
            )));
        }
        Ok(Self {
            n_states,
            success_prob,
            gamma,
            payoff,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn success_prob(&self) -> f64 {
        self.success_prob
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn payoff(&self, s: usize, a: Action) -> f64 {
        self.payoff[[s - 1, a.index()]]
    }

    pub fn payoff_table(&self) -> ArrayView2<'_, f64> {
        self.payoff.view()
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if (1..=self.n_states).contains(&s) {
            Ok(())
        } else {
            Err(Error::StateOutOfRange {
                state: s,
                n_states: self.n_states,
            })
        }
    }

    fn step(&self, s: usize, dir: Action) -> usize {
        match dir {
            Action::Left => s.saturating_sub(1).max(1),
            Action::Right => (s + 1).min(self.n_states),
        }
    }

    /// Successor distribution without range checks, at most two entries.
    fn successors(&self, s: usize, a: Action) -> [(usize, f64); 2] {
        [
            (self.step(s, a), self.success_prob),
            (self.step(s, a.opposite()), 1.0 - self.success_prob),
        ]
    }
}

/// Successor distribution of `(s, a)` as `(state, probability)` pairs with
/// distinct states. Moves past either end keep the agent in place.
pub fn chain_transition(s: usize, a: Action, model: &ChainMdpModel) -> Result<Vec<(usize, f64)>> {
    model.check_state(s)?;
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(2);
    for (next, p) in model.successors(s, a) {
        match out.iter_mut().find(|(st, _)| *st == next) {
            Some(entry) => entry.1 += p,
            None => out.push((next, p)),
        }
    }
    Ok(out)
}

/// Exact `Q`, `V` and policy of a chain model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    /// `n_states × 2`, columns ordered `left, right`.
    pub q: Array2<f64>,
    pub v: Array1<f64>,
    pub policy: Policy,
}

fn pair_index(s: usize, a: Action) -> usize {
    2 * (s - 1) + a.index()
}

fn check_policy(model: &ChainMdpModel, policy: &Policy) -> Result<()> {
    if policy.n_states() != model.n_states {
        return Err(Error::Precondition(format!(
            "policy covers {} states, model has {}",
            policy.n_states(),
            model.n_states
        )));
    }
    Ok(())
}

/// `(T_π Q)(s, a) = g(s, a) + γ E[Q(s', π(s'))]`.
pub fn apply_policy_operator(model: &ChainMdpModel, policy: &Policy, q: ArrayView2<f64>) -> Array2<f64> {
    backup(model, q, |s| q[[s - 1, policy.action(s).index()]])
}

/// `(T_* Q)(s, a) = g(s, a) + γ E[min_a' Q(s', a')]`.
pub fn apply_optimal_operator(model: &ChainMdpModel, q: ArrayView2<f64>) -> Array2<f64> {
    backup(model, q, |s| q[[s - 1, 0]].min(q[[s - 1, 1]]))
}

fn backup(model: &ChainMdpModel, q: ArrayView2<f64>, next_value: impl Fn(usize) -> f64) -> Array2<f64> {
    debug_assert_eq!(q.dim(), (model.n_states, 2));
    Array2::from_shape_fn((model.n_states, 2), |(i, ai)| {
        let s = i + 1;
        let a = Action::ALL[ai];
        let expect: f64 = model.successors(s, a).iter().map(|&(n, p)| p * next_value(n)).sum();
        model.payoff(s, a) + model.gamma * expect
    })
}

/// Solves `Q = g + γ P_π Q` exactly; `V(s) = Q(s, π(s))`.
pub fn exact_q_policy(model: &ChainMdpModel, policy: &Policy) -> Result<ExactSolution> {
    check_policy(model, policy)?;
    let n = model.n_states;
    let dim = 2 * n;
    let mut sys = Array2::<f64>::eye(dim);
    let mut rhs = Array1::zeros(dim);
    for s in 1..=n {
        for a in Action::ALL {
            let row = pair_index(s, a);
            rhs[row] = model.payoff(s, a);
            for (next, p) in model.successors(s, a) {
                sys[[row, pair_index(next, policy.action(next))]] -= model.gamma * p;
            }
        }
    }
    let flat = lu_solve(sys.view(), rhs.view(), "policy evaluation equations")?;
    let q = flat.into_shape_with_order((n, 2)).expect("2n entries");
    let v = Array1::from_shape_fn(n, |i| q[[i, policy.action(i + 1).index()]]);
    Ok(ExactSolution {
        q,
        v,
        policy: policy.clone(),
    })
}

/// Per state, the cost-minimizing action; ties go to `left`.
pub fn greedy_policy(q: ArrayView2<f64>) -> Policy {
    Policy(
        q.rows()
            .into_iter()
            .map(|row| if row[1] < row[0] { Action::Right } else { Action::Left })
            .collect(),
    )
}

/// Exact policy iteration on the known kernel, started from all-`left`.
pub fn exact_optimal(model: &ChainMdpModel) -> Result<ExactSolution> {
    let mut policy = Policy::uniform(model.n_states, Action::Left);
    // Finite MDP with γ < 1: terminates in at most |A|^|S| improvements, far
    // fewer in practice.
    loop {
        let sol = exact_q_policy(model, &policy)?;
        let improved = greedy_policy(sol.q.view());
        let stable = improved
            .actions()
            .iter()
            .zip(policy.actions())
            .enumerate()
            .all(|(i, (new, old))| new == old || sol.q[[i, new.index()]] >= sol.q[[i, old.index()]]);
        if stable {
            let v = Array1::from_shape_fn(model.n_states, |i| sol.q[[i, 0]].min(sol.q[[i, 1]]));
            let policy = greedy_policy(sol.q.view());
            return Ok(ExactSolution { q: sol.q, v, policy });
        }
        policy = improved;
    }
}

/// `‖Q − T_π Q‖∞`.
pub fn bellman_residual(model: &ChainMdpModel, policy: &Policy, q: ArrayView2<f64>) -> f64 {
    let tq = apply_policy_operator(model, policy, q);
    (&tq - &q).iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Sampled transitions `(s_i, a_i, g_i, s'_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub states: Vec<usize>,
    pub actions: Vec<Action>,
    pub payoffs: Vec<f64>,
    pub next_states: Vec<usize>,
    pub rng_seed: u64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// `m` i.i.d. draws: `(s, a)` uniform over all pairs, payoff `g(s, a)`, successor
/// from the chain kernel. Deterministic in `seed` (stream [`rng::STREAM_SAMPLES`]).
pub fn sample_batch(model: &ChainMdpModel, m: usize, seed: u64) -> Result<SampleBatch> {
    if m == 0 {
        return Err(Error::Precondition("sample batch needs m ≥ 1".into()));
    }
    let mut rng = rng::stream(seed, rng::STREAM_SAMPLES);
    let mut batch = SampleBatch {
        states: Vec::with_capacity(m),
        actions: Vec::with_capacity(m),
        payoffs: Vec::with_capacity(m),
        next_states: Vec::with_capacity(m),
        rng_seed: seed,
    };
    for _ in 0..m {
        let s = rng.random_range(1..=model.n_states);
        let a = if rng.random_bool(0.5) {
            Action::Right
        } else {
            Action::Left
        };
        let u: f64 = rng.random();
        let dir = if u < model.success_prob { a } else { a.opposite() };
        batch.states.push(s);
        batch.actions.push(a);
        batch.payoffs.push(model.payoff(s, a));
        batch.next_states.push(model.step(s, dir));
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prob_of(dist: &[(usize, f64)], s: usize) -> f64 {
        dist.iter().filter(|(st, _)| *st == s).map(|(_, p)| p).sum()
    }

    #[test]
    fn transition_examples() {
        let m = ChainMdpModel::benchmark();
        let d = chain_transition(5, Action::Left, &m).unwrap();
        assert!((prob_of(&d, 4) - 0.9).abs() < 1e-15 && (prob_of(&d, 6) - 0.1).abs() < 1e-15);
        let d = chain_transition(1, Action::Left, &m).unwrap();
        assert!((prob_of(&d, 1) - 0.9).abs() < 1e-15 && (prob_of(&d, 2) - 0.1).abs() < 1e-15);
        let d = chain_transition(20, Action::Right, &m).unwrap();
        assert!((prob_of(&d, 20) - 0.9).abs() < 1e-15 && (prob_of(&d, 19) - 0.1).abs() < 1e-15);
        assert!(chain_transition(0, Action::Left, &m).is_err());
        assert!(chain_transition(21, Action::Left, &m).is_err());
    }

    #[test]
    fn distributions_sum_to_one_on_two_states() {
        for model in [ChainMdpModel::benchmark(), ChainMdpModel::new(1, 0.7, 0.5).unwrap()] {
            for s in 1..=model.n_states() {
                for a in Action::ALL {
                    let d = chain_transition(s, a, &model).unwrap();
                    assert!(d.len() <= 2);
                    assert!((d.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_state_geometric_series() {
        let model = ChainMdpModel::with_payoff(1, 0.9, 0.9, Array2::ones((1, 2))).unwrap();
        let sol = exact_q_policy(&model, &Policy::uniform(1, Action::Left)).unwrap();
        assert!(sol.q.iter().all(|&q| (q - 10.0).abs() < 1e-10));
    }

    #[test]
    fn myopic_q_equals_payoff() {
        let model = ChainMdpModel::new(20, 0.9, 0.0).unwrap();
        let sol = exact_q_policy(&model, &Policy::uniform(20, Action::Right)).unwrap();
        assert_eq!(sol.q, model.payoff_table().to_owned());
    }

    #[test]
    fn policy_solution_satisfies_bellman() {
        let model = ChainMdpModel::benchmark();
        let pol = Policy::new(
            (0..20)
                .map(|i| if i % 3 == 0 { Action::Right } else { Action::Left })
                .collect(),
        );
        let sol = exact_q_policy(&model, &pol).unwrap();
        assert!(bellman_residual(&model, &pol, sol.q.view()) <= 1e-10);
        assert!(exact_q_policy(&model, &Policy::uniform(5, Action::Left)).is_err());
    }

    #[test]
    fn optimal_policy_of_benchmark() {
        let model = ChainMdpModel::benchmark();
        let sol = exact_optimal(&model).unwrap();
        for s in 1..=20 {
            let expect = if s <= 10 { Action::Left } else { Action::Right };
            assert_eq!(sol.policy.action(s), expect, "state {s}");
        }
        for s in 1..=20 {
            assert!((sol.v[s - 1] - sol.v[20 - s]).abs() <= 1e-10);
            // reward sense: −V* > 0
            assert!(sol.v[s - 1] < 0.0);
        }
        assert!(bellman_residual(&model, &sol.policy, sol.q.view()) <= 1e-10);
        assert_eq!(greedy_policy(sol.q.view()), sol.policy);
    }

    #[test]
    fn greedy_examples() {
        let q = ndarray::array![[1.0, 2.0], [3.0, 3.0], [2.0, 1.0]];
        let p = greedy_policy(q.view());
        assert_eq!(p.actions(), &[Action::Left, Action::Left, Action::Right]);
    }

    #[test]
    fn sampling_is_deterministic_and_valid() {
        let model = ChainMdpModel::benchmark();
        let a = sample_batch(&model, 4, 99).unwrap();
        let b = sample_batch(&model, 4, 99).unwrap();
        assert_eq!(a, b);
        let one = sample_batch(&model, 1, 3).unwrap();
        assert_eq!(one.len(), 1);
        assert!((1..=20).contains(&one.states[0]) && (1..=20).contains(&one.next_states[0]));
        assert_eq!(one.payoffs[0], model.payoff(one.states[0], one.actions[0]));
        assert!(sample_batch(&model, 0, 3).is_err());
    }
}
