//! Forward-reflected-backward splitting for `0 ∈ (A + B)(x)`.
//!
//! `A` is maximally ρ-monotone (ρ may be negative) and is accessed only through its
//! resolvent `J_{ηA} = (Id + ηA)⁻¹`; `B` is single-valued, monotone and
//! `L_B`-Lipschitz. The iteration is
//!
//! ```text
//! x_{k+1} = J_{η_k A}[x_k − η_k B(x_k) − η_{k−1}(B(x_k) − B(x_{k−1}))]
//! ```
//!
//! with `η_k ∈ [ε, (1 − 2ε)/(2 L_B)]`, `ε ∈ (0, 1/(2(L_B + 1))]` and
//! `1 + η_k ρ > 0` so that every resolvent is single-valued.

use std::fmt;

use ndarray::{Array1, ArrayView1, Zip};
use thiserror::Error;

use crate::error::{check_dim, Error, Result};
use crate::linalg::all_finite;

/// The set-valued part `A`, exposed through its resolvent.
pub trait ResolventOperator {
    /// Monotonicity modulus ρ: `A − ρ Id` is maximally monotone.
    fn modulus(&self) -> f64;

    /// `J_{step·A}(point)`. Only called with `1 + step·ρ > 0`.
    fn resolvent(&self, step: f64, point: ArrayView1<f64>) -> Array1<f64>;
}

/// The single-valued monotone Lipschitz part `B`.
pub trait LipschitzMonotoneMap {
    fn lipschitz_bound(&self) -> f64;

    fn apply(&self, x: ArrayView1<f64>) -> Array1<f64>;
}

/// Closure-backed [`ResolventOperator`].
pub struct FnResolvent<F> {
    pub modulus: f64,
    pub map: F,
}

impl<F> ResolventOperator for FnResolvent<F>
where
    F: Fn(f64, ArrayView1<f64>) -> Array1<f64>,
{
    fn modulus(&self) -> f64 {
        self.modulus
    }

    fn resolvent(&self, step: f64, point: ArrayView1<f64>) -> Array1<f64> {
        (self.map)(step, point)
    }
}

/// Closure-backed [`LipschitzMonotoneMap`].
pub struct FnMonotone<F> {
    pub lipschitz: f64,
    pub map: F,
}

impl<F> LipschitzMonotoneMap for FnMonotone<F>
where
    F: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    fn lipschitz_bound(&self) -> f64 {
        self.lipschitz
    }

    fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        (self.map)(x)
    }
}

/// The zero operator: `J_{ηA} = Id`, ρ = 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroOperator;

impl ResolventOperator for ZeroOperator {
    fn modulus(&self) -> f64 {
        0.0
    }

    fn resolvent(&self, _step: f64, point: ArrayView1<f64>) -> Array1<f64> {
        point.to_owned()
    }
}

/// `A = weight·∂‖·‖₁ − Id`, maximally (−1)-monotone.
#[derive(Debug, Clone, Copy)]
pub struct ScaledL1MinusIdentity {
    pub weight: f64,
}

impl ResolventOperator for ScaledL1MinusIdentity {
    fn modulus(&self) -> f64 {
        -1.0
    }

    fn resolvent(&self, step: f64, point: ArrayView1<f64>) -> Array1<f64> {
        debug_assert!(step > 0.0 && step < 1.0);
        crate::prox::l1_minus_id_resolvent_raw(point, step, self.weight)
    }
}

/// Step sizes `η_k` of the FRBS iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum Steps {
    Constant(f64),
    /// `η_k` for `k < len`; the last entry is held for every later `k`.
    Sequence(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    pub epsilon: f64,
    pub steps: Steps,
}

impl StepSchedule {
    /// The largest admissible constant schedule for a given Lipschitz bound:
    /// `ε = 1/(2(L_B + 1))` and `η ≡ (1 − 2ε)/(2L_B)`, which coincide.
    pub fn default_for(lipschitz: f64) -> Self {
        let epsilon = 1.0 / (2.0 * (lipschitz + 1.0));
        let eta = (1.0 - 2.0 * epsilon) / (2.0 * lipschitz);
        Self {
            epsilon,
            steps: Steps::Constant(eta),
        }
    }

    pub fn constant(epsilon: f64, eta: f64) -> Self {
        Self {
            epsilon,
            steps: Steps::Constant(eta),
        }
    }

    /// `η_k`; for `k = −1` (the reflection term of the first step) `η_0` is used.
    pub fn eta(&self, k: isize) -> f64 {
        match &self.steps {
            Steps::Constant(eta) => *eta,
            Steps::Sequence(v) => {
                let idx = k.max(0) as usize;
                v[idx.min(v.len() - 1)]
            }
        }
    }

    fn listed(&self) -> &[f64] {
        match &self.steps {
            Steps::Constant(eta) => std::slice::from_ref(eta),
            Steps::Sequence(v) => v,
        }
    }
}

/// First failed admissibility condition of a step schedule.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleViolation {
    #[error("Lipschitz bound L_B = {0} must be positive")]
    NonPositiveLipschitz(f64),
    #[error("ε = {0} must be positive")]
    NonPositiveEpsilon(f64),
    #[error("ε = {epsilon} exceeds 1/(2(L_B+1)) = {bound}")]
    EpsilonTooLarge { epsilon: f64, bound: f64 },
    #[error("step schedule is empty")]
    Empty,
    #[error("η_{index} = {eta} is below ε = {epsilon}")]
    StepBelowEpsilon { index: usize, eta: f64, epsilon: f64 },
    #[error("η_{index} = {eta} exceeds (1−2ε)/(2L_B) = {bound}")]
    StepTooLarge { index: usize, eta: f64, bound: f64 },
    #[error("η_{index} = {eta} violates 1 + ηρ > 0 for ρ = {rho}; the resolvent is not single-valued")]
    ResolventIllPosed { index: usize, eta: f64, rho: f64 },
}

/// Checks the step conditions; the first failure is reported.
pub fn validate_step_schedule(rho: f64, lipschitz: f64, schedule: &StepSchedule) -> Result<(), ScheduleViolation> {
    if !(lipschitz > 0.0) {
        return Err(ScheduleViolation::NonPositiveLipschitz(lipschitz));
    }
    let eps = schedule.epsilon;
    if !(eps > 0.0) {
        return Err(ScheduleViolation::NonPositiveEpsilon(eps));
    }
    let eps_bound = 1.0 / (2.0 * (lipschitz + 1.0));
    if eps > eps_bound {
        return Err(ScheduleViolation::EpsilonTooLarge {
            epsilon: eps,
            bound: eps_bound,
        });
    }
    let upper = (1.0 - 2.0 * eps) / (2.0 * lipschitz);
    let steps = schedule.listed();
    if steps.is_empty() {
        return Err(ScheduleViolation::Empty);
    }
    for (index, &eta) in steps.iter().enumerate() {
        // Both bounds coincide at the default schedule; allow rounding at the edge.
        let slack = 4.0 * f64::EPSILON * upper.abs().max(eps);
        if !(eta >= eps - slack) {
            return Err(ScheduleViolation::StepBelowEpsilon {
                index,
                eta,
                epsilon: eps,
            });
        }
        if !(eta <= upper + slack) {
            return Err(ScheduleViolation::StepTooLarge {
                index,
                eta,
                bound: upper,
            });
        }
        if !(1.0 + eta * rho > 0.0) {
            return Err(ScheduleViolation::ResolventIllPosed { index, eta, rho });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Array1<f64>,
    pub iterations: usize,
    /// Relative fixed-point residual of every iteration, in order.
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

impl SolveReport {
    pub fn final_residual(&self) -> Option<f64> {
        self.residual_history.last().copied()
    }
}

impl fmt::Display for SolveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} after {} iterations (residual {:.3e})",
            if self.converged { "converged" } else { "not converged" },
            self.iterations,
            self.final_residual().unwrap_or(f64::NAN)
        )
    }
}

/// `‖x_next − x_prev‖₂ / max(1, ‖x_prev‖₂)`.
pub fn fixed_point_residual(x_prev: ArrayView1<f64>, x_next: ArrayView1<f64>) -> Result<f64> {
    check_dim(x_prev.len(), x_next.len(), "fixed_point_residual")?;
    Ok(relative_step(x_prev, x_next))
}

fn relative_step(x_prev: ArrayView1<f64>, x_next: ArrayView1<f64>) -> f64 {
    let mut diff = 0.0;
    let mut base = 0.0;
    Zip::from(&x_prev).and(&x_next).for_each(|&p, &n| {
        diff += (n - p) * (n - p);
        base += p * p;
    });
    diff.sqrt() / base.sqrt().max(1.0)
}

/// Runs FRBS from `(x_{−1}, x_0) = (x_init_prev, x_init)`.
///
/// Stops when the relative fixed-point residual falls to `stop.tolerance`; after
/// `stop.max_iterations` the last iterate is returned with `converged = false`.
pub fn frbs_solve<A, B>(
    a: &A,
    b: &B,
    x_init_prev: ArrayView1<f64>,
    x_init: ArrayView1<f64>,
    schedule: &StepSchedule,
    stop: &StopRule,
) -> Result<SolveReport>
where
    A: ResolventOperator + ?Sized,
    B: LipschitzMonotoneMap + ?Sized,
{
    check_dim(x_init.len(), x_init_prev.len(), "frbs_solve: initial points")?;
    validate_step_schedule(a.modulus(), b.lipschitz_bound(), schedule)?;

    let mut x = x_init.to_owned();
    let mut b_prev = b.apply(x_init_prev);
    check_dim(x.len(), b_prev.len(), "frbs_solve: B output")?;
    if !all_finite(x.view()) || !all_finite(b_prev.view()) {
        return Err(Error::NonFinite { iteration: 0 });
    }

    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut step_point = Array1::zeros(x.len());
    for k in 0..stop.max_iterations {
        let eta = schedule.eta(k as isize);
        let eta_prev = schedule.eta(k as isize - 1);
        let b_cur = b.apply(x.view());
        Zip::from(&mut step_point)
            .and(&x)
            .and(&b_cur)
            .and(&b_prev)
            .for_each(|z, &xk, &bk, &bp| *z = xk - eta * bk - eta_prev * (bk - bp));
        let x_next = a.resolvent(eta, step_point.view());
        iterations = k + 1;
        if !all_finite(x_next.view()) {
            return Err(Error::NonFinite { iteration: iterations });
        }
        let residual = relative_step(x.view(), x_next.view());
        history.push(residual);
        x = x_next;
        b_prev = b_cur;
        if residual <= stop.tolerance {
            converged = true;
            break;
        }
    }
    Ok(SolveReport {
        solution: x,
        iterations,
        residual_history: history,
        converged,
    })
}
