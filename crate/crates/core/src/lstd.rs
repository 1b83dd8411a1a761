//! LSTD with the PMC penalty.
//!
//! Given samples `Φ` (features of the visited pairs), `Φ'` (features of the
//! successor pairs under the evaluated policy), payoffs `g` and discount `γ`, the
//! regularized fixed point
//!
//! ```text
//! w ∈ argmin_u ½‖Φu − (g + γΦ'w)‖² + μ Ψ_PMC(u)
//! ```
//!
//! is characterized by `0 ∈ T(w) + μ∂‖w‖₁` with
//! `T(w) = Ãw − b̃ − (μ/τ) P_M (p − soft_τ(p))`, `p = P_M w`, where
//! `Ã = Φᵀ(Φ − γΦ')`, `b̃ = Φᵀg` and `M` is spanned by the leading `q`
//! eigenvectors of `ΦᵀΦ`. The inclusion is solved as
//! `0 ∈ (αT + Id)(w) + (αμ∂‖·‖₁ − Id)(w)` with FRBS.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Zip};
use thiserror::Error;

use crate::error::{check_dim, Error, Result};
use crate::inclusion::{
    frbs_solve, validate_step_schedule, LipschitzMonotoneMap, ScaledL1MinusIdentity, ScheduleViolation, SolveReport,
    StepSchedule, StopRule,
};
use crate::linalg::{
    col_gram, lu_solve, matmul, matvec, pinv_solve, row_gram, spectral_norm_power, symmetric_eigen_desc, TdProduct,
};
use crate::prox::SubspaceBasis;

/// Relative cutoff (times `n · l_1`) below which a Gram eigenvalue counts as zero.
pub const RANK_TOL_FACTOR: f64 = 1e-12;
const POWER_REL_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 10_000;
// Use the row-streamed product when it touches fewer than this fraction of n² entries.
const STREAM_FRACTION: f64 = 0.8;

/// Sampled LSTD system.
#[derive(Debug, Clone)]
pub struct LstdData {
    phi: Array2<f64>,
    phi_next: Array2<f64>,
    g: Array1<f64>,
    gamma: f64,
}

impl LstdData {
    pub fn new(phi: Array2<f64>, phi_next: Array2<f64>, g: Array1<f64>, gamma: f64) -> Result<Self> {
        check_dim(phi.nrows(), phi_next.nrows(), "LstdData: rows of Φ' vs Φ")?;
        check_dim(phi.ncols(), phi_next.ncols(), "LstdData: columns of Φ' vs Φ")?;
        check_dim(phi.nrows(), g.len(), "LstdData: payoff length vs rows of Φ")?;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                value: gamma,
                reason: "discount must lie in (0, 1)",
            });
        }
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(Error::Precondition(
                "LstdData needs at least one sample and one feature".into(),
            ));
        }
        Ok(Self {
            phi,
            phi_next,
            g,
            gamma,
        })
    }

    pub fn phi(&self) -> ArrayView2<'_, f64> {
        self.phi.view()
    }

    pub fn phi_next(&self) -> ArrayView2<'_, f64> {
        self.phi_next.view()
    }

    pub fn payoffs(&self) -> ArrayView1<'_, f64> {
        self.g.view()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_samples(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.phi.ncols()
    }
}

/// Everything the solvers need from an [`LstdData`], computed once.
///
/// When `n ≤ m` the eigendecomposition is taken of the `n × n` Gram matrix `ΦᵀΦ`
/// and `gram_eigvecs` is a full orthogonal matrix. When `n > m` it is taken of
/// `ΦΦᵀ` instead; only the eigenvectors of the nonzero eigenvalues are
/// materialized (`gram_eigvecs` is `n × rank`) and the remaining eigenvalues are
/// reported as zero.
#[derive(Debug, Clone)]
pub struct LstdOperatorData {
    pub a_tilde: Array2<f64>,
    pub b_tilde: Array1<f64>,
    /// Descending, length `n`.
    pub gram_eigvals: Array1<f64>,
    pub gram_eigvecs: Array2<f64>,
    /// Smallest Gram eigenvalue above the rank cutoff.
    pub lambda_min_pp: f64,
    pub rank: usize,
    /// `‖Ã‖₂`.
    pub spectral_norm_a: f64,
    phi: Array2<f64>,
    td: Array2<f64>,
    g: Array1<f64>,
    /// Row-streamed `Φᵀ(Φ − γΦ')`, kept when it moves less data than `Ã`.
    streamed: Option<TdProduct>,
    /// `Ãᵀ`; row `j` is column `j` of `Ã`.
    a_cols: Array2<f64>,
}

impl LstdOperatorData {
    /// `Ãw`.
    pub fn apply_a(&self, w: ArrayView1<f64>) -> Array1<f64> {
        let n = w.len();
        let dense_cost = self.streamed.as_ref().map_or(n * n, TdProduct::stored);
        let support: Vec<usize> = (0..n).filter(|&j| w[j] != 0.0).collect();
        if support.len() * n < dense_cost {
            let mut out = Array1::zeros(self.a_tilde.nrows());
            for &j in &support {
                out.scaled_add(w[j], &self.a_cols.row(j));
            }
            return out;
        }
        match &self.streamed {
            Some(p) => p.apply(w),
            None => matvec(self.a_tilde.view(), w),
        }
    }

    /// `Ãᵀv`.
    pub fn apply_a_t(&self, v: ArrayView1<f64>) -> Array1<f64> {
        match &self.streamed {
            Some(p) => p.apply_transpose(v),
            None => matvec(self.a_tilde.t(), v),
        }
    }

    pub fn n_features(&self) -> usize {
        self.b_tilde.len()
    }

    /// Rank cutoff applied to the Gram eigenvalues.
    pub fn rank_cutoff(&self) -> f64 {
        rank_cutoff(self.n_features(), self.gram_eigvals[0])
    }

    /// `l_q` (1-based); `l_0` is reported as `+∞`, which makes (C-1) vacuous.
    pub fn eigval(&self, q: usize) -> f64 {
        if q == 0 {
            f64::INFINITY
        } else {
            self.gram_eigvals[q - 1]
        }
    }

    /// Largest admissible `μ/τ` for a given `q`: `max{l_q, λ_min⁺⁺}`.
    pub fn max_mu_over_tau(&self, q: usize) -> f64 {
        self.eigval(q).max(self.lambda_min_pp)
    }

    /// Orthonormal basis of `M = span(V_{1..q})`.
    pub fn subspace_basis(&self, q: usize) -> Result<SubspaceBasis> {
        let n = self.n_features();
        if q > n {
            return Err(Error::Precondition(format!(
                "subspace dimension q = {q} exceeds n = {n}"
            )));
        }
        if q > self.gram_eigvecs.ncols() {
            return Err(Error::Precondition(format!(
                "q = {q} exceeds the numerical rank {} of ΦᵀΦ; null-space eigenvectors are not materialized when n > m",
                self.rank
            )));
        }
        Ok(SubspaceBasis::from_orthonormal_unchecked(
            self.gram_eigvecs.slice(s![.., ..q]).to_owned(),
        ))
    }

    /// The `q` that makes `M = null^⊥ Φ`.
    pub fn full_rank_q(&self) -> usize {
        self.rank
    }
}

fn rank_cutoff(n: usize, top: f64) -> f64 {
    n as f64 * RANK_TOL_FACTOR * top
}

/// Builds `Ã = Φᵀ(Φ − γΦ')`, `b̃ = Φᵀg`, the Gram eigendecomposition and `‖Ã‖₂`.
pub fn assemble_operator(data: &LstdData) -> Result<LstdOperatorData> {
    let (m, n) = data.phi.dim();
    let td = &data.phi - &(data.gamma * &data.phi_next);
    let a_tilde = matmul(data.phi.t(), td.view());
    let b_tilde = matvec(data.phi.t(), data.g.view());

    let (gram_eigvals, gram_eigvecs, rank, lambda_min_pp) = if n <= m {
        let (vals, vecs) = symmetric_eigen_desc(col_gram(data.phi.view()).view())?;
        let vals = vals.mapv(|v| v.max(0.0));
        let top = vals[0];
        let cutoff = rank_cutoff(n, top);
        let rank = vals.iter().take_while(|&&v| v > cutoff).count();
        if top <= 0.0 || rank == 0 {
            return Err(Error::DegenerateFeatures);
        }
        (vals.clone(), vecs, rank, vals[rank - 1])
    } else {
        // Nonzero spectrum of ΦᵀΦ equals that of ΦΦᵀ; v_i = Φᵀu_i / √l_i.
        let (vals, u) = symmetric_eigen_desc(row_gram(data.phi.view()).view())?;
        let top = vals[0].max(0.0);
        let cutoff = rank_cutoff(n, top);
        let rank = vals.iter().take_while(|&&v| v > cutoff).count();
        if top <= 0.0 || rank == 0 {
            return Err(Error::DegenerateFeatures);
        }
        let mut v = matmul(data.phi.t(), u.slice(s![.., ..rank]));
        for (mut col, &l) in v.columns_mut().into_iter().zip(vals.iter()) {
            col /= l.sqrt();
        }
        let mut all = Array1::zeros(n);
        all.slice_mut(s![..rank]).assign(&vals.slice(s![..rank]));
        (all, v, rank, vals[rank - 1])
    };

    let streamed = TdProduct::new(data.phi.view(), data.phi_next.view(), data.gamma);
    let streamed = ((streamed.stored() as f64) < STREAM_FRACTION * (n * n) as f64).then_some(streamed);
    let a_cols = a_tilde.t().as_standard_layout().into_owned();
    let mut op = LstdOperatorData {
        a_tilde,
        a_cols,
        b_tilde,
        gram_eigvals,
        gram_eigvecs,
        lambda_min_pp,
        rank,
        phi: data.phi.clone(),
        td,
        g: data.g.clone(),
        streamed,
        spectral_norm_a: 0.0,
    };
    op.spectral_norm_a = spectral_norm_power(n, |x| op.apply_a(x), |x| op.apply_a_t(x), POWER_REL_TOL, POWER_MAX_ITER);
    Ok(op)
}

/// Tuning of the PMC-LSTD solver.
#[derive(Debug, Clone, PartialEq)]
pub struct PmcSolverConfig {
    pub mu: f64,
    pub tau: f64,
    /// Dimension of `M`; `0` turns the penalty into plain ℓ1.
    pub q: usize,
    pub alpha: f64,
    pub schedule: StepSchedule,
    pub stop: StopRule,
}

impl PmcSolverConfig {
    /// `β = α(‖Ã‖₂ + μ/τ) + 1`, the Lipschitz bound of `αT + Id`.
    pub fn beta(&self, op: &LstdOperatorData) -> f64 {
        self.alpha * (op.spectral_norm_a + self.mu / self.tau) + 1.0
    }
}

/// Reason a [`PmcSolverConfig`] is inadmissible for a given operator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigViolation {
    #[error("μ = {mu} must be nonnegative and τ = {tau} positive")]
    BadRegularization { mu: f64, tau: f64 },
    #[error("q = {q} exceeds the available subspace dimension {max}")]
    SubspaceDimension { q: usize, max: usize },
    #[error("(C-1) violated: μ/τ = {ratio} exceeds max{{l_q, λ_min⁺⁺}} = {max_ratio} (largest admissible μ/τ)")]
    Convexity { ratio: f64, max_ratio: f64 },
    #[error("(C-3) violated: α = {alpha} outside (0, {max_alpha}]")]
    StepScale { alpha: f64, max_alpha: f64 },
    #[error("(C-2) violated: {0}")]
    Schedule(ScheduleViolation),
}

/// Bare form of (C-1): `μ/τ ≤ max{l_q, λ_min⁺⁺}`. `μ = 0` is always admissible.
pub fn check_mu_tau(mu: f64, tau: f64, l_q: f64, lambda_min_pp: f64) -> Result<(), ConfigViolation> {
    if !(mu >= 0.0) || !(tau > 0.0) {
        return Err(ConfigViolation::BadRegularization { mu, tau });
    }
    let ratio = mu / tau;
    let max_ratio = l_q.max(lambda_min_pp);
    if ratio <= max_ratio * (1.0 + 4.0 * f64::EPSILON) {
        Ok(())
    } else {
        Err(ConfigViolation::Convexity { ratio, max_ratio })
    }
}

/// Checks (C-1)–(C-3) of `config` against `op`.
pub fn check_convexity_condition(config: &PmcSolverConfig, op: &LstdOperatorData) -> Result<(), ConfigViolation> {
    let max_q = op.gram_eigvecs.ncols();
    if config.q > max_q {
        return Err(ConfigViolation::SubspaceDimension {
            q: config.q,
            max: max_q,
        });
    }
    if config.q > 0 {
        check_mu_tau(config.mu, config.tau, op.eigval(config.q), op.lambda_min_pp)?;
    } else if !(config.mu >= 0.0) || !(config.tau > 0.0) {
        return Err(ConfigViolation::BadRegularization {
            mu: config.mu,
            tau: config.tau,
        });
    }
    let max_alpha = 1.0 / (op.spectral_norm_a + config.mu / config.tau);
    if !(config.alpha > 0.0 && config.alpha <= max_alpha * (1.0 + 4.0 * f64::EPSILON)) {
        return Err(ConfigViolation::StepScale {
            alpha: config.alpha,
            max_alpha,
        });
    }
    validate_step_schedule(-1.0, config.beta(op), &config.schedule).map_err(ConfigViolation::Schedule)
}

/// Largest admissible step scale and step sizes: `α = (‖Ã‖₂ + μ/τ)⁻¹` (so
/// `β = 2`), `ε = η = 1/6`, tolerance `1e-8`, at most `100000` iterations.
pub fn default_config(op: &LstdOperatorData, mu: f64, tau: f64, q: usize) -> Result<PmcSolverConfig> {
    let mut config = PmcSolverConfig {
        mu,
        tau,
        q,
        alpha: 1.0,
        schedule: StepSchedule::default_for(2.0),
        stop: StopRule::default(),
    };
    if q > 0 {
        check_mu_tau(mu, tau, op.eigval(q), op.lambda_min_pp)?;
    }
    let scale = op.spectral_norm_a + if mu > 0.0 { mu / tau } else { 0.0 };
    if !(scale > 0.0) {
        return Err(Error::Precondition(
            "‖Ã‖₂ + μ/τ must be positive to set the step scale".into(),
        ));
    }
    config.alpha = 1.0 / scale;
    config.schedule = StepSchedule::default_for(config.beta(op));
    check_convexity_condition(&config, op)?;
    Ok(config)
}

/// The single-valued operator `T`.
#[derive(Debug, Clone)]
pub struct PmcOperator<'a> {
    op: &'a LstdOperatorData,
    basis: SubspaceBasis,
    mu_over_tau: f64,
    tau: f64,
}

impl<'a> PmcOperator<'a> {
    pub fn new(op: &'a LstdOperatorData, mu: f64, tau: f64, basis: SubspaceBasis) -> Result<Self> {
        check_dim(op.n_features(), basis.ambient_dim(), "PmcOperator: basis dimension")?;
        Ok(Self {
            op,
            basis,
            mu_over_tau: if mu > 0.0 { mu / tau } else { 0.0 },
            tau,
        })
    }

    pub fn apply(&self, w: ArrayView1<f64>) -> Array1<f64> {
        let mut out = self.op.apply_a(w);
        out -= &self.op.b_tilde;
        if self.mu_over_tau > 0.0 && self.basis.dim() > 0 {
            let v = self.basis.columns();
            let mut coords = matvec(v.t(), w);
            let mut p = matvec(v, coords.view());
            // p − soft_τ(p) is the clip of p to [−τ, τ].
            let tau = self.tau;
            p.mapv_inplace(|x| x.clamp(-tau, tau));
            coords = matvec(v.t(), p.view());
            let correction = matvec(v, coords.view());
            out.scaled_add(-self.mu_over_tau, &correction);
        }
        out
    }
}

/// `T(w)` for the subspace `basis`.
pub fn pmc_operator_t(
    w: ArrayView1<f64>,
    op: &LstdOperatorData,
    config: &PmcSolverConfig,
    basis: &SubspaceBasis,
) -> Result<Array1<f64>> {
    check_dim(op.n_features(), w.len(), "pmc_operator_t: w")?;
    Ok(PmcOperator::new(op, config.mu, config.tau, basis.clone())?.apply(w))
}

/// `B = αT + Id`, monotone and β-Lipschitz under (C-1)–(C-3).
pub struct RecastForward<'a> {
    t: PmcOperator<'a>,
    alpha: f64,
    beta: f64,
}

impl<'a> RecastForward<'a> {
    pub fn new(t: PmcOperator<'a>, alpha: f64, beta: f64) -> Self {
        Self { t, alpha, beta }
    }
}

impl LipschitzMonotoneMap for RecastForward<'_> {
    fn lipschitz_bound(&self) -> f64 {
        self.beta
    }

    fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut out = self.t.apply(x);
        out *= self.alpha;
        out += &x;
        out
    }
}

/// Worst violation of `0 ∈ T(w) + μ∂‖w‖₁`, measured componentwise:
/// `|T_i + μ sgn(w_i)|` where `w_i ≠ 0`, `max(|T_i| − μ, 0)` where `w_i = 0`.
pub fn stationarity_residual(t_of_w: ArrayView1<f64>, w: ArrayView1<f64>, mu: f64) -> f64 {
    let mut worst: f64 = 0.0;
    Zip::from(&t_of_w).and(&w).for_each(|&t, &wi| {
        let r = if wi > 0.0 {
            (t + mu).abs()
        } else if wi < 0.0 {
            (t - mu).abs()
        } else {
            (t.abs() - mu).max(0.0)
        };
        worst = worst.max(r);
    });
    worst
}

/// FRBS on the recast inclusion for an already assembled operator.
pub fn pmc_lstd_solve_assembled(
    op: &LstdOperatorData,
    config: &PmcSolverConfig,
    w_init_prev: ArrayView1<f64>,
    w_init: ArrayView1<f64>,
) -> Result<SolveReport> {
    check_convexity_condition(config, op)?;
    check_dim(op.n_features(), w_init.len(), "pmc_lstd_solve: w_init")?;
    check_dim(op.n_features(), w_init_prev.len(), "pmc_lstd_solve: w_init_prev")?;
    let basis = op.subspace_basis(config.q)?;
    let t = PmcOperator::new(op, config.mu, config.tau, basis)?;
    let forward = RecastForward::new(t, config.alpha, config.beta(op));
    let backward = ScaledL1MinusIdentity {
        weight: config.alpha * config.mu,
    };
    frbs_solve(&backward, &forward, w_init_prev, w_init, &config.schedule, &config.stop)
}

/// Assembles the operator for `data` and runs the PMC-LSTD solver.
pub fn pmc_lstd_solve(
    data: &LstdData,
    config: &PmcSolverConfig,
    w_init_prev: ArrayView1<f64>,
    w_init: ArrayView1<f64>,
) -> Result<SolveReport> {
    let op = assemble_operator(data)?;
    pmc_lstd_solve_assembled(&op, config, w_init_prev, w_init)
}

/// Closed-form (ridge) LSTD: solves `(Ã + ridge·Id) w = b̃`; with `ridge = 0`
/// returns the minimum-norm solution `Ã⁺ b̃`.
pub fn lstd_closed_form(op: &LstdOperatorData, ridge: f64) -> Result<Array1<f64>> {
    if !(ridge >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "ridge",
            value: ridge,
            reason: "must be nonnegative",
        });
    }
    let (m, n) = op.phi.dim();
    if ridge > 0.0 {
        if m < n {
            return ridge_dual(op, ridge);
        }
        let mut sys = op.a_tilde.clone();
        sys.diag_mut().mapv_inplace(|d| d + ridge);
        return lu_solve(sys.view(), op.b_tilde.view(), "ridge LSTD system");
    }
    if m < n && op.rank == m {
        if let Some(w) = min_norm_dual(op)? {
            return Ok(w);
        }
    }
    pinv_solve(op.a_tilde.view(), op.b_tilde.view())
}

// (ρI + ΦᵀD)⁻¹Φᵀg = ρ⁻¹Φᵀ(g − (ρI + DΦᵀ)⁻¹ DΦᵀ g) by the push-through identity.
fn ridge_dual(op: &LstdOperatorData, ridge: f64) -> Result<Array1<f64>> {
    let mut small = matmul(op.td.view(), op.phi.t());
    small.diag_mut().mapv_inplace(|d| d + ridge);
    let rhs = matvec(small.view(), op.g.view()) - ridge * &op.g;
    let y = lu_solve(small.view(), rhs.view(), "dual ridge LSTD system")?;
    let inner = &op.g - &y;
    Ok(matvec(op.phi.t(), inner.view()) / ridge)
}

// With Φ of full row rank, Ãw = b̃ ⇔ Dw = g for D = Φ − γΦ'. If D also has full
// row rank the minimum-norm solution is Dᵀ(DDᵀ)⁻¹g, which is exactly Ã⁺b̃.
fn min_norm_dual(op: &LstdOperatorData) -> Result<Option<Array1<f64>>> {
    let (vals, u) = symmetric_eigen_desc(row_gram(op.td.view()).view())?;
    let m = vals.len();
    let cutoff = rank_cutoff(op.n_features(), vals[0].max(0.0));
    if vals.iter().filter(|&&v| v > cutoff).count() < m {
        return Ok(None);
    }
    let mut coeffs = matvec(u.t(), op.g.view());
    Zip::from(&mut coeffs).and(&vals).for_each(|c, &l| *c /= l);
    let y = matvec(u.view(), coeffs.view());
    Ok(Some(matvec(op.td.t(), y.view())))
}

/// How `q` (the dimension of `M`) is chosen for a PMC estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SubspaceChoice {
    /// `q = rank ΦᵀΦ`, i.e. `M = null^⊥ Φ`.
    Rank,
    Fixed(usize),
}

/// How `τ` is chosen for a PMC estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauChoice {
    Fixed(f64),
    /// Smallest `τ` allowed by (C-1): `τ = μ / max{l_q, λ_min⁺⁺}`.
    Smallest,
}

/// A policy-evaluation method applied to an assembled operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    /// Minimum-norm closed-form LSTD.
    Lstd,
    /// Closed-form LSTD with `ridge·Id` added to `Ã`.
    Ridge {
        ridge: f64,
    },
    /// ℓ1-regularized LSTD: the PMC solver with `q = 0`.
    L1 {
        mu: f64,
    },
    Pmc {
        mu: f64,
        tau: TauChoice,
        q: SubspaceChoice,
    },
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub weights: Array1<f64>,
    /// FRBS iterations; zero for closed-form methods.
    pub iterations: usize,
    pub converged: bool,
    /// Resolved `(μ, τ, q)` for iterative methods.
    pub resolved: Option<(f64, f64, usize)>,
}

impl Estimator {
    /// Resolves `(μ, τ, q)` against `op`; `None` for closed-form methods.
    pub fn resolve(&self, op: &LstdOperatorData) -> Option<(f64, f64, usize)> {
        match *self {
            Estimator::Lstd | Estimator::Ridge { .. } => None,
            Estimator::L1 { mu } => Some((mu, f64::INFINITY, 0)),
            Estimator::Pmc { mu, tau, q } => {
                let q = match q {
                    SubspaceChoice::Rank => op.full_rank_q(),
                    SubspaceChoice::Fixed(q) => q,
                };
                let tau = match tau {
                    TauChoice::Fixed(t) => t,
                    TauChoice::Smallest if q == 0 => f64::INFINITY,
                    TauChoice::Smallest => mu / op.max_mu_over_tau(q),
                };
                Some((mu, tau, q))
            }
        }
    }

    /// Solver configuration for iterative methods: [`default_config`] with the
    /// stopping rule and, if given, the schedule `ε` taken from `options`.
    pub fn config(&self, op: &LstdOperatorData, options: impl Into<SolverOptions>) -> Result<Option<PmcSolverConfig>> {
        let options = options.into();
        match self.resolve(op) {
            None => Ok(None),
            Some((mu, tau, q)) => {
                let mut config = default_config(op, mu, tau, q)?;
                config.stop = options.stop;
                if let Some(eps) = options.epsilon {
                    let beta = config.beta(op);
                    config.schedule = StepSchedule::constant(eps, (1.0 - 2.0 * eps) / (2.0 * beta));
                    validate_step_schedule(-1.0, beta, &config.schedule).map_err(ConfigViolation::Schedule)?;
                }
                Ok(Some(config))
            }
        }
    }

    /// Runs the method on `op`. Iterative methods start from `warm_start`
    /// (both initial points) or from zero.
    pub fn estimate(
        &self,
        op: &LstdOperatorData,
        options: impl Into<SolverOptions>,
        warm_start: Option<ArrayView1<f64>>,
    ) -> Result<Estimate> {
        match *self {
            Estimator::Lstd => Ok(closed(lstd_closed_form(op, 0.0)?)),
            Estimator::Ridge { ridge } => Ok(closed(lstd_closed_form(op, ridge)?)),
            _ => {
                let config = self.config(op, options)?.expect("iterative estimator");
                let start = match warm_start {
                    Some(w) => w.to_owned(),
                    None => Array1::zeros(op.n_features()),
                };
                let report = pmc_lstd_solve_assembled(op, &config, start.view(), start.view())?;
                Ok(Estimate {
                    weights: report.solution,
                    iterations: report.iterations,
                    converged: report.converged,
                    resolved: Some((config.mu, config.tau, config.q)),
                })
            }
        }
    }
}

/// Stopping rule plus an optional schedule `ε` (with `η = (1 − 2ε)/(2β)`); the
/// default schedule is used when `epsilon` is `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolverOptions {
    pub stop: StopRule,
    pub epsilon: Option<f64>,
}

impl From<StopRule> for SolverOptions {
    fn from(stop: StopRule) -> Self {
        Self { stop, epsilon: None }
    }
}

fn closed(weights: Array1<f64>) -> Estimate {
    Estimate {
        weights,
        iterations: 0,
        converged: true,
        resolved: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn data(phi: Array2<f64>, phi_next: Array2<f64>, g: Array1<f64>, gamma: f64) -> LstdData {
        LstdData::new(phi, phi_next, g, gamma).unwrap()
    }

    #[test]
    fn assemble_small_example() {
        let d = data(Array2::eye(2), array![[0.0, 1.0], [1.0, 0.0]], array![1.0, 0.0], 0.5);
        let op = assemble_operator(&d).unwrap();
        let expect = array![[1.0, -0.5], [-0.5, 1.0]];
        for (a, b) in op.a_tilde.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(op.b_tilde, array![1.0, 0.0]);
        assert!((op.spectral_norm_a - 1.5).abs() < 1e-9);
    }

    #[test]
    fn assemble_identity_gram() {
        let n = 4;
        let d = data(Array2::eye(n), Array2::zeros((n, n)), Array1::ones(n), 0.9);
        let op = assemble_operator(&d).unwrap();
        assert_eq!(op.rank, n);
        assert!((op.lambda_min_pp - 1.0).abs() < 1e-14);
        assert!(op.gram_eigvals.iter().all(|&l| (l - 1.0).abs() < 1e-14));
        let vtv = op.gram_eigvecs.t().dot(&op.gram_eigvecs);
        for ((i, j), v) in vtv.indexed_iter() {
            assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
        for (a, b) in op.a_tilde.iter().zip(Array2::<f64>::eye(n).iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_features_are_rejected() {
        let d = data(Array2::zeros((3, 2)), Array2::zeros((3, 2)), Array1::zeros(3), 0.5);
        assert!(matches!(assemble_operator(&d), Err(Error::DegenerateFeatures)));
    }

    #[test]
    fn lstd_data_validation() {
        assert!(LstdData::new(Array2::eye(2), Array2::eye(3), Array1::zeros(2), 0.5).is_err());
        assert!(LstdData::new(Array2::eye(2), Array2::eye(2), Array1::zeros(3), 0.5).is_err());
        assert!(LstdData::new(Array2::eye(2), Array2::eye(2), Array1::zeros(2), 1.0).is_err());
    }

    #[test]
    fn mu_tau_condition_examples() {
        assert_eq!(check_mu_tau(1.0, 2.0, 0.4, 0.5), Ok(()));
        match check_mu_tau(1.0, 1.0, 0.4, 0.5) {
            Err(ConfigViolation::Convexity { ratio, max_ratio }) => {
                assert_eq!(ratio, 1.0);
                assert_eq!(max_ratio, 0.5);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(check_mu_tau(0.0, 3.0, 0.4, 0.5), Ok(()));
    }

    fn diag_op(spectral: f64) -> LstdOperatorData {
        // Φ = √s·I gives Ã = s(1−γ·0)·I with Φ' = 0.
        let n = 3;
        let phi = Array2::eye(n) * spectral.sqrt();
        assemble_operator(&data(phi, Array2::zeros((n, n)), Array1::ones(n), 0.5)).unwrap()
    }

    #[test]
    fn default_config_examples() {
        let op = diag_op(3.0);
        assert!((op.spectral_norm_a - 3.0).abs() < 1e-9);
        let c = default_config(&op, 1.0, 1.0, 3).unwrap();
        assert!((c.alpha - 0.25).abs() < 1e-9);
        assert!((c.beta(&op) - 2.0).abs() < 1e-12);
        assert!((c.schedule.eta(0) - 1.0 / 6.0).abs() < 1e-12);
        assert!((c.schedule.epsilon - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(c.stop, StopRule::default());

        let c0 = default_config(&op, 0.0, 1.0, 3).unwrap();
        assert!((c0.alpha - 1.0 / 3.0).abs() < 1e-9);
        assert!((c0.schedule.eta(0) - 1.0 / 6.0).abs() < 1e-12);

        match default_config(&op, 10.0, 1.0, 3) {
            Err(Error::Config(ConfigViolation::Convexity { max_ratio, .. })) => {
                assert!((max_ratio - 3.0).abs() < 1e-9)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_violations_are_reported() {
        let op = diag_op(3.0);
        let mut c = default_config(&op, 1.0, 1.0, 3).unwrap();
        c.alpha = 1.0;
        assert!(matches!(
            check_convexity_condition(&c, &op),
            Err(ConfigViolation::StepScale { .. })
        ));
        let mut c = default_config(&op, 1.0, 1.0, 3).unwrap();
        c.schedule = StepSchedule::constant(1.0 / 6.0, 0.3);
        assert!(matches!(
            check_convexity_condition(&c, &op),
            Err(ConfigViolation::Schedule(_))
        ));
        let mut c = default_config(&op, 1.0, 1.0, 3).unwrap();
        c.q = 4;
        assert!(matches!(
            check_convexity_condition(&c, &op),
            Err(ConfigViolation::SubspaceDimension { .. })
        ));
    }

    #[test]
    fn operator_t_examples() {
        let op = assemble_operator(&data(array![[2f64.sqrt()]], array![[0.0]], array![0.0], 0.5)).unwrap();
        let cfg = default_config(&op, 1.0, 1.0, 1).unwrap();
        let basis = op.subspace_basis(1).unwrap();
        let t = pmc_operator_t(array![0.5].view(), &op, &cfg, &basis).unwrap();
        assert!((t[0] - 0.5).abs() < 1e-14);

        let d = data(Array2::eye(2), array![[0.0, 1.0], [1.0, 0.0]], array![1.0, 0.0], 0.5);
        let op = assemble_operator(&d).unwrap();
        let basis = op.subspace_basis(2).unwrap();
        let cfg = default_config(&op, 0.5, 1.0, 2).unwrap();
        let t0 = pmc_operator_t(Array1::zeros(2).view(), &op, &cfg, &basis).unwrap();
        assert_eq!(t0, -&op.b_tilde);
        let cfg0 = default_config(&op, 0.0, 1.0, 2).unwrap();
        let w = array![0.3, -1.7];
        let t = pmc_operator_t(w.view(), &op, &cfg0, &basis).unwrap();
        let expect = op.a_tilde.dot(&w) - &op.b_tilde;
        assert!((&t - &expect).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn sparse_and_dense_products_agree() {
        let phi = Array2::from_shape_fn((9, 6), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let phi_next = Array2::from_shape_fn((9, 6), |(i, j)| ((i + 2 * j) % 3) as f64 - 1.0);
        let op = assemble_operator(&data(phi, phi_next, Array1::ones(9), 0.9)).unwrap();
        for w in [
            array![0.0, 0.0, 1.5, 0.0, 0.0, 0.0],
            array![0.4, -1.0, 0.0, 2.0, 0.3, -0.7],
        ] {
            let expect = op.a_tilde.dot(&w);
            assert!((&op.apply_a(w.view()) - &expect).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn closed_form_examples() {
        let d = data(Array2::eye(2), array![[0.0, 1.0], [1.0, 0.0]], array![1.0, 0.0], 0.5);
        let op = assemble_operator(&d).unwrap();
        let w = lstd_closed_form(&op, 0.0).unwrap();
        assert!((w[0] - 4.0 / 3.0).abs() < 1e-12 && (w[1] - 2.0 / 3.0).abs() < 1e-12);

        let b = array![0.3, -2.0, 5.0];
        let op = assemble_operator(&data(Array2::eye(3), Array2::zeros((3, 3)), b.clone(), 0.5)).unwrap();
        let w = lstd_closed_form(&op, 0.0).unwrap();
        assert!((&w - &b).iter().all(|v| v.abs() < 1e-12));
        assert!(lstd_closed_form(&op, -1.0).is_err());
    }

    #[test]
    fn closed_form_zero_system_is_zero() {
        // Φ = Φ' with γ small still gives a nonzero Ã, so build a zero system by hand.
        let op = LstdOperatorData {
            a_tilde: Array2::zeros((2, 2)),
            b_tilde: Array1::zeros(2),
            gram_eigvals: array![1.0, 0.0],
            gram_eigvecs: Array2::eye(2),
            lambda_min_pp: 1.0,
            rank: 1,
            spectral_norm_a: 0.0,
            phi: Array2::zeros((3, 2)),
            td: Array2::zeros((3, 2)),
            g: Array1::zeros(3),
            streamed: None,
            a_cols: Array2::zeros((2, 2)),
        };
        assert_eq!(lstd_closed_form(&op, 0.0).unwrap(), Array1::<f64>::zeros(2));
    }

    #[test]
    fn stationarity_residual_cases() {
        let mu = 0.5;
        assert_eq!(
            stationarity_residual(array![-0.5, 0.2].view(), array![1.0, 0.0].view(), mu),
            0.0
        );
        assert!((stationarity_residual(array![0.0, 0.7].view(), array![0.0, 0.0].view(), mu) - 0.2).abs() < 1e-15);
        assert!((stationarity_residual(array![0.5].view(), array![-3.0].view(), mu)).abs() < 1e-15);
    }
}
