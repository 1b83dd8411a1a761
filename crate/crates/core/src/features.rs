//! Chain-walk feature map: bias + Gaussian RBFs + irrelevant noise, one block per action.
//!
//! For `d = 1 + n_rbf + n_noise` and `n = 2d`:
//!
//! ```text
//! φ(s, left)  = [ϕ(s), ε, 0_d]
//! φ(s, right) = [0_d, ϕ(s), ε]
//! ϕ(s) = [1, exp(−(s − c_1)²/ς), …, exp(−(s − c_{n_rbf})²/ς)]
//! ```
//!
//! where `ε ~ N(0, noise_std² I)` is drawn afresh for every matrix row.

use ndarray::{s, Array1, Array2, ArrayViewMut1};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::lstd::LstdData;
use crate::mdp::{Action, Policy, SampleBatch};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapSpec {
    pub n_states: usize,
    pub centers: Vec<f64>,
    pub width: f64,
    pub n_noise: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl FeatureMapSpec {
    /// Coordinate variance of the irrelevant features.
    pub const NOISE_VARIANCE: f64 = 0.1;
    pub const DEFAULT_N_RBF: usize = 10;

    /// `n_rbf` centers evenly spaced over `[1, n_states]`, width chosen so that
    /// neighbouring kernels cross at 0.5, noise variance 0.1.
    pub fn evenly_spaced(n_states: usize, n_rbf: usize, n_noise: usize, seed: u64) -> Self {
        let lo = 1.0;
        let hi = n_states as f64;
        let (centers, spacing) = match n_rbf {
            0 => (Vec::new(), (hi - lo).max(1.0)),
            1 => (vec![(lo + hi) / 2.0], (hi - lo).max(1.0)),
            k => {
                let step = (hi - lo) / (k - 1) as f64;
                (
                    (0..k).map(|i| lo + step * i as f64).collect(),
                    step.max(f64::MIN_POSITIVE),
                )
            }
        };
        Self {
            n_states,
            centers,
            width: spacing * spacing / std::f64::consts::LN_2,
            n_noise,
            noise_std: Self::NOISE_VARIANCE.sqrt(),
            seed,
        }
    }

    /// Default benchmark map: 10 RBFs on the 20-state chain.
    pub fn chain_default(n_noise: usize, seed: u64) -> Self {
        Self::evenly_spaced(20, Self::DEFAULT_N_RBF, n_noise, seed)
    }

    pub fn n_rbf(&self) -> usize {
        self.centers.len()
    }

    /// Size of one action block, `1 + n_rbf + n_noise`.
    pub fn block_dim(&self) -> usize {
        1 + self.n_rbf() + self.n_noise
    }

    /// `n = 2(1 + n_rbf + n_noise)`.
    pub fn dim(&self) -> usize {
        2 * self.block_dim()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) {
            return Err(Error::InvalidParameter {
                name: "width",
                value: self.width,
                reason: "RBF width must be positive",
            });
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "noise_std",
                value: self.noise_std,
                reason: "must be a nonnegative finite number",
            });
        }
        Ok(())
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

    /// Writes `φ(s, a)` into `row` (length `n`, assumed zeroed), taking the noise
    /// block from `noise`.
    fn fill_row(&self, mut row: ArrayViewMut1<f64>, s: usize, a: Action, mut noise: impl FnMut() -> f64) {
        let d = self.block_dim();
        let offset = a.index() * d;
        let mut block = row.slice_mut(s![offset..offset + d]);
        block[0] = 1.0;
        let x = s as f64;
        for (i, &c) in self.centers.iter().enumerate() {
            block[1 + i] = (-(x - c) * (x - c) / self.width).exp();
        }
        let base = 1 + self.n_rbf();
        for j in 0..self.n_noise {
            block[base + j] = noise();
        }
    }
}

/// `φ(s, a)` with the given realization of the noise block.
pub fn evaluate_features(spec: &FeatureMapSpec, s: usize, a: Action, noise_draw: &[f64]) -> Result<Array1<f64>> {
    spec.validate()?;
    spec.check_state(s)?;
    check_dim(spec.n_noise, noise_draw.len(), "evaluate_features: noise draw")?;
    let mut row = Array1::zeros(spec.dim());
    let mut it = noise_draw.iter().copied();
    spec.fill_row(row.view_mut(), s, a, || it.next().unwrap_or(0.0));
    Ok(row)
}

/// `φ(s, a)` with the noise block at its mean (zero).
pub fn mean_features(spec: &FeatureMapSpec, s: usize, a: Action) -> Result<Array1<f64>> {
    spec.validate()?;
    spec.check_state(s)?;
    let mut row = Array1::zeros(spec.dim());
    spec.fill_row(row.view_mut(), s, a, || 0.0);
    Ok(row)
}

fn feature_matrix(
    spec: &FeatureMapSpec,
    pairs: impl ExactSizeIterator<Item = (usize, Action)>,
    stream: u64,
) -> Array2<f64> {
    let mut rng = rng::stream(spec.seed, stream);
    let std = spec.noise_std;
    let mut phi = Array2::zeros((pairs.len(), spec.dim()));
    for (mut row, (s, a)) in phi.rows_mut().into_iter().zip(pairs) {
        spec.fill_row(row.view_mut(), s, a, || {
            let z: f64 = rng.sample(StandardNormal);
            std * z
        });
    }
    phi
}

/// Assembles `Φ` (rows `φ(s_i, a_i)`), `Φ'` (rows `φ(s'_i, π(s'_i))`) and `g`.
///
/// Noise blocks of `Φ` and `Φ'` come from separate streams of `spec.seed`; row
/// `i` consumes the `i`-th block of `n_noise` draws of its stream.
pub fn build_lstd_data(spec: &FeatureMapSpec, batch: &SampleBatch, policy: &Policy, gamma: f64) -> Result<LstdData> {
    spec.validate()?;
    if batch.is_empty() {
        return Err(Error::Precondition("empty sample batch".into()));
    }
    let m = batch.len();
    check_dim(m, batch.actions.len(), "build_lstd_data: actions")?;
    check_dim(m, batch.payoffs.len(), "build_lstd_data: payoffs")?;
    check_dim(m, batch.next_states.len(), "build_lstd_data: next states")?;
    if policy.n_states() != spec.n_states {
        return Err(Error::Precondition(format!(
            "policy covers {} states, feature map {}",
            policy.n_states(),
            spec.n_states
        )));
    }
    for (&s, &s2) in batch.states.iter().zip(&batch.next_states) {
        spec.check_state(s)?;
        spec.check_state(s2)?;
    }
    let phi = feature_matrix(
        spec,
        batch.states.iter().copied().zip(batch.actions.iter().copied()),
        rng::STREAM_FEATURES,
    );
    let phi_next = feature_matrix(
        spec,
        batch.next_states.iter().map(|&s| (s, policy.action(s))),
        rng::STREAM_FEATURES_NEXT,
    );
    LstdData::new(phi, phi_next, Array1::from(batch.payoffs.clone()), gamma)
}

/// `Q̂(s, a) = wᵀφ(s, a)` with noise at its mean, as an `n_states × 2` table.
pub fn q_table(spec: &FeatureMapSpec, w: &Array1<f64>) -> Result<Array2<f64>> {
    check_dim(spec.dim(), w.len(), "q_table: weight vector")?;
    let mut q = Array2::zeros((spec.n_states, 2));
    for s in 1..=spec.n_states {
        for a in Action::ALL {
            q[[s - 1, a.index()]] = mean_features(spec, s, a)?.dot(w);
        }
    }
    Ok(q)
}
