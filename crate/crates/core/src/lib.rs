//! Sparse policy evaluation for reinforcement learning.
//!
//! The crate combines least-squares temporal difference (LSTD) estimation with the
//! projective minimax concave (PMC) penalty. The regularized fixed-point problem is
//! rewritten as a nonmonotone inclusion `0 ∈ (A + B)(w)` and solved with
//! forward-reflected-backward splitting (FRBS).
//!
//! Modules, bottom-up:
//!
//! * [`prox`]: soft-thresholding, Moreau envelope of ℓ1, MC/PMC penalties,
//!   subspace projection and the resolvent of `η(αμ∂‖·‖₁ − Id)`.
//! * [`inclusion`]: a general FRBS solver for `0 ∈ (A + B)(x)` with `A`
//!   maximally ρ-monotone (ρ may be negative) and `B` monotone Lipschitz.
//! * [`lstd`]: LSTD matrices, the Gram eigendecomposition, the operator `T`,
//!   the PMC-LSTD driver and closed-form baselines.
//! * [`mdp`]: the chain-walk benchmark and exact Bellman solvers.
//! * [`features`]: the RBF + irrelevant-noise feature map.
//! * [`policy_iteration`]: approximate policy iteration with exact-oracle diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;
pub mod features;
pub mod inclusion;
mod linalg;
pub mod lstd;
pub mod mdp;
pub mod policy_iteration;
pub mod prox;
pub mod rng;

pub use error::{Error, Result};
