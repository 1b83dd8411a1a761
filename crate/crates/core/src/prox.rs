//! Proximal and penalty kernels for the ℓ1 / MC / PMC family.
//!
//! Conventions: `sgn(0) = +1`; all thresholds must be strictly positive.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::error::{check_dim, Error, Result};
use crate::linalg::matvec;

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be a positive finite number",
        })
    }
}

#[inline]
pub(crate) fn soft_scalar(x: f64, tau: f64) -> f64 {
    let mag = x.abs() - tau;
    if mag > 0.0 {
        if x >= 0.0 {
            mag
        } else {
            -mag
        }
    } else {
        0.0
    }
}

/// Scalar Huber function: the Moreau envelope of `|·|` with index `tau`.
#[inline]
fn huber_scalar(t: f64, tau: f64) -> f64 {
    let a = t.abs();
    if a <= tau {
        t * t / (2.0 * tau)
    } else {
        a - tau / 2.0
    }
}

/// Scalar MC penalty.
#[inline]
fn mc_scalar(t: f64, tau: f64) -> f64 {
    let a = t.abs();
    if a <= tau {
        a - t * t / (2.0 * tau)
    } else {
        tau / 2.0
    }
}

/// Componentwise `sgn(x_i) max(|x_i| − τ, 0)`: the proximity operator of `τ‖·‖₁`.
pub fn soft_threshold(x: ArrayView1<f64>, tau: f64) -> Result<Array1<f64>> {
    check_positive("tau", tau)?;
    Ok(x.mapv(|v| soft_scalar(v, tau)))
}

/// Moreau envelope of `‖·‖₁` with index `τ`, i.e. the sum of scalar Huber terms.
pub fn moreau_env_l1(x: ArrayView1<f64>, tau: f64) -> Result<f64> {
    check_positive("tau", tau)?;
    Ok(x.iter().map(|&v| huber_scalar(v, tau)).sum())
}

/// Minimax concave penalty with index `τ`.
pub fn mc_penalty(x: ArrayView1<f64>, tau: f64) -> Result<f64> {
    check_positive("tau", tau)?;
    Ok(x.iter().map(|&v| mc_scalar(v, tau)).sum())
}

pub fn l1_norm(x: ArrayView1<f64>) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

/// Orthonormal basis `V_q` (stored as `n × q` columns) of a subspace `M ⊆ ℝⁿ`.
///
/// `q = 0` is the trivial subspace `{0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    columns: Array2<f64>,
}

impl SubspaceBasis {
    /// Orthonormality tolerance on `V_qᵀ V_q − I`.
    pub const ORTHONORMAL_TOL: f64 = 1e-10;

    pub fn new(columns: Array2<f64>) -> Result<Self> {
        let q = columns.ncols();
        if q > columns.nrows() {
            return Err(Error::Precondition(format!(
                "subspace basis has {q} columns in dimension {}",
                columns.nrows()
            )));
        }
        let gram = columns.t().dot(&columns);
        for ((i, j), &v) in gram.indexed_iter() {
            let expect = if i == j { 1.0 } else { 0.0 };
            if (v - expect).abs() > Self::ORTHONORMAL_TOL {
                return Err(Error::Precondition(format!(
                    "basis columns are not orthonormal: (VᵀV)[{i},{j}] = {v}"
                )));
            }
        }
        Ok(Self { columns })
    }

    /// Skips the orthonormality check. Used for eigenvector blocks that are
    /// orthonormal by construction.
    pub(crate) fn from_orthonormal_unchecked(columns: Array2<f64>) -> Self {
        Self { columns }
    }

    pub fn trivial(n: usize) -> Self {
        Self {
            columns: Array2::zeros((n, 0)),
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            columns: Array2::eye(n),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn dim(&self) -> usize {
        self.columns.ncols()
    }

    pub fn columns(&self) -> ArrayView2<'_, f64> {
        self.columns.view()
    }

    pub(crate) fn project_unchecked(&self, x: ArrayView1<f64>) -> Array1<f64> {
        if self.dim() == 0 {
            return Array1::zeros(self.ambient_dim());
        }
        let coords = matvec(self.columns.t(), x);
        matvec(self.columns.view(), coords.view())
    }
}

/// Orthogonal projection `V_q V_qᵀ x` onto the span of `basis`.
pub fn project_subspace(x: ArrayView1<f64>, basis: &SubspaceBasis) -> Result<Array1<f64>> {
    check_dim(basis.ambient_dim(), x.len(), "project_subspace: x vs basis rows")?;
    Ok(basis.project_unchecked(x))
}

/// PMC penalty `‖x‖₁ − env_τ‖·‖₁(P_M x)`.
pub fn pmc_penalty(x: ArrayView1<f64>, tau: f64, basis: &SubspaceBasis) -> Result<f64> {
    check_positive("tau", tau)?;
    let p = project_subspace(x, basis)?;
    Ok(l1_norm(x) - moreau_env_l1(p.view(), tau)?)
}

/// Resolvent of `η(αμ∂‖·‖₁ − Id)`, i.e. the unique `z` with
/// `x ∈ (1 − η) z + ηαμ ∂‖z‖₁`.
///
/// Closed form: `soft(x / (1 − η), ηαμ / (1 − η))`. Requires `0 < η < 1`.
pub fn resolvent_l1_minus_id(x: ArrayView1<f64>, eta: f64, alpha: f64, mu: f64) -> Result<Array1<f64>> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidParameter {
            name: "eta",
            value: eta,
            reason: "must lie in (0, 1) for the resolvent to be single-valued",
        });
    }
    check_positive("alpha", alpha)?;
    check_positive("mu", mu)?;
    Ok(l1_minus_id_resolvent_raw(x, eta, alpha * mu))
}

/// Same map with the product `αμ` folded into `weight`; `weight = 0` is allowed
/// and yields the plain scaling `x / (1 − η)`.
pub(crate) fn l1_minus_id_resolvent_raw(x: ArrayView1<f64>, eta: f64, weight: f64) -> Array1<f64> {
    let scale = 1.0 / (1.0 - eta);
    let thresh = eta * weight * scale;
    let mut out = Array1::zeros(x.len());
    Zip::from(&mut out)
        .and(&x)
        .for_each(|o, &v| *o = soft_scalar(v * scale, thresh));
    out
}
