//! Independent oracles for the test suites.
//!
//! Nothing here calls into `pmc-lstd`; every routine recomputes its quantity by
//! a different route (coordinate descent, value iteration, brute-force grids,
//! finite differences, SVD) so the implementation can be checked against it.
//! Dense factorizations go through `nalgebra`, a backend the library does not use.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal draw by Box–Muller.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| normal(rng))
}

pub fn normal_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| normal(rng))
}

pub fn max_abs_diff(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn rel_err(a: ArrayView1<f64>, reference: ArrayView1<f64>) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(reference.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let base: f64 = reference.dot(&reference).sqrt();
    diff / base.max(1e-300)
}

/// Minimizes `½‖Φu − y‖² + μ‖u‖₁` by cyclic coordinate descent.
///
/// Stops when a full sweep changes no coordinate by more than `tol`.
pub fn lasso_cd(phi: ArrayView2<f64>, y: ArrayView1<f64>, mu: f64, tol: f64, max_sweeps: usize) -> Array1<f64> {
    let n = phi.ncols();
    let col_sq: Vec<f64> = (0..n).map(|j| phi.column(j).dot(&phi.column(j))).collect();
    let mut u = Array1::<f64>::zeros(n);
    let mut resid = y.to_owned(); // y − Φu
    for _ in 0..max_sweeps {
        let mut max_change: f64 = 0.0;
        for j in 0..n {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = phi.column(j);
            let rho = col.dot(&resid) + col_sq[j] * u[j];
            let new = soft(rho, mu) / col_sq[j];
            let delta = new - u[j];
            if delta != 0.0 {
                resid.scaled_add(-delta, &col);
                u[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change <= tol {
            break;
        }
    }
    u
}

fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Least squares of `y ≈ Φ_S u_S` on the listed columns, scattered back to length `n`.
pub fn restricted_least_squares(phi: ArrayView2<f64>, y: ArrayView1<f64>, support: &[usize]) -> Array1<f64> {
    let mut out = Array1::zeros(phi.ncols());
    if support.is_empty() {
        return out;
    }
    let sub = Array2::from_shape_fn((phi.nrows(), support.len()), |(i, k)| phi[[i, support[k]]]);
    let normal = sub.t().dot(&sub);
    let rhs = sub.t().dot(&y);
    let k = support.len();
    let sol = nalgebra::DMatrix::from_fn(k, k, |i, j| normal[[i, j]])
        .lu()
        .solve(&nalgebra::DVector::from_fn(k, |i, _| rhs[i]))
        .expect("restricted normal equations are nonsingular");
    for (k, &j) in support.iter().enumerate() {
        out[j] = sol[k];
    }
    out
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn fd_gradient(f: impl Fn(ArrayView1<f64>) -> f64, x: ArrayView1<f64>, h: f64) -> Array1<f64> {
    let mut probe = x.to_owned();
    Array1::from_shape_fn(x.len(), |i| {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(probe.view());
        probe[i] = orig - h;
        let down = f(probe.view());
        probe[i] = orig;
        (up - down) / (2.0 * h)
    })
}

/// `min_u |u| + (t − u)²/(2τ)` over a uniform grid on `[−R, R]`.
pub fn envelope_grid_scalar(t: f64, tau: f64, radius: f64, points: usize) -> f64 {
    let step = 2.0 * radius / (points - 1) as f64;
    (0..points)
        .map(|k| {
            let u = -radius + step * k as f64;
            u.abs() + (t - u) * (t - u) / (2.0 * tau)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Smallest squared singular value of `phi` above `n · 1e-12 · σ_max²`, from an SVD
/// of `phi` itself (never forming the Gram matrix).
pub fn smallest_positive_gram_eigenvalue(phi: ArrayView2<f64>) -> (f64, usize) {
    let s = nalgebra::DMatrix::from_fn(phi.nrows(), phi.ncols(), |i, j| phi[[i, j]]).singular_values();
    let top = s.iter().copied().fold(0.0, f64::max);
    let cutoff = phi.ncols() as f64 * 1e-12 * top * top;
    let positive: Vec<f64> = s.iter().map(|v| v * v).filter(|&l| l > cutoff).collect();
    let rank = positive.len();
    (positive.into_iter().fold(f64::INFINITY, f64::min), rank)
}

/// Value iteration for a finite cost-minimizing MDP.
///
/// `successors(s, a)` lists `(next, probability)` with 0-based states. Iterates
/// `V ← min_a [g(s,a) + γ Σ p V(next)]` until the sup-norm change is at most `tol`.
pub fn value_iteration(
    n_states: usize,
    n_actions: usize,
    payoff: impl Fn(usize, usize) -> f64,
    successors: impl Fn(usize, usize) -> Vec<(usize, f64)>,
    gamma: f64,
    tol: f64,
) -> (Array1<f64>, Array2<f64>) {
    let mut v = Array1::<f64>::zeros(n_states);
    loop {
        let q = Array2::from_shape_fn((n_states, n_actions), |(s, a)| {
            payoff(s, a) + gamma * successors(s, a).iter().map(|&(n, p)| p * v[n]).sum::<f64>()
        });
        let next = Array1::from_shape_fn(n_states, |s| q.row(s).iter().copied().fold(f64::INFINITY, f64::min));
        let change = max_abs_diff(next.view(), v.view());
        v = next;
        if change <= tol {
            return (v, q);
        }
    }
}

/// Orthonormal `n × q` matrix by modified Gram–Schmidt on Gaussian columns.
pub fn random_orthonormal(rng: &mut ChaCha8Rng, n: usize, q: usize) -> Array2<f64> {
    assert!(q <= n);
    let mut v = normal_mat(rng, n, q);
    for j in 0..q {
        for k in 0..j {
            let proj = v.column(k).dot(&v.column(j));
            let ck = v.column(k).to_owned();
            v.column_mut(j).scaled_add(-proj, &ck);
        }
        let norm = v.column(j).dot(&v.column(j)).sqrt();
        v.column_mut(j).mapv_inplace(|x| x / norm);
    }
    v
}

/// Random LSTD system `(Φ, Φ', g)`: Gaussian `Φ` scaled by `1/√m`, `Φ'` a row
/// permutation of `Φ` (successor features drawn from the same rows) and
/// Gaussian payoffs.
pub fn random_lstd_system(rng: &mut ChaCha8Rng, m: usize, n: usize) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let phi = normal_mat(rng, m, n) / (m as f64).sqrt();
    let mut order: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let phi_next = Array2::from_shape_fn((m, n), |(i, j)| phi[[order[i], j]]);
    (phi, phi_next, normal_vec(rng, m))
}

/// Largest singular value of a dense matrix.
pub fn spectral_norm(a: ArrayView2<f64>) -> f64 {
    nalgebra::DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Inclusion `0 ∈ weight·∂‖x‖₁ − x + Mx + c` with a planted unique solution.
///
/// `M = (1 + κ)I + SᵀS + K` with `K` skew, so `M − I` is κ-strongly monotone and
/// the whole inclusion has exactly one zero, `x_star`.
#[derive(Debug, Clone)]
pub struct PlantedInclusion {
    pub linear: Array2<f64>,
    pub offset: Array1<f64>,
    pub weight: f64,
    pub x_star: Array1<f64>,
    pub lipschitz: f64,
}

impl PlantedInclusion {
    pub fn generate(rng: &mut ChaCha8Rng, n: usize, kappa: f64) -> Self {
        let s = normal_mat(rng, n, n) / (2.0 * (n as f64).sqrt());
        let k = normal_mat(rng, n, n) / (2.0 * (n as f64).sqrt());
        let mut linear = s.t().dot(&s) + (&k - &k.t());
        linear.diag_mut().mapv_inplace(|d| d + 1.0 + kappa);
        let weight = 0.5 + rng.random::<f64>();
        // Roughly half the coordinates of the planted zero are exactly 0.
        let x_star = Array1::from_shape_fn(n, |_| if rng.random_bool(0.5) { 0.0 } else { normal(rng) * 2.0 });
        let subgrad = x_star.mapv(|x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
        let subgrad = Array1::from_shape_fn(n, |i| {
            if x_star[i] == 0.0 {
                rng.random_range(-0.9..0.9)
            } else {
                subgrad[i]
            }
        });
        // weight·s − x* + Mx* + c = 0.
        let offset = &x_star - &linear.dot(&x_star) - weight * &subgrad;
        let lipschitz = spectral_norm(linear.view());
        Self {
            linear,
            offset,
            weight,
            x_star,
            lipschitz,
        }
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.linear.dot(&x) + &self.offset
    }

    /// Worst componentwise violation of `x − B(x) ∈ weight·∂‖x‖₁`.
    pub fn residual(&self, x: ArrayView1<f64>) -> f64 {
        let r = &x - &self.forward(x);
        subgradient_violation(r.view(), x, self.weight)
    }
}

/// Worst componentwise violation of `r ∈ weight·∂‖x‖₁`.
pub fn subgradient_violation(r: ArrayView1<f64>, x: ArrayView1<f64>, weight: f64) -> f64 {
    r.iter().zip(x.iter()).fold(0.0, |worst: f64, (&ri, &xi)| {
        let v = if xi > 0.0 {
            (ri - weight).abs()
        } else if xi < 0.0 {
            (ri + weight).abs()
        } else {
            (ri.abs() - weight).max(0.0)
        };
        worst.max(v)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn lasso_orthogonal_design_is_soft_threshold() {
        let phi = Array2::<f64>::eye(3);
        let y = array![2.0, -0.5, 1.5];
        let u = lasso_cd(phi.view(), y.view(), 1.0, 1e-14, 100);
        assert_eq!(u, array![1.0, 0.0, 0.5]);
    }

    #[test]
    fn value_iteration_geometric() {
        let (v, _) = value_iteration(1, 1, |_, _| 1.0, |_, _| vec![(0, 1.0)], 0.5, 1e-14);
        assert!((v[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_columns() {
        let v = random_orthonormal(&mut rng(1), 7, 4);
        let g = v.t().dot(&v);
        for ((i, j), x) in g.indexed_iter() {
            assert!((x - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }

    #[test]
    fn planted_zero_has_zero_residual() {
        let inst = PlantedInclusion::generate(&mut rng(2), 12, 0.5);
        assert!(inst.residual(inst.x_star.view()) < 1e-12);
    }

    #[test]
    fn envelope_grid_matches_huber() {
        let g = envelope_grid_scalar(0.5, 1.0, 3.0, 60_001);
        assert!((g - 0.125).abs() < 1e-6);
    }
}
