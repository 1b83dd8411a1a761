//! Dense linear-algebra helpers shared by the solver modules.

use faer::linalg::matmul::matmul as faer_matmul;
use faer::linalg::solvers::Solve;
use faer::{Accum, Mat, MatMut, MatRef, Par, Side};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};

pub(crate) fn norm2(x: ArrayView1<f64>) -> f64 {
    x.dot(&x).sqrt()
}

pub(crate) fn all_finite(x: ArrayView1<f64>) -> bool {
    x.iter().all(|v| v.is_finite())
}

fn mat_ref(a: ArrayView2<'_, f64>) -> MatRef<'_, f64> {
    let st = a.strides();
    // SAFETY: pointer, shape and strides describe the live ndarray view.
    unsafe { MatRef::from_raw_parts(a.as_ptr(), a.nrows(), a.ncols(), st[0], st[1]) }
}

fn col_ref(x: ArrayView1<'_, f64>) -> MatRef<'_, f64> {
    // SAFETY: as above, the vector seen as a single column.
    unsafe { MatRef::from_raw_parts(x.as_ptr(), x.len(), 1, x.strides()[0], 0) }
}

fn mat_mut(a: ArrayViewMut2<'_, f64>) -> MatMut<'_, f64> {
    let (r, c) = a.dim();
    let st = [a.strides()[0], a.strides()[1]];
    let mut a = a;
    // SAFETY: unique borrow of the ndarray view for the lifetime of the result.
    unsafe { MatMut::from_raw_parts_mut(a.as_mut_ptr(), r, c, st[0], st[1]) }
}

/// `a · b`.
pub(crate) fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.nrows(), "matmul: inner dimensions");
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    if a.ncols() > 0 {
        faer_matmul(
            mat_mut(out.view_mut()),
            Accum::Replace,
            mat_ref(a),
            mat_ref(b),
            1.0,
            Par::Seq,
        );
    }
    out
}

/// `a · x`.
pub(crate) fn matvec(a: ArrayView2<f64>, x: ArrayView1<f64>) -> Array1<f64> {
    assert_eq!(a.ncols(), x.len(), "matvec: inner dimensions");
    let mut out = Array2::zeros((a.nrows(), 1));
    if a.ncols() > 0 {
        faer_matmul(
            mat_mut(out.view_mut()),
            Accum::Replace,
            mat_ref(a),
            col_ref(x),
            1.0,
            Par::Seq,
        );
    }
    out.into_shape_with_order(a.nrows()).expect("single column")
}

fn to_faer(m: ArrayView2<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

fn from_faer(m: MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Symmetric eigendecomposition.
///
/// Returns eigenvalues in descending order with the matching unit eigenvectors as
/// the columns of the second matrix. Only the lower triangle of `m` is read.
pub(crate) fn symmetric_eigen_desc(m: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: m.ncols(),
            context: "symmetric eigendecomposition needs a square matrix",
        });
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    let evd = to_faer(m).self_adjoint_eigen(Side::Lower).map_err(|e| Error::Linalg {
        routine: "symmetric eigendecomposition",
        reason: format!("{e:?}"),
    })?;
    let vals = evd.S().column_vector();
    let vecs = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let eigvals = Array1::from_iter(order.iter().map(|&k| vals[k]));
    let eigvecs = Array2::from_shape_fn((n, n), |(i, j)| vecs[(i, order[j])]);
    Ok((eigvals, eigvecs))
}

/// Solves the square system `a x = b` by LU with partial pivoting.
pub(crate) fn lu_solve(a: ArrayView2<f64>, b: ArrayView1<f64>, context: &'static str) -> Result<Array1<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: a.ncols(),
            context,
        });
    }
    if n == 0 {
        return Ok(Array1::zeros(0));
    }
    let lu = to_faer(a).partial_piv_lu();
    let u = lu.U();
    let pivots: Vec<f64> = (0..n).map(|i| u[(i, i)].abs()).collect();
    let largest = pivots.iter().copied().fold(0.0, f64::max);
    if !(largest > 0.0) || pivots.iter().any(|&p| p <= n as f64 * f64::EPSILON * largest) {
        return Err(Error::Singular { context });
    }
    let rhs = Mat::from_fn(n, 1, |i, _| b[i]);
    let x = lu.solve(&rhs);
    let out = Array1::from_shape_fn(n, |i| x[(i, 0)]);
    if !all_finite(out.view()) {
        return Err(Error::Singular { context });
    }
    Ok(out)
}

/// Largest singular value of `apply` (an implicit `n × n` operator with adjoint
/// `apply_t`) by power iteration on `AᵀA`.
pub(crate) fn spectral_norm_power<F, G>(n: usize, apply: F, apply_t: G, rel_tol: f64, max_iter: usize) -> f64
where
    F: Fn(ArrayView1<f64>) -> Array1<f64>,
    G: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    if n == 0 {
        return 0.0;
    }
    // Fixed non-symmetric start.
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + (i as f64 + 1.0).sqrt().fract());
    let v_norm = norm2(v.view());
    v /= v_norm;
    let mut sigma = 0.0;
    for _ in 0..max_iter {
        let av = apply(v.view());
        let sigma_next = norm2(av.view());
        let mut w = apply_t(av.view());
        let wn = norm2(w.view());
        if wn == 0.0 || sigma_next == 0.0 {
            // v fell into the kernel.
            return sigma_next.max(sigma);
        }
        w /= wn;
        v = w;
        if (sigma_next - sigma).abs() <= rel_tol * sigma_next {
            return sigma_next;
        }
        sigma = sigma_next;
    }
    sigma
}

pub(crate) fn row_gram(m: ArrayView2<f64>) -> Array2<f64> {
    matmul(m, m.t())
}

pub(crate) fn col_gram(m: ArrayView2<f64>) -> Array2<f64> {
    matmul(m.t(), m)
}

/// Minimum-norm least-squares solution `A⁺ b` via a thin SVD.
///
/// Singular values at or below `max(rows, cols) · ε · σ_max` are treated as zero.
pub(crate) fn pinv_solve(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    let (rows, cols) = a.dim();
    if rows == 0 || cols == 0 {
        return Ok(Array1::zeros(cols));
    }
    let svd = to_faer(a).thin_svd().map_err(|e| Error::Linalg {
        routine: "singular value decomposition",
        reason: format!("{e:?}"),
    })?;
    let (u, v) = (from_faer(svd.U()), from_faer(svd.V()));
    let sigma = svd.S().column_vector();
    let smax = (0..sigma.nrows()).map(|k| sigma[k]).fold(0.0, f64::max);
    let cutoff = rows.max(cols) as f64 * f64::EPSILON * smax;
    let mut coeffs = matvec(u.t(), b);
    for (k, c) in coeffs.iter_mut().enumerate() {
        let s = sigma[k];
        *c = if s > cutoff { *c / s } else { 0.0 };
    }
    Ok(matvec(v.view(), coeffs.view()))
}

/// Row-compressed matrix: each row keeps only the span between its first and last
/// nonzero entry.
#[derive(Debug, Clone)]
pub(crate) struct RowSpans {
    ncols: usize,
    starts: Vec<usize>,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl RowSpans {
    pub(crate) fn new(m: ArrayView2<f64>) -> Self {
        let mut starts = Vec::with_capacity(m.nrows());
        let mut offsets = Vec::with_capacity(m.nrows() + 1);
        let mut values = Vec::new();
        offsets.push(0);
        for row in m.rows() {
            let first = row.iter().position(|&v| v != 0.0);
            match first {
                Some(first) => {
                    let last = row.iter().rposition(|&v| v != 0.0).expect("row has a nonzero");
                    starts.push(first);
                    values.extend(row.iter().skip(first).take(last + 1 - first));
                }
                None => starts.push(0),
            }
            offsets.push(values.len());
        }
        Self {
            ncols: m.ncols(),
            starts,
            offsets,
            values,
        }
    }

    pub(crate) fn stored(&self) -> usize {
        self.values.len()
    }

    fn row(&self, i: usize) -> (usize, &[f64]) {
        (self.starts[i], &self.values[self.offsets[i]..self.offsets[i + 1]])
    }
}

fn span_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn span_axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `Xᵀ(X − γX')` applied without forming the product.
///
/// Dense `w`: one pass over the rows of `X` and `X'`. Sparse `w`: `(X − γX')w`
/// from the columns of the difference at the support of `w`, then one pass over `X`.
#[derive(Debug, Clone)]
pub(crate) struct TdProduct {
    x: RowSpans,
    x_next: RowSpans,
    gamma: f64,
}

impl TdProduct {
    pub(crate) fn new(x: ArrayView2<f64>, x_next: ArrayView2<f64>, gamma: f64) -> Self {
        Self {
            x: RowSpans::new(x),
            x_next: RowSpans::new(x_next),
            gamma,
        }
    }

    /// Entries streamed per dense product.
    pub(crate) fn stored(&self) -> usize {
        self.x.stored() + self.x_next.stored()
    }

    pub(crate) fn apply(&self, w: ArrayView1<f64>) -> Array1<f64> {
        let w = w.as_standard_layout();
        let w = w.as_slice().expect("standard layout");
        let mut out = vec![0.0; self.x.ncols];
        for i in 0..self.x.starts.len() {
            let (s, r) = self.x.row(i);
            let (s2, r2) = self.x_next.row(i);
            let y = span_dot(r, &w[s..s + r.len()]) - self.gamma * span_dot(r2, &w[s2..s2 + r2.len()]);
            if y != 0.0 {
                span_axpy(y, r, &mut out[s..s + r.len()]);
            }
        }
        Array1::from_vec(out)
    }

    pub(crate) fn apply_transpose(&self, v: ArrayView1<f64>) -> Array1<f64> {
        let v = v.as_standard_layout();
        let v = v.as_slice().expect("standard layout");
        let mut out = vec![0.0; self.x.ncols];
        for i in 0..self.x.starts.len() {
            let (s, r) = self.x.row(i);
            let (s2, r2) = self.x_next.row(i);
            let y = span_dot(r, &v[s..s + r.len()]);
            if y != 0.0 {
                span_axpy(y, r, &mut out[s..s + r.len()]);
                span_axpy(-self.gamma * y, r2, &mut out[s2..s2 + r2.len()]);
            }
        }
        Array1::from_vec(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn eigen_descending_reconstructs() {
        let m = array![[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 1.0]];
        let (vals, vecs) = symmetric_eigen_desc(m.view()).unwrap();
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        let recon = vecs.dot(&Array2::from_diag(&vals)).dot(&vecs.t());
        for (a, b) in recon.iter().zip(m.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let id = vecs.t().dot(&vecs);
        for ((i, j), v) in id.indexed_iter() {
            let e = if i == j { 1.0 } else { 0.0 };
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn pinv_gives_minimum_norm_solution() {
        // rank-1 system: x + y = 2 has minimum-norm solution (1, 1)
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let x = pinv_solve(a.view(), array![2.0, 2.0].view()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
        let z = pinv_solve(Array2::<f64>::zeros((2, 2)).view(), array![0.0, 0.0].view()).unwrap();
        assert_eq!(z, array![0.0, 0.0]);
    }

    #[test]
    fn lu_solve_and_singular_detection() {
        let a = array![[2.0, 1.0], [1.0, 3.0]];
        let x = lu_solve(a.view(), array![3.0, 5.0].view(), "test").unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
        let s = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(matches!(
            lu_solve(s.view(), array![1.0, 1.0].view(), "test"),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn gram_matches_naive_product() {
        let m = Array2::from_shape_fn((37, 53), |(i, j)| ((i * 7 + j * 13) % 11) as f64 - 5.0);
        let g = row_gram(m.view());
        let h = col_gram(m.view());
        for i in 0..37 {
            for j in 0..37 {
                let e: f64 = (0..53).map(|k| m[[i, k]] * m[[j, k]]).sum();
                assert!((g[[i, j]] - e).abs() < 1e-9);
            }
        }
        for i in 0..53 {
            for j in 0..53 {
                let e: f64 = (0..37).map(|k| m[[k, i]] * m[[k, j]]).sum();
                assert!((h[[i, j]] - e).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn products_handle_transposed_and_strided_views() {
        let a = Array2::from_shape_fn((9, 14), |(i, j)| {
            (i as f64 - 3.0) * 0.5 + j as f64 * 0.25 - (i * j % 5) as f64
        });
        let x = Array1::from_shape_fn(28, |i| i as f64 * 0.1 - 1.0);
        let xs = x.slice(ndarray::s![..;2]);
        let y = matvec(a.view(), xs);
        let yt = matvec(a.t(), y.view());
        let b = matmul(a.t(), a.view());
        for i in 0..9 {
            let e: f64 = (0..14).map(|k| a[[i, k]] * xs[k]).sum();
            assert!((y[i] - e).abs() < 1e-12);
        }
        for j in 0..14 {
            let e: f64 = (0..9).map(|k| a[[k, j]] * y[k]).sum();
            assert!((yt[j] - e).abs() < 1e-12);
            for l in 0..14 {
                let e: f64 = (0..9).map(|k| a[[k, j]] * a[[k, l]]).sum();
                assert!((b[[j, l]] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn td_product_matches_dense() {
        let x = Array2::from_shape_fn((7, 10), |(i, j)| {
            if (j / 5) == i % 2 {
                (i + j) as f64 * 0.3 - 1.0
            } else {
                0.0
            }
        });
        let xn = Array2::from_shape_fn((7, 10), |(i, j)| {
            if (j / 5) == (i / 3) % 2 {
                (i * j % 4) as f64 - 1.5
            } else {
                0.0
            }
        });
        let gamma = 0.9;
        let dense = matmul(x.t(), (&x - &(gamma * &xn)).view());
        let prod = TdProduct::new(x.view(), xn.view(), gamma);
        assert!(prod.stored() < 2 * 70);
        let w = Array1::from_shape_fn(10, |i| (i as f64).sin());
        let a = prod.apply(w.view());
        let at = prod.apply_transpose(w.view());
        let (ea, eat) = (dense.dot(&w), dense.t().dot(&w));
        for i in 0..10 {
            assert!((a[i] - ea[i]).abs() < 1e-12);
            assert!((at[i] - eat[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn power_iteration_matches_known_norm() {
        let a = array![[3.0, 0.0], [4.0, 5.0]];
        // singular values of this matrix are sqrt(45) and sqrt(5)
        let s = spectral_norm_power(2, |x| a.dot(&x), |x| a.t().dot(&x), 1e-14, 10_000);
        assert!((s - 45f64.sqrt()).abs() < 1e-9);
    }
}
