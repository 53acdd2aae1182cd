//! Dense linear-algebra helpers shared by the embedding methods.
//!
//! Everything here works on `nalgebra` dynamic matrices. Eigenvectors are
//! returned as columns, ordered by non-increasing eigenvalue, and carry the
//! crate-wide sign convention: the largest-magnitude entry is positive, ties
//! resolved by the lowest index.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Index of the largest-magnitude entry (first one on ties).
fn dominant_index<'a>(values: impl Iterator<Item = &'a f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.enumerate() {
        match best {
            Some((_, b)) if v.abs() <= b.abs() => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

/// Flip `v` so that its largest-magnitude entry is positive.
pub fn sign_fix_slice(v: &mut [f64]) {
    if let Some((_, d)) = dominant_index(v.iter()) {
        if d < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Apply the sign convention to every row.
pub fn sign_fix_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        if let Some((_, d)) = dominant_index(row.iter()) {
            if d < 0.0 {
                row.neg_mut();
            }
        }
    }
}

/// Apply the sign convention to every column.
pub fn sign_fix_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        if let Some((_, d)) = dominant_index(col.iter()) {
            if d < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Full symmetric eigendecomposition, eigenvalues descending, sign-fixed columns.
pub fn symmetric_eigen_desc(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    sign_fix_columns(&mut vectors);
    (values, vectors)
}

/// Below this size the full dense solver is used for top-k problems.
const DENSE_EIGEN_LIMIT: usize = 400;

/// Largest `k` eigenpairs (algebraically) of a symmetric matrix.
///
/// Small problems use the dense solver. Larger ones use Lanczos with full
/// reorthogonalization, growing the Krylov space until the Ritz residuals of
/// the wanted pairs fall below `1e-12 * ||A||`, and falling back to the dense
/// solver if the space reaches the matrix size.
pub fn top_symmetric_eigen(a: &DMatrix<f64>, k: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let k = k.min(n);
    if n <= DENSE_EIGEN_LIMIT {
        let (vals, vecs) = symmetric_eigen_desc(a);
        return (vals.rows(0, k).into_owned(), vecs.columns(0, k).into_owned());
    }
    let mut dim = (3 * k + 30).max(60).min(n);
    loop {
        if let Some(found) = lanczos_top(a, k, dim) {
            return found;
        }
        if dim == n {
            break;
        }
        dim = (dim * 2).min(n);
    }
    let (vals, vecs) = symmetric_eigen_desc(a);
    (vals.rows(0, k).into_owned(), vecs.columns(0, k).into_owned())
}

fn lanczos_top(a: &DMatrix<f64>, k: usize, dim: usize) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let norm_a = a.norm().max(f64::MIN_POSITIVE);
    // Fixed start vector; a constant vector would be orthogonal to every
    // informative eigenvector of a double-centered matrix.
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a2c_05);
    let mut q = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    q /= q.norm();

    let mut basis = DMatrix::<f64>::zeros(n, dim);
    let mut alpha = Vec::with_capacity(dim);
    let mut beta: Vec<f64> = Vec::with_capacity(dim);
    let mut m = 0;
    basis.set_column(0, &q);
    let mut last_beta = 0.0;
    for j in 0..dim {
        m = j + 1;
        let qj = basis.column(j).into_owned();
        let mut w = a * &qj;
        let aj = qj.dot(&w);
        alpha.push(aj);
        // Full reorthogonalization (twice is enough).
        for _ in 0..2 {
            let coeffs = basis.columns(0, j + 1).tr_mul(&w);
            w -= basis.columns(0, j + 1) * coeffs;
        }
        let bj = w.norm();
        last_beta = bj;
        if j + 1 == dim {
            break;
        }
        if bj <= 1e-13 * norm_a {
            // Invariant subspace found.
            break;
        }
        beta.push(bj);
        basis.set_column(j + 1, &(w / bj));
    }

    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let (theta, s) = symmetric_eigen_desc(&t);
    if m < k {
        return None;
    }
    let invariant = last_beta <= 1e-13 * norm_a;
    for i in 0..k {
        let resid = last_beta * s[(m - 1, i)].abs();
        if !invariant && resid > 1e-12 * norm_a {
            return None;
        }
    }
    let mut vecs = basis.columns(0, m) * s.columns(0, k);
    for mut col in vecs.column_iter_mut() {
        let nrm = col.norm();
        col /= nrm;
    }
    sign_fix_columns(&mut vecs);
    Some((theta.rows(0, k).into_owned(), vecs))
}

/// Cholesky factorization of `a + jitter*I`, escalating jitter ×10 from
/// `start` up to `max` until the factorization succeeds.
pub fn cholesky_with_jitter(
    a: &DMatrix<f64>,
    start: f64,
    max: f64,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = start;
    loop {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok((chol, jitter));
        }
        if jitter >= max {
            return Err(Error::Numeric(format!(
                "matrix not positive definite after jitter {jitter:e}"
            )));
        }
        jitter = (jitter * 10.0).min(max);
    }
}

/// Column means of an `n × d` matrix.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Subtract `mean` from every row.
pub fn center_rows(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    out
}

/// Squared euclidean distance between row `i` of `a` and row `j` of `b`.
#[inline]
pub fn row_sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..a.ncols() {
        let d = a[(i, c)] - b[(j, c)];
        s += d * d;
    }
    s
}

/// Row-major copy of a matrix, handy for cache-friendly row loops.
pub fn to_row_major(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = x.shape();
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            out[i * d + j] = x[(i, j)];
        }
    }
    out
}

/// Linear-interpolation percentile of an ascending-sorted slice, `p` in [0, 100].
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = (p / 100.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Sorted copy of the finite values in `v`.
pub fn sorted_copy(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Largest principal angle (radians) between the column spans of `a` and `b`.
/// Both must have orthonormal columns.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let m = a.tr_mul(b);
    let sv = m.singular_values();
    let smallest = sv.iter().cloned().fold(f64::INFINITY, f64::min).clamp(-1.0, 1.0);
    smallest.acos()
}
