//! Generalized (kernel Fisher) discriminant analysis.
//!
//! With the double-centered kernel `K̃` and the `n × C` class-indicator matrix
//! `E` (column `c` holds `1/√n_c` on the rows of class `c`), the dual
//! coefficients solve the symmetric-definite problem
//!
//! `(K̃E)(K̃E)ᵀ α = μ (K̃K̃ − (K̃E)(K̃E)ᵀ + λI) α`.
//!
//! The between term has rank at most `C − 1`, so with `L Lᵀ` the Cholesky
//! factor of the regularized within term, the solutions are `α = L⁻ᵀ u` for
//! the leading left singular vectors `u` of `L⁻¹ K̃E`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::partition;
use crate::cube_io::DesignMatrix;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::linalg::{row_sq_dist, sign_fix_rows, to_row_major};
use crate::model_io::mat_serde;

pub const DEFAULT_GDA_CAP: usize = 2000;
/// The regularizer grows ×10 from the requested value up to this multiple.
const MAX_REGULARIZATION_GROWTH: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GdaKernel {
    /// `exp(−γ‖x − y‖²)`
    Rbf { gamma: f64 },
    Linear,
}

impl GdaKernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            GdaKernel::Rbf { gamma } => {
                let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * s).exp()
            }
            GdaKernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdaOptions {
    /// `None` selects RBF with the median-heuristic bandwidth.
    pub kernel: Option<GdaKernel>,
    pub regularization_rel: f64,
    pub cap: usize,
}

impl Default for GdaOptions {
    fn default() -> Self {
        GdaOptions { kernel: None, regularization_rel: 1e-3, cap: DEFAULT_GDA_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdaModel {
    #[serde(with = "mat_serde")]
    pub training: DMatrix<f64>,
    pub kernel: GdaKernel,
    pub classes: Vec<u8>,
    /// `q × n` dual coefficients.
    #[serde(with = "mat_serde")]
    pub coefficients: DMatrix<f64>,
    pub kernel_row_means: Vec<f64>,
    pub kernel_grand_mean: f64,
    /// Absolute regularizer actually used.
    pub regularization: f64,
    pub eigenvalues: Vec<f64>,
}

impl GdaModel {
    pub fn dims(&self) -> usize {
        self.coefficients.nrows()
    }
}

/// `γ = 1 / (2·median²)` over pairwise euclidean distances.
pub fn median_heuristic_gamma(data: &DMatrix<f64>) -> f64 {
    let n = data.nrows();
    let mut sq = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            sq.push(row_sq_dist(data, i, data, j));
        }
    }
    if sq.is_empty() {
        return 1.0;
    }
    let mid = sq.len() / 2;
    let (_, median, _) = sq.select_nth_unstable_by(mid, f64::total_cmp);
    if *median > 0.0 {
        1.0 / (2.0 * *median)
    } else {
        1.0
    }
}

fn kernel_matrix(rows: &[f64], n: usize, d: usize, kernel: GdaKernel) -> DMatrix<f64> {
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| kernel.eval(&rows[i * d..(i + 1) * d], &rows[j * d..(j + 1) * d])).collect())
        .collect();
    DMatrix::from_fn(n, n, |i, j| cols[j][i])
}

/// `K̃ = K − r1ᵀ − 1rᵀ + g`, returning `(K̃, r, g)`.
pub(crate) fn center_kernel(k: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, f64) {
    let n = k.nrows();
    let r: Vec<f64> = (0..n).map(|i| k.row(i).sum() / n as f64).collect();
    let g = r.iter().sum::<f64>() / n as f64;
    (DMatrix::from_fn(n, n, |i, j| k[(i, j)] - r[i] - r[j] + g), r, g)
}

/// Fit `q ≤ C − 1` kernel discriminants. The regularizer on the within term
/// is `λ = regularization_rel · (tr(K)/n)²`, matching the quadratic scaling
/// of `K̃K̃`; it is raised ×10 while the within term fails to factor.
pub fn gda_fit(data: &DesignMatrix, labels: &[u8], q: usize, opts: GdaOptions) -> Result<GdaModel> {
    let (n, d) = data.values.shape();
    if n > opts.cap {
        return Err(Error::CapExceeded { what: "gda training set", n, cap: opts.cap });
    }
    let groups = partition(labels, n, 2)?;
    let c = groups.len();
    if q == 0 || q > c - 1 {
        return Err(Error::Config(format!("GDA q = {q} outside 1..={} for {c} classes", c - 1)));
    }
    if !(opts.regularization_rel > 0.0) {
        return Err(Error::Config("GDA regularization must be positive".into()));
    }
    let kernel = match opts.kernel {
        Some(GdaKernel::Rbf { gamma }) if !(gamma > 0.0) => {
            return Err(Error::Config(format!("RBF gamma must be positive, got {gamma}")))
        }
        Some(k) => k,
        None => GdaKernel::Rbf { gamma: median_heuristic_gamma(&data.values) },
    };
    let rows = to_row_major(&data.values);
    let k = kernel_matrix(&rows, n, d, kernel);
    let (kc, row_means, grand) = center_kernel(&k);

    let mut e = DMatrix::zeros(n, c);
    for (col, (_, members)) in groups.iter().enumerate() {
        let v = 1.0 / (members.len() as f64).sqrt();
        for &i in members {
            e[(i, col)] = v;
        }
    }
    let b = &kc * &e;
    let within = &kc * &kc - &b * b.transpose();
    let scale = (k.trace() / n as f64).powi(2);
    if !(scale > 0.0) {
        return Err(Error::Degenerate("kernel matrix has zero trace".into()));
    }
    let base = opts.regularization_rel * scale;
    let mut lambda = base;
    let chol = loop {
        let mut m = within.clone();
        for i in 0..n {
            m[(i, i)] += lambda;
        }
        if let Some(ch) = nalgebra::Cholesky::new(m) {
            break ch;
        }
        if lambda >= base * MAX_REGULARIZATION_GROWTH {
            return Err(Error::Numeric(format!(
                "GDA within-class kernel term not positive definite at regularization {lambda:e}"
            )));
        }
        lambda *= 10.0;
    };
    let f = chol
        .l()
        .solve_lower_triangular(&b)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let svd = f.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    // nalgebra does not order singular values; sort descending.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let top = DMatrix::from_fn(n, q, |i, j| u[(i, order[j])]);
    let alpha = chol
        .l()
        .transpose()
        .solve_upper_triangular(&top)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let mut coefficients = alpha.transpose();
    sign_fix_rows(&mut coefficients);
    Ok(GdaModel {
        training: data.values.clone(),
        kernel,
        classes: groups.iter().map(|(c, _)| *c).collect(),
        coefficients,
        kernel_row_means: row_means,
        kernel_grand_mean: grand,
        regularization: lambda,
        eigenvalues: order.iter().take(q).map(|&i| svd.singular_values[i].powi(2)).collect(),
    })
}

/// Center the kernel vector of each new point with the training statistics
/// and apply the dual coefficients.
pub fn gda_project(model: &GdaModel, data: &DesignMatrix) -> Result<Embedding> {
    let (n, d) = model.training.shape();
    if data.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "model expects {d} bands, data has {}",
            data.cols()
        )));
    }
    let train = to_row_major(&model.training);
    let rows = to_row_major(&data.values);
    let q = model.dims();
    let out: Vec<Vec<f64>> = (0..data.rows())
        .into_par_iter()
        .map(|r| {
            let x = &rows[r * d..(r + 1) * d];
            let kx: Vec<f64> = (0..n).map(|i| model.kernel.eval(&train[i * d..(i + 1) * d], x)).collect();
            let mean_kx = kx.iter().sum::<f64>() / n as f64;
            let shift = model.kernel_grand_mean - mean_kx;
            (0..q)
                .map(|a| {
                    (0..n)
                        .map(|i| model.coefficients[(a, i)] * (kx[i] - model.kernel_row_means[i] + shift))
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(Embedding::new(DMatrix::from_fn(data.rows(), q, |i, a| out[i][a])))
}
