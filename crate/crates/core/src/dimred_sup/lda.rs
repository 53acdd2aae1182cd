//! Multiclass linear discriminant analysis (canonical variates).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::partition;
use crate::cube_io::DesignMatrix;
use crate::dimred_unsup::affine_project;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::linalg::{column_means, sign_fix_rows, symmetric_eigen_desc};
use crate::model_io::{mat_serde, vec_serde};

pub const DEFAULT_SHRINKAGE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub classes: Vec<u8>,
    #[serde(with = "mat_serde")]
    pub class_means: DMatrix<f64>,
    #[serde(with = "vec_serde")]
    pub mean: DVector<f64>,
    #[serde(with = "mat_serde")]
    pub within_scatter: DMatrix<f64>,
    #[serde(with = "mat_serde")]
    pub between_scatter: DMatrix<f64>,
    /// Absolute shrinkage added to the within-class scatter diagonal.
    pub shrinkage: f64,
    /// `q × D` unit-length discriminant directions.
    #[serde(with = "mat_serde")]
    pub directions: DMatrix<f64>,
    /// All `D` generalized eigenvalues, non-increasing.
    pub eigenvalues: Vec<f64>,
}

impl LdaModel {
    pub fn dims(&self) -> usize {
        self.directions.nrows()
    }
}

/// Fit `q ≤ C − 1` discriminant directions maximizing between-class over
/// shrunk within-class scatter, `λ = shrinkage_rel · tr(S_w) / D`.
pub fn lda_fit(data: &DesignMatrix, labels: &[u8], q: usize, shrinkage_rel: f64) -> Result<LdaModel> {
    let (n, d) = data.values.shape();
    let groups = partition(labels, n, 2)?;
    let c = groups.len();
    if q == 0 || q > c - 1 {
        return Err(Error::Config(format!("LDA q = {q} outside 1..={} for {c} classes", c - 1)));
    }
    if !(shrinkage_rel >= 0.0) {
        return Err(Error::Config(format!("shrinkage must be non-negative, got {shrinkage_rel}")));
    }
    let x = &data.values;
    let mean = column_means(x);
    let mut class_means = DMatrix::zeros(c, d);
    let mut sw = DMatrix::zeros(d, d);
    let mut sb = DMatrix::zeros(d, d);
    for (k, (_, rows)) in groups.iter().enumerate() {
        let mu = DVector::from_fn(d, |j, _| rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / rows.len() as f64);
        for &i in rows {
            let diff = x.row(i).transpose() - &mu;
            sw += &diff * diff.transpose();
        }
        let dm = &mu - &mean;
        sb += (&dm * dm.transpose()) * rows.len() as f64;
        class_means.set_row(k, &mu.transpose());
    }
    let shrinkage = shrinkage_rel * sw.trace() / d as f64;
    let mut reg = sw.clone();
    for i in 0..d {
        reg[(i, i)] += shrinkage;
    }
    let chol = nalgebra::Cholesky::new(reg).ok_or_else(|| {
        Error::Degenerate("within-class scatter is singular; increase shrinkage".into())
    })?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let mut m = &l_inv * &sb * l_inv.transpose();
    m = (&m + m.transpose()) * 0.5;
    let (vals, vecs) = symmetric_eigen_desc(&m);
    // w = L⁻ᵀ v
    let w = l_inv.transpose() * vecs.columns(0, q);
    let mut directions = w.transpose();
    for mut row in directions.row_iter_mut() {
        let nrm = row.norm();
        if nrm > 0.0 {
            row /= nrm;
        }
    }
    sign_fix_rows(&mut directions);
    Ok(LdaModel {
        classes: groups.iter().map(|(c, _)| *c).collect(),
        class_means,
        mean,
        within_scatter: sw,
        between_scatter: sb,
        shrinkage,
        directions,
        eigenvalues: vals.iter().copied().collect(),
    })
}

/// `(x − global mean) · directionsᵀ`.
pub fn lda_project(model: &LdaModel, data: &DesignMatrix) -> Result<Embedding> {
    affine_project(&model.mean, &model.directions, data)
}
