//! PCA and probabilistic PCA, sharing the [`LinearModel`] projection.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cube_io::DesignMatrix;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::linalg::{center_rows, column_means, sign_fix_rows};
use crate::model_io::{mat_serde, vec_serde};

/// Mean plus `q × D` component rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    #[serde(with = "vec_serde")]
    pub mean: DVector<f64>,
    #[serde(with = "mat_serde")]
    pub components: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Isotropic noise variance (PPCA); 0 for PCA.
    pub noise_variance: f64,
    /// PPCA only: whether EM reached the tolerance before `max_iter`.
    #[serde(default = "yes")]
    pub converged: bool,
    /// PPCA only: log-likelihood after each EM iteration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log_likelihood_trace: Vec<f64>,
}

fn yes() -> bool {
    true
}

impl LinearModel {
    pub fn dims(&self) -> usize {
        self.components.nrows()
    }
}

/// Principal components of the sample covariance (divisor `N − 1`).
///
/// Computed from the SVD of the centered data rather than by forming the
/// covariance.
pub fn pca_fit(data: &DesignMatrix, q: usize) -> Result<LinearModel> {
    let (n, d) = data.values.shape();
    if n < 2 {
        return Err(Error::InvalidInput(format!("PCA needs at least 2 rows, got {n}")));
    }
    if q == 0 || q > d.min(n - 1) {
        return Err(Error::InvalidInput(format!(
            "q = {q} outside 1..={} for {n}x{d} data",
            d.min(n - 1)
        )));
    }
    let mean = column_means(&data.values);
    let centered = center_rows(&data.values, &mean);
    if centered.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("all rows identical; covariance is zero".into()));
    }
    let svd = nalgebra::linalg::SVD::new(centered, false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Numeric("SVD produced no right vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let mut components = DMatrix::zeros(q, d);
    let mut eigenvalues = Vec::with_capacity(q);
    for (row, &src) in order.iter().take(q).enumerate() {
        components.set_row(row, &v_t.row(src));
        let s = svd.singular_values[src];
        eigenvalues.push((s * s / (n - 1) as f64).max(0.0));
    }
    sign_fix_rows(&mut components);
    Ok(LinearModel {
        mean,
        components,
        eigenvalues,
        noise_variance: 0.0,
        converged: true,
        log_likelihood_trace: Vec::new(),
    })
}

/// `(x − mean) · componentsᵀ` for every row.
pub fn project_linear(model: &LinearModel, data: &DesignMatrix) -> Result<Embedding> {
    affine_project(&model.mean, &model.components, data)
}

pub(crate) fn affine_project(
    mean: &DVector<f64>,
    directions: &DMatrix<f64>,
    data: &DesignMatrix,
) -> Result<Embedding> {
    if data.cols() != mean.len() {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} bands, data has {}",
            mean.len(),
            data.cols()
        )));
    }
    let centered = center_rows(&data.values, mean);
    Ok(Embedding::new(centered * directions.transpose()))
}

/// Options for [`ppca_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpcaOptions {
    /// Stop when the relative log-likelihood improvement drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PpcaOptions {
    fn default() -> Self {
        PpcaOptions { tol: 1e-10, max_iter: 2000 }
    }
}

/// Gaussian log-likelihood of the PPCA model `C = W Wᵀ + σ² I` given the
/// ML sample covariance `s` (divisor N).
fn ppca_log_likelihood(w: &DMatrix<f64>, sigma2: f64, s: &DMatrix<f64>, n: usize) -> f64 {
    let d = s.nrows();
    let mut c = w * w.transpose();
    for i in 0..d {
        c[(i, i)] += sigma2;
    }
    let chol = match nalgebra::Cholesky::new(c) {
        Some(ch) => ch,
        None => return f64::NEG_INFINITY,
    };
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let trace = chol.solve(s).trace();
    -0.5 * n as f64 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + trace)
}

/// Probabilistic PCA by EM (latent factors with isotropic noise).
///
/// The reported components are an orthonormal, sign-fixed basis of the
/// fitted loading span, ordered by the variance they carry; `eigenvalues`
/// are the model variances `sᵢ² + σ²` along them.
pub fn ppca_fit(data: &DesignMatrix, q: usize, opts: PpcaOptions) -> Result<LinearModel> {
    let (n, d) = data.values.shape();
    if n < 2 {
        return Err(Error::InvalidInput(format!("PPCA needs at least 2 rows, got {n}")));
    }
    if q == 0 || q >= d {
        return Err(Error::InvalidInput(format!("PPCA needs 1 <= q < D, got q = {q}, D = {d}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput("PPCA tolerance must be positive".into()));
    }
    let mean = column_means(&data.values);
    let centered = center_rows(&data.values, &mean);
    let s = centered.tr_mul(&centered) / n as f64;
    let total_var = s.trace() / d as f64;
    if !(total_var > 0.0) {
        return Err(Error::Degenerate("all rows identical; covariance is zero".into()));
    }

    // Fixed pseudo-random start keeps fits reproducible without a seed argument.
    let mut rng = ChaCha8Rng::seed_from_u64(0x99ca);
    let scale = total_var.sqrt();
    let mut w = DMatrix::from_fn(d, q, |_, _| (rng.random::<f64>() - 0.5) * scale);
    let mut sigma2 = total_var;
    let mut trace = vec![ppca_log_likelihood(&w, sigma2, &s, n)];
    let mut converged = false;
    let eye_q = DMatrix::<f64>::identity(q, q);

    for _ in 0..opts.max_iter {
        let m = w.tr_mul(&w) + &eye_q * sigma2;
        let m_inv = m
            .try_inverse()
            .ok_or_else(|| Error::Numeric("PPCA latent covariance is singular".into()))?;
        let sw = &s * &w;
        let inner = &eye_q * sigma2 + &m_inv * w.tr_mul(&sw);
        let inner_inv = inner
            .try_inverse()
            .ok_or_else(|| Error::Numeric("PPCA EM update is singular".into()))?;
        let w_new = &sw * inner_inv;
        let sigma2_new = ((&s - &sw * &m_inv * w_new.transpose()).trace() / d as f64)
            .max(f64::MIN_POSITIVE);
        w = w_new;
        sigma2 = sigma2_new;
        let ll = ppca_log_likelihood(&w, sigma2, &s, n);
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(ll);
        if ((ll - prev) / prev.abs().max(1e-300)).abs() < opts.tol {
            converged = true;
            break;
        }
    }

    let svd = nalgebra::linalg::SVD::new(w.clone(), true, false);
    let u = svd.u.ok_or_else(|| Error::Numeric("SVD produced no left vectors".into()))?;
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let mut components = DMatrix::zeros(q, d);
    let mut eigenvalues = Vec::with_capacity(q);
    for (row, &src) in order.iter().enumerate() {
        components.set_row(row, &u.column(src).transpose());
        eigenvalues.push(svd.singular_values[src].powi(2) + sigma2);
    }
    sign_fix_rows(&mut components);
    Ok(LinearModel {
        mean,
        components,
        eigenvalues,
        noise_variance: sigma2,
        converged,
        log_likelihood_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(rows: usize, cols: usize, v: &[f64]) -> DesignMatrix {
        DesignMatrix::from_values(DMatrix::from_row_slice(rows, cols, v))
    }

    fn seeded(n: usize, d: usize, seed: u64) -> DesignMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Correlated columns so the spectrum is well spread.
        let base = DMatrix::from_fn(n, d, |_, _| rng.random::<f64>() - 0.5);
        let mix = DMatrix::from_fn(d, d, |i, j| if i <= j { 1.0 / (1.0 + (j - i) as f64) } else { 0.1 });
        DesignMatrix::from_values(base * mix)
    }

    #[test]
    fn rank_one_diagonal_data() {
        let data = dm(4, 2, &[1.0, 1.0, -1.0, -1.0, 2.0, 2.0, -2.0, -2.0]);
        let m = pca_fit(&data, 2).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!((m.components[(0, 0)] - r).abs() < 1e-12);
        assert!((m.components[(0, 1)] - r).abs() < 1e-12);
        assert!(m.eigenvalues[1].abs() < 1e-12);
        assert!(m.eigenvalues[1] >= 0.0);
        assert!((m.eigenvalues[0] - 20.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn axis_aligned_variances() {
        // x has variance 4, y variance 1 (divisor N-1).
        let xs = [-2.0, 2.0, -2.0, 2.0, 0.0];
        let ys = [1.0, 1.0, -1.0, -1.0, 0.0];
        let v: Vec<f64> = xs.iter().zip(ys).flat_map(|(&x, y)| [x, y]).collect();
        let m = pca_fit(&dm(5, 2, &v), 1).unwrap();
        assert!((m.components[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((m.eigenvalues[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let data = dm(3, 2, &[0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);
        assert!(matches!(pca_fit(&data, 1), Err(Error::Degenerate(_))));
        assert!(matches!(pca_fit(&data, 3), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn mean_projects_to_zero_and_full_rank_reconstructs() {
        let data = seeded(30, 4, 1);
        let m = pca_fit(&data, 4).unwrap();
        let mean_row = DesignMatrix::from_values(DMatrix::from_row_slice(1, 4, m.mean.as_slice()));
        let z = project_linear(&m, &mean_row).unwrap();
        assert!(z.values.iter().all(|v| v.abs() < 1e-15));
        let emb = project_linear(&m, &data).unwrap();
        let recon = &emb.values * &m.components;
        let centered = center_rows(&data.values, &m.mean);
        assert!((recon - centered).abs().max() < 1e-10);
        let gram = &m.components * m.components.transpose();
        assert!((gram - DMatrix::identity(4, 4)).abs().max() < 1e-8);
    }

    #[test]
    fn exact_rank_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let latent = DMatrix::from_fn(25, 2, |_, _| rng.random::<f64>());
        let load = DMatrix::from_fn(2, 5, |_, _| rng.random::<f64>());
        let data = DesignMatrix::from_values(latent * load);
        let m = pca_fit(&data, 2).unwrap();
        let emb = project_linear(&m, &data).unwrap();
        let recon = &emb.values * &m.components;
        assert!((recon - center_rows(&data.values, &m.mean)).abs().max() < 1e-10);
    }

    #[test]
    fn projected_variance_bounded_by_total() {
        let data = seeded(40, 5, 2);
        let m = pca_fit(&data, 2).unwrap();
        let centered = center_rows(&data.values, &m.mean);
        let total: f64 = centered.iter().map(|v| v * v).sum();
        let emb = project_linear(&m, &data).unwrap();
        let kept: f64 = emb.values.iter().map(|v| v * v).sum();
        assert!(kept <= total + 1e-12);
    }

    #[test]
    fn projection_dimension_mismatch() {
        let m = pca_fit(&seeded(10, 3, 0), 1).unwrap();
        assert!(project_linear(&m, &seeded(2, 4, 0)).is_err());
    }

    #[test]
    fn em_log_likelihood_is_monotone() {
        let data = seeded(100, 5, 11);
        let m = ppca_fit(&data, 2, PpcaOptions { tol: 1e-12, max_iter: 500 }).unwrap();
        for w in m.log_likelihood_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
        assert!(m.noise_variance > 0.0);
    }

    #[test]
    fn near_rank_q_data_has_small_noise() {
        let jitter = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let latent = DMatrix::from_fn(80, 2, |_, _| rng.random::<f64>() - 0.5);
        let load = DMatrix::from_fn(2, 5, |_, _| rng.random::<f64>() - 0.5);
        let noise = DMatrix::from_fn(80, 5, |_, _| (rng.random::<f64>() - 0.5) * 2.0 * jitter);
        let data = DesignMatrix::from_values(latent * load + noise);
        let m = ppca_fit(&data, 2, PpcaOptions::default()).unwrap();
        assert!(m.noise_variance <= jitter * 10.0, "{}", m.noise_variance);
    }

    #[test]
    fn ppca_rejects_full_rank_q() {
        assert!(ppca_fit(&seeded(10, 3, 0), 3, PpcaOptions::default()).is_err());
    }
}
