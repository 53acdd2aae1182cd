//! Gaussian process latent variable model.
//!
//! Latent coordinates `X` and kernel hyperparameters are fitted by maximizing
//! the GP marginal likelihood of the centered outputs `Y`:
//!
//! `L = −(D/2)·ln|K| − ½·tr(K⁻¹ Y Yᵀ) − (N·D/2)·ln 2π`
//!
//! with `K = σ_f²·exp(−γ/2·‖xᵢ − xⱼ‖²) + (σ_n² + c·(σ_f² + σ_n²))·I`, where
//! `c` is the relative jitter. The optimizer works on `(X, ln σ_f², ln γ, ln σ_n²)`.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pca::{pca_fit, project_linear};
use crate::cube_io::DesignMatrix;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::linalg::{center_rows, column_means, row_sq_dist, to_row_major};
use crate::model_io::mat_serde;
use crate::optim::{lbfgs_maximize, LbfgsOptions};

pub const DEFAULT_GPLVM_CAP: usize = 500;
const MAX_RELATIVE_JITTER: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GplvmOptions {
    pub max_iter: usize,
    /// Initial relative jitter; escalated ×10 up to 1e-2 when needed.
    pub jitter: f64,
    /// Seeds a small perturbation of the PCA initialization.
    pub seed: u64,
    pub cap: usize,
}

impl Default for GplvmOptions {
    fn default() -> Self {
        GplvmOptions { max_iter: 100, jitter: 1e-8, seed: 0, cap: DEFAULT_GPLVM_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GplvmModel {
    #[serde(with = "mat_serde")]
    pub latent: DMatrix<f64>,
    pub signal_variance: f64,
    pub inverse_length_scale: f64,
    pub noise_variance: f64,
    /// Raw training spectra `n × D`.
    #[serde(with = "mat_serde")]
    pub training_outputs: DMatrix<f64>,
    pub relative_jitter: f64,
    pub initial_objective: f64,
    pub objective: f64,
    /// Objective at the start and after each accepted optimizer step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl GplvmModel {
    pub fn dims(&self) -> usize {
        self.latent.ncols()
    }
}

/// Log-space hyperparameters `(ln σ_f², ln γ, ln σ_n²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogHypers {
    pub log_signal: f64,
    pub log_gamma: f64,
    pub log_noise: f64,
}

/// Objective value and its gradient.
#[derive(Debug, Clone)]
pub struct GplvmEval {
    pub value: f64,
    /// `n × q` gradient w.r.t. the latent coordinates.
    pub grad_latent: DMatrix<f64>,
    /// Gradient w.r.t. `(ln σ_f², ln γ, ln σ_n²)`.
    pub grad_hypers: [f64; 3],
}

fn rbf_matrix(latent: &DMatrix<f64>, signal: f64, gamma: f64) -> DMatrix<f64> {
    let n = latent.nrows();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = signal;
        for j in (i + 1)..n {
            let v = signal * (-0.5 * gamma * row_sq_dist(latent, i, latent, j)).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn factor(k_rbf: &DMatrix<f64>, diag: f64) -> Option<Cholesky<f64, Dyn>> {
    let mut k = k_rbf.clone();
    for i in 0..k.nrows() {
        k[(i, i)] += diag;
    }
    Cholesky::new(k)
}

/// Evaluate the marginal log-likelihood and its analytic gradient at a fixed
/// relative jitter. `y` must already be column-centered. Returns `None` when
/// the kernel is not positive definite.
pub fn gplvm_objective(
    latent: &DMatrix<f64>,
    hypers: LogHypers,
    y: &DMatrix<f64>,
    relative_jitter: f64,
) -> Option<GplvmEval> {
    let (n, q) = latent.shape();
    let d = y.ncols() as f64;
    let signal = hypers.log_signal.exp();
    let gamma = hypers.log_gamma.exp();
    let noise = hypers.log_noise.exp();
    let jitter = relative_jitter * (signal + noise);
    let k_rbf = rbf_matrix(latent, signal, gamma);
    let chol = factor(&k_rbf, noise + jitter)?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let alpha = chol.solve(y);
    let data_fit: f64 = alpha.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
    let value = -0.5 * d * log_det
        - 0.5 * data_fit
        - 0.5 * n as f64 * d * (2.0 * std::f64::consts::PI).ln();
    if !value.is_finite() {
        return None;
    }

    // dL/dK = ½ (α αᵀ − D K⁻¹)
    let k_inv = chol.inverse();
    let g = (&alpha * alpha.transpose() - k_inv * d) * 0.5;

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; q];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let w = 2.0 * g[(i, j)] * k_rbf[(i, j)] * -gamma;
                for (a, o) in out.iter_mut().enumerate() {
                    *o += w * (latent[(i, a)] - latent[(j, a)]);
                }
            }
            out
        })
        .collect();
    let grad_latent = DMatrix::from_fn(n, q, |i, a| rows[i][a]);

    let mut g_signal = 0.0;
    let mut g_gamma = 0.0;
    let mut trace_g = 0.0;
    for i in 0..n {
        trace_g += g[(i, i)];
        for j in 0..n {
            let kij = k_rbf[(i, j)];
            g_signal += g[(i, j)] * kij;
            if i != j {
                let r2 = row_sq_dist(latent, i, latent, j);
                g_gamma += g[(i, j)] * kij * (-0.5 * gamma * r2);
            }
        }
    }
    g_signal += relative_jitter * signal * trace_g;
    let g_noise = (1.0 + relative_jitter) * noise * trace_g;

    Some(GplvmEval { value, grad_latent, grad_hypers: [g_signal, g_gamma, g_noise] })
}

fn pack(latent: &DMatrix<f64>, h: LogHypers) -> Vec<f64> {
    let mut v: Vec<f64> = to_row_major(latent);
    v.extend([h.log_signal, h.log_gamma, h.log_noise]);
    v
}

fn unpack(v: &[f64], n: usize, q: usize) -> (DMatrix<f64>, LogHypers) {
    let latent = DMatrix::from_row_slice(n, q, &v[..n * q]);
    let h = LogHypers { log_signal: v[n * q], log_gamma: v[n * q + 1], log_noise: v[n * q + 2] };
    (latent, h)
}

/// Fit a GPLVM initialized from PCA.
pub fn gplvm_fit(data: &DesignMatrix, q: usize, opts: GplvmOptions) -> Result<GplvmModel> {
    let (n, d) = data.values.shape();
    if n > opts.cap {
        return Err(Error::CapExceeded { what: "gplvm training set", n, cap: opts.cap });
    }
    if q == 0 {
        return Err(Error::InvalidInput("target dimension q must be at least 1".into()));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!("GPLVM needs at least 2 rows, got {n}")));
    }
    let mean = column_means(&data.values);
    let y = center_rows(&data.values, &mean);
    let out_var = y.iter().map(|v| v * v).sum::<f64>() / (n * d) as f64;
    if !(out_var > 0.0) {
        return Err(Error::Degenerate("all rows identical".into()));
    }

    // PCA scores where available, zero-padded when q exceeds what PCA allows.
    let pca_q = q.min(d).min(n - 1);
    let pca = pca_fit(data, pca_q)?;
    let scores = project_linear(&pca, data)?.values;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let spread = (scores.iter().map(|v| v * v).sum::<f64>() / (n * pca_q) as f64).sqrt().max(1e-6);
    let latent0 = DMatrix::from_fn(n, q, |i, a| {
        let base = if a < pca_q { scores[(i, a)] / spread } else { 0.0 };
        base + 1e-3 * (rng.random::<f64>() - 0.5)
    });
    let mut sq: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            sq.push(row_sq_dist(&latent0, i, &latent0, j));
        }
    }
    sq.sort_by(f64::total_cmp);
    let median = sq.get(sq.len() / 2).copied().filter(|m| *m > 0.0).unwrap_or(1.0);
    let h0 = LogHypers {
        log_signal: (0.9 * out_var).ln(),
        log_gamma: (1.0 / median).ln(),
        log_noise: (0.1 * out_var).ln(),
    };

    // Smallest relative jitter on the ladder that factors at the start point.
    let mut jitter = opts.jitter.max(0.0);
    let initial = loop {
        if let Some(e) = gplvm_objective(&latent0, h0, &y, jitter) {
            break e;
        }
        if jitter >= MAX_RELATIVE_JITTER {
            return Err(Error::Numeric(
                "GPLVM kernel not positive definite after jitter escalation".into(),
            ));
        }
        jitter = (jitter.max(1e-12) * 10.0).min(MAX_RELATIVE_JITTER);
    };

    let result = lbfgs_maximize(
        |v| {
            let (latent, h) = unpack(v, n, q);
            // Keep hyperparameters in a sane numeric range.
            if [h.log_signal, h.log_gamma, h.log_noise].iter().any(|x| x.abs() > 50.0) {
                return None;
            }
            gplvm_objective(&latent, h, &y, jitter).map(|e| {
                let mut g = to_row_major(&e.grad_latent);
                g.extend(e.grad_hypers);
                (e.value, g)
            })
        },
        pack(&latent0, h0),
        LbfgsOptions { max_iter: opts.max_iter, ..Default::default() },
    )
    .ok_or_else(|| Error::Numeric("GPLVM objective undefined at initialization".into()))?;

    let (latent, h) = unpack(&result.x, n, q);
    Ok(GplvmModel {
        latent,
        signal_variance: h.log_signal.exp(),
        inverse_length_scale: h.log_gamma.exp(),
        noise_variance: h.log_noise.exp(),
        training_outputs: data.values.clone(),
        relative_jitter: jitter,
        initial_objective: initial.value,
        objective: result.value,
        objective_trace: result.trace,
        iterations: result.iterations,
    })
}

/// Normalized similarity weights of `y` against every training output.
pub fn gplvm_weights(model: &GplvmModel, y: &[f64]) -> Vec<f64> {
    let t = &model.training_outputs;
    let half_gamma = 0.5 * model.inverse_length_scale;
    let logits: Vec<f64> = (0..t.nrows())
        .map(|n| {
            let s: f64 = y.iter().enumerate().map(|(c, v)| (v - t[(n, c)]).powi(2)).sum();
            -half_gamma * s
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Out-of-sample rule: similarity-weighted average of training latents.
pub fn gplvm_project(model: &GplvmModel, data: &DesignMatrix) -> Result<Embedding> {
    let d = model.training_outputs.ncols();
    if data.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "model expects {d} bands, data has {}",
            data.cols()
        )));
    }
    let q = model.dims();
    let rows = to_row_major(&data.values);
    let out: Vec<Vec<f64>> = (0..data.rows())
        .into_par_iter()
        .map(|i| {
            let w = gplvm_weights(model, &rows[i * d..(i + 1) * d]);
            (0..q)
                .map(|a| w.iter().enumerate().map(|(n, wn)| wn * model.latent[(n, a)]).sum())
                .collect()
        })
        .collect();
    Ok(Embedding::new(DMatrix::from_fn(data.rows(), q, |i, a| out[i][a])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded(n: usize, d: usize, seed: u64) -> DesignMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DesignMatrix::from_values(DMatrix::from_fn(n, d, |_, _| rng.random::<f64>()))
    }

    #[test]
    fn micro_instance_is_finite() {
        let data = seeded(3, 2, 1);
        let m = gplvm_fit(&data, 1, GplvmOptions::default()).unwrap();
        assert!(m.latent.iter().all(|v| v.is_finite()));
        assert!(m.signal_variance > 0.0 && m.inverse_length_scale > 0.0 && m.noise_variance > 0.0);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let data = seeded(12, 3, 4);
        let mut y = data.values.clone();
        for mut c in y.column_iter_mut() {
            let m = c.mean();
            c.add_scalar_mut(-m);
        }
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
        let h = 1e-5;
        for iters in [0, 1, 3, 8, 20] {
            let m = gplvm_fit(&data, 2, GplvmOptions { seed: 4, max_iter: iters, ..Default::default() }).unwrap();
            let hyp = LogHypers {
                log_signal: m.signal_variance.ln(),
                log_gamma: m.inverse_length_scale.ln(),
                log_noise: m.noise_variance.ln(),
            };
            let at = |x: &DMatrix<f64>, hp: LogHypers| gplvm_objective(x, hp, &y, m.relative_jitter).unwrap();
            let g = at(&m.latent, hyp);
            for i in 0..m.latent.len() {
                let (mut up, mut dn) = (m.latent.clone(), m.latent.clone());
                up[i] += h;
                dn[i] -= h;
                let fd = (at(&up, hyp).value - at(&dn, hyp).value) / (2.0 * h);
                assert!(rel(fd, g.grad_latent[i]) < 1e-4, "latent {i} after {iters}: {fd} vs {}", g.grad_latent[i]);
            }
            for k in 0..3 {
                let shift = |s: f64| {
                    let mut p = hyp;
                    match k {
                        0 => p.log_signal += s,
                        1 => p.log_gamma += s,
                        _ => p.log_noise += s,
                    }
                    p
                };
                let fd = (at(&m.latent, shift(h)).value - at(&m.latent, shift(-h)).value) / (2.0 * h);
                assert!(rel(fd, g.grad_hypers[k]) < 1e-4, "hyper {k} after {iters}: {fd} vs {}", g.grad_hypers[k]);
            }
        }
    }

    #[test]
    fn objective_does_not_decrease() {
        for seed in 0..3 {
            let data = seeded(20, 3, seed);
            let m = gplvm_fit(&data, 2, GplvmOptions { seed, max_iter: 40, ..Default::default() }).unwrap();
            assert!(m.objective >= m.initial_objective, "{} < {}", m.objective, m.initial_objective);
            assert!(m.objective_trace.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn cap_is_enforced() {
        let data = seeded(12, 2, 0);
        let opts = GplvmOptions { cap: 10, ..Default::default() };
        assert!(matches!(gplvm_fit(&data, 1, opts), Err(Error::CapExceeded { .. })));
    }

    fn toy_model(latent: DMatrix<f64>, outputs: DMatrix<f64>) -> GplvmModel {
        GplvmModel {
            latent,
            signal_variance: 1.0,
            inverse_length_scale: 2.0,
            noise_variance: 0.1,
            training_outputs: outputs,
            relative_jitter: 1e-8,
            initial_objective: 0.0,
            objective: 0.0,
            objective_trace: vec![],
            iterations: 0,
        }
    }

    #[test]
    fn isolated_training_point_maps_to_its_latent() {
        let outputs = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 100.0, 0.0, 0.0, 100.0]);
        let latent = DMatrix::from_row_slice(3, 1, &[-1.0, 0.5, 2.0]);
        let m = toy_model(latent, outputs.clone());
        let emb = gplvm_project(&m, &DesignMatrix::from_values(outputs)).unwrap();
        for (i, z) in [-1.0, 0.5, 2.0].iter().enumerate() {
            assert!((emb.values[(i, 0)] - z).abs() < 1e-6);
        }
    }

    #[test]
    fn weights_are_a_distribution() {
        let data = seeded(15, 3, 2);
        let m = toy_model(DMatrix::zeros(15, 1), data.values.clone());
        for y in [[0.3, 0.2, 0.9], [5.0, -5.0, 0.0]] {
            let w = gplvm_weights(&m, &y);
            assert!(w.iter().all(|&v| v >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn equidistant_point_between_equal_latents() {
        let outputs = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 0.0]);
        let latent = DMatrix::from_row_slice(2, 2, &[0.7, -0.2, 0.7, -0.2]);
        let m = toy_model(latent, outputs);
        let emb = gplvm_project(&m, &DesignMatrix::from_values(DMatrix::from_row_slice(1, 2, &[1.0, 3.0]))).unwrap();
        assert!((emb.values[(0, 0)] - 0.7).abs() < 1e-12);
        assert!((emb.values[(0, 1)] + 0.2).abs() < 1e-12);
    }
}
