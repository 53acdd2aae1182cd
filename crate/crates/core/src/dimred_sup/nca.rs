//! Neighborhood components analysis.
//!
//! Maximizes the expected number of correctly classified points under a
//! stochastic nearest-neighbor rule in the space `z = A x`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::partition;
use crate::cube_io::DesignMatrix;
use crate::dimred_unsup::pca_fit;
use crate::embedding::Embedding;
use crate::error::{Error, Result};

pub const DEFAULT_NCA_CAP: usize = 1000;
const REL_TOL: f64 = 1e-7;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcaOptions {
    pub max_iter: usize,
    /// First step length, relative to `‖A‖_F / ‖∇f‖_F`.
    pub step_init: f64,
    /// Seeds a tiny perturbation of the PCA initialization.
    pub seed: u64,
    pub cap: usize,
}

impl Default for NcaOptions {
    fn default() -> Self {
        NcaOptions { max_iter: 200, step_init: 0.1, seed: 0, cap: DEFAULT_NCA_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcaModel {
    /// `q × D`
    #[serde(with = "crate::model_io::mat_serde")]
    pub transform: DMatrix<f64>,
    /// Objective at the start and after each accepted step.
    pub objective_trace: Vec<f64>,
    pub n: usize,
    pub seed: u64,
    pub step_init: f64,
    pub final_step: f64,
}

impl NcaModel {
    pub fn dims(&self) -> usize {
        self.transform.nrows()
    }
}

/// `f(A) = Σᵢ Σ_{j ∈ class(i), j ≠ i} p_ij` and its gradient `∂f/∂A`.
pub fn nca_objective(a: &DMatrix<f64>, x: &DMatrix<f64>, labels: &[u8]) -> (f64, DMatrix<f64>) {
    let (n, d) = x.shape();
    let q = a.nrows();
    let z = x * a.transpose();
    // Per point: p_i and the gradient contribution Σ_k w_ik (z_i − z_k)(x_i − x_k)ᵀ.
    let parts: Vec<(f64, DMatrix<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let logits: Vec<f64> = (0..n)
                .map(|k| {
                    if k == i {
                        f64::NEG_INFINITY
                    } else {
                        -(0..q).map(|a| (z[(i, a)] - z[(k, a)]).powi(2)).sum::<f64>()
                    }
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= total);
            let pi: f64 = (0..n).filter(|&k| k != i && labels[k] == labels[i]).map(|k| p[k]).sum();
            let mut g = DMatrix::zeros(q, d);
            for k in 0..n {
                if k == i || p[k] == 0.0 {
                    continue;
                }
                let same = if labels[k] == labels[i] { 1.0 } else { 0.0 };
                let w = p[k] * (pi - same);
                for r in 0..q {
                    let dz = w * (z[(i, r)] - z[(k, r)]);
                    for c in 0..d {
                        g[(r, c)] += dz * (x[(i, c)] - x[(k, c)]);
                    }
                }
            }
            (pi, g)
        })
        .collect();
    let mut f = 0.0;
    let mut grad = DMatrix::zeros(q, d);
    for (pi, g) in parts {
        f += pi;
        grad += g;
    }
    (f, grad * 2.0)
}

/// Full-batch gradient ascent from the whitened PCA basis.
pub fn nca_fit(data: &DesignMatrix, labels: &[u8], q: usize, opts: NcaOptions) -> Result<NcaModel> {
    let (n, d) = data.values.shape();
    if n > opts.cap {
        return Err(Error::CapExceeded { what: "nca training set", n, cap: opts.cap });
    }
    partition(labels, n, 1)?;
    if q == 0 || q > d {
        return Err(Error::Config(format!("NCA q = {q} outside 1..={d}")));
    }
    if !(opts.step_init > 0.0) {
        return Err(Error::Config("NCA step_init must be positive".into()));
    }
    let pca = pca_fit(data, q.min(n - 1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut a = DMatrix::from_fn(q, d, |r, c| {
        let base = match pca.eigenvalues.get(r) {
            Some(&l) if l > 0.0 => pca.components[(r, c)] / l.sqrt(),
            _ => 0.0,
        };
        base + 1e-6 * (rng.random::<f64>() - 0.5)
    });

    let x = &data.values;
    let (mut f, mut g) = nca_objective(&a, x, labels);
    let mut trace = vec![f];
    let gnorm = g.norm();
    let mut step = if gnorm > 0.0 { opts.step_init * a.norm() / gnorm } else { 0.0 };
    for _ in 0..opts.max_iter {
        if step == 0.0 || g.norm() == 0.0 {
            break;
        }
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = &a + &g * step;
            let (ft, gt) = nca_objective(&trial, x, labels);
            if ft > f {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((a_new, f_new, g_new)) = accepted else { break };
        let rel = (f_new - f) / f.abs().max(1e-300);
        a = a_new;
        f = f_new;
        g = g_new;
        trace.push(f);
        step *= 1.2;
        if rel < REL_TOL {
            break;
        }
    }
    Ok(NcaModel {
        transform: a,
        objective_trace: trace,
        n,
        seed: opts.seed,
        step_init: opts.step_init,
        final_step: step,
    })
}

/// `x · Aᵀ` for every row.
pub fn nca_project(model: &NcaModel, data: &DesignMatrix) -> Result<Embedding> {
    if data.cols() != model.transform.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} bands, data has {}",
            model.transform.ncols(),
            data.cols()
        )));
    }
    Ok(Embedding::new(&data.values * model.transform.transpose()))
}
