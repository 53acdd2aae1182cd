//! Limited-memory BFGS ascent with a backtracking (Armijo) line search.
//!
//! Steps are accepted only when the objective strictly increases, so the
//! returned trace is monotone.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop when the relative objective change of an accepted step is below this.
    pub rel_tol: f64,
    /// Stop when the gradient infinity-norm is below this.
    pub grad_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions { max_iter: 100, memory: 8, rel_tol: 1e-10, grad_tol: 1e-9 }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Objective at the start and after each accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximize `f`, which returns `(value, gradient)` or `None` where undefined.
///
/// `f(x0)` must be defined.
pub fn lbfgs_maximize<F>(mut f: F, x0: Vec<f64>, opts: LbfgsOptions) -> Option<LbfgsResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let (mut value, mut grad) = f(&x0)?;
    let mut x = x0;
    let mut trace = vec![value];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        let gmax = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if gmax < opts.grad_tol {
            break;
        }
        // Two-loop recursion on the negated problem, giving an ascent direction.
        let mut dir = grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &dir);
            dir.iter_mut().zip(y).for_each(|(d, yv)| *d -= a * yv);
            alphas.push(a);
        }
        let scale = history
            .back()
            .map(|(s, y, _)| dot(s, y) / dot(y, y))
            .unwrap_or_else(|| 1.0 / gmax.max(1e-300));
        dir.iter_mut().for_each(|d| *d *= scale);
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, sv)| *d += (a - b) * sv);
        }
        let mut slope = dot(&grad, &dir);
        if !(slope > 0.0) {
            history.clear();
            dir = grad.iter().map(|g| g / gmax).collect();
            slope = dot(&grad, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            if let Some((v, g)) = f(&trial) {
                if v.is_finite() && v > value && v >= value + 1e-4 * step * slope {
                    accepted = Some((trial, v, g));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, v_new, g_new)) = accepted else { break };
        iterations += 1;

        // Curvature pair for the minimization of -f.
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            history.push_back((s, y, 1.0 / sy));
            if history.len() > opts.memory {
                history.pop_front();
            }
        }
        let rel = (v_new - value).abs() / value.abs().max(1e-300);
        x = x_new;
        value = v_new;
        grad = g_new;
        trace.push(value);
        if rel < opts.rel_tol {
            break;
        }
    }
    Some(LbfgsResult { x, value, trace, iterations })
}
