//! Two-class Fisher criterion per channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FISHER_EPSILON: f64 = 1e-12;
/// Reported ceiling; reached when both classes have zero variance.
pub const FISHER_CAP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherResult {
    pub per_channel: Vec<f64>,
    pub best: f64,
    /// Lowest-index channel attaining `best`.
    pub best_channel: usize,
    /// Pixel counts of the two classes.
    pub counts: [usize; 2],
}

/// `J = (μ_a − μ_b)² / (σ_a² + σ_b² + ε)` per channel, with population
/// variances (divisor n), capped at [`FISHER_CAP`].
pub fn fisher_score(channels: &[Vec<f64>], labels: &[u8], classes: (u8, u8)) -> Result<FisherResult> {
    if channels.is_empty() {
        return Err(Error::InvalidInput("no channels to score".into()));
    }
    if let Some(c) = channels.iter().find(|c| c.len() != labels.len()) {
        return Err(Error::DimensionMismatch(format!(
            "channel has {} values but {} labels",
            c.len(),
            labels.len()
        )));
    }
    let (a, b) = classes;
    if a == b {
        return Err(Error::Config(format!("classes must differ, got ({a}, {b})")));
    }
    let rows_a: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == a).collect();
    let rows_b: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == b).collect();
    for (class, rows) in [(a, &rows_a), (b, &rows_b)] {
        if rows.is_empty() {
            return Err(Error::MissingClass(format!("no pixels labeled {class}")));
        }
    }
    let moments = |plane: &[f64], rows: &[usize]| {
        let n = rows.len() as f64;
        let mean = rows.iter().map(|&i| plane[i]).sum::<f64>() / n;
        let var = rows.iter().map(|&i| (plane[i] - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    };
    let per_channel: Vec<f64> = channels
        .iter()
        .map(|plane| {
            let (ma, va) = moments(plane, &rows_a);
            let (mb, vb) = moments(plane, &rows_b);
            ((ma - mb).powi(2) / (va + vb + FISHER_EPSILON)).min(FISHER_CAP)
        })
        .collect();
    if per_channel.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite Fisher score".into()));
    }
    let mut best_channel = 0;
    for (c, &v) in per_channel.iter().enumerate() {
        if v > per_channel[best_channel] {
            best_channel = c;
        }
    }
    Ok(FisherResult {
        best: per_channel[best_channel],
        best_channel,
        per_channel,
        counts: [rows_a.len(), rows_b.len()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_variance_classes_hit_the_cap() {
        let r = fisher_score(&[vec![0.0, 0.0, 1.0, 1.0]], &[1, 1, 2, 2], (1, 2)).unwrap();
        assert_eq!(r.best, FISHER_CAP);
    }

    #[test]
    fn identical_distributions_score_zero() {
        let r = fisher_score(&[vec![0.2, 0.6, 0.2, 0.6]], &[1, 1, 2, 2], (1, 2)).unwrap();
        assert!(r.best.abs() < 1e-12);
    }

    #[test]
    fn hand_computed_value() {
        let r = fisher_score(&[vec![0.0, 0.2, 0.8, 1.0]], &[1, 1, 2, 2], (1, 2)).unwrap();
        // ε shifts the value by 32·ε/0.02 ≈ 1.6e-9.
        assert!((r.best - 32.0).abs() < 1e-8);
    }

    #[test]
    fn best_channel_and_counts() {
        let chans = vec![vec![0.5, 0.4, 0.5, 0.6, 0.0], vec![0.0, 0.2, 0.8, 1.0, 0.3]];
        let r = fisher_score(&chans, &[1, 1, 2, 2, 3], (1, 2)).unwrap();
        assert_eq!(r.best_channel, 1);
        assert_eq!(r.counts, [2, 2]);
    }

    #[test]
    fn missing_class_is_an_error() {
        assert!(matches!(fisher_score(&[vec![0.1, 0.2]], &[1, 3], (1, 2)), Err(Error::MissingClass(_))));
    }

    proptest! {
        #[test]
        fn positive_affine_invariance(
            values in proptest::collection::vec(0.0..1.0f64, 8..40),
            scale in 0.1..100.0f64,
            shift in -10.0..10.0f64,
        ) {
            let labels: Vec<u8> = (0..values.len()).map(|i| 1 + (i % 2) as u8).collect();
            let moved: Vec<f64> = values.iter().map(|v| scale * v + shift).collect();
            let j0 = fisher_score(&[values], &labels, (1, 2)).unwrap().best;
            let j1 = fisher_score(&[moved], &labels, (1, 2)).unwrap().best;
            // ε breaks exact invariance only when variances are negligible.
            prop_assert!((j0 - j1).abs() <= 1e-9 * j0.max(1.0));
        }
    }
}
