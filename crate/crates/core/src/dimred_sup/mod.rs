//! Supervised embeddings trained on labeled pixels: multiclass LDA (canonical
//! variates), kernel generalized discriminant analysis, and neighborhood
//! components analysis.
//!
//! Every fit takes one class label per design-matrix row; the caller removes
//! unlabeled rows beforehand.

mod gda;
mod lda;
mod nca;

pub use gda::{gda_fit, gda_project, median_heuristic_gamma, GdaKernel, GdaModel, GdaOptions, DEFAULT_GDA_CAP};
pub use lda::{lda_fit, lda_project, LdaModel, DEFAULT_SHRINKAGE};
pub use nca::{nca_fit, nca_objective, nca_project, NcaModel, NcaOptions, DEFAULT_NCA_CAP};

use crate::error::{Error, Result};

/// Rows of each class, classes ascending.
pub(crate) fn partition(labels: &[u8], n: usize, min_per_class: usize) -> Result<Vec<(u8, Vec<usize>)>> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{} labels for {n} rows", labels.len())));
    }
    let mut groups: std::collections::BTreeMap<u8, Vec<usize>> = Default::default();
    for (i, &c) in labels.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::MissingClass(format!(
            "need at least 2 classes, found {}",
            groups.len()
        )));
    }
    if let Some((c, rows)) = groups.iter().find(|(_, r)| r.len() < min_per_class) {
        return Err(Error::MissingClass(format!(
            "class {c} has {} samples, need at least {min_per_class}",
            rows.len()
        )));
    }
    Ok(groups.into_iter().collect())
}
