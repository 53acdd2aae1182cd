//! Classical (Torgerson) multidimensional scaling.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::top_symmetric_eigen;

#[derive(Debug, Clone, PartialEq)]
pub struct MdsResult {
    /// `m × q` coordinates scaled by `√λ`.
    pub embedding: DMatrix<f64>,
    /// `q` eigenvalues, non-increasing; zero where a column was padded.
    pub eigenvalues: Vec<f64>,
    /// `m × q` unit eigenvectors (zero columns where padded).
    pub vectors: DMatrix<f64>,
    /// Fewer than `q` positive eigenvalues were available.
    pub rank_deficient: bool,
}

/// Relative size below which an eigenvalue counts as zero.
const POSITIVE_EIGEN_RTOL: f64 = 1e-10;

/// Embed a symmetric zero-diagonal distance matrix into `q` dimensions.
///
/// `B = −½ J D⁽²⁾ J` with `J = I − 11ᵀ/m`; coordinates are the top-`q`
/// positive eigenvectors of `B` scaled by `√λ`.
pub fn classical_mds(distances: &DMatrix<f64>, q: usize) -> Result<MdsResult> {
    let m = distances.nrows();
    if distances.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "distance matrix is {}x{}",
            m,
            distances.ncols()
        )));
    }
    if q == 0 {
        return Err(Error::InvalidInput("MDS target dimension must be at least 1".into()));
    }
    for i in 0..m {
        for j in (i + 1)..m {
            if (distances[(i, j)] - distances[(j, i)]).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "distance matrix asymmetric at ({i},{j}): {} vs {}",
                    distances[(i, j)],
                    distances[(j, i)]
                )));
            }
        }
    }
    let b = double_center_squared(distances);
    let (vals, vecs) = top_symmetric_eigen(&b, q);
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut embedding = DMatrix::zeros(m, q);
    let mut vectors = DMatrix::zeros(m, q);
    let mut eigenvalues = vec![0.0; q];
    let mut kept = 0;
    for c in 0..vals.len() {
        let lambda = vals[c];
        if scale > 0.0 && lambda > POSITIVE_EIGEN_RTOL * scale {
            eigenvalues[c] = lambda;
            vectors.set_column(c, &vecs.column(c));
            embedding.set_column(c, &(vecs.column(c) * lambda.sqrt()));
            kept += 1;
        } else {
            break;
        }
    }
    Ok(MdsResult { embedding, eigenvalues, vectors, rank_deficient: kept < q })
}

/// `−½ J D⁽²⁾ J` for a square distance matrix.
pub fn double_center_squared(distances: &DMatrix<f64>) -> DMatrix<f64> {
    let m = distances.nrows();
    let sq = distances.map(|d| d * d);
    let row_means: Vec<f64> = (0..m).map(|i| sq.row(i).sum() / m as f64).collect();
    let col_means: Vec<f64> = (0..m).map(|j| sq.column(j).sum() / m as f64).collect();
    let grand = row_means.iter().sum::<f64>() / m as f64;
    DMatrix::from_fn(m, m, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - col_means[j] + grand))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairwise(points: &[[f64; 2]]) -> DMatrix<f64> {
        let n = points.len();
        DMatrix::from_fn(n, n, |i, j| {
            ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt()
        })
    }

    #[test]
    fn right_triangle_distances_survive() {
        let d = pairwise(&[[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]]);
        let r = classical_mds(&d, 2).unwrap();
        assert!(!r.rank_deficient);
        let e = &r.embedding;
        let dist = |i: usize, j: usize| (e.row(i) - e.row(j)).norm();
        assert!((dist(0, 1) - 3.0).abs() < 1e-9);
        assert!((dist(0, 2) - 4.0).abs() < 1e-9);
        assert!((dist(1, 2) - 5.0).abs() < 1e-9);
        assert!(r.eigenvalues[0] >= r.eigenvalues[1]);
    }

    #[test]
    fn zero_distances_give_flagged_zero_embedding() {
        let r = classical_mds(&DMatrix::zeros(4, 4), 2).unwrap();
        assert!(r.rank_deficient);
        assert!(r.embedding.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_many_dimensions_are_padded() {
        let d = pairwise(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        let r = classical_mds(&d, 2).unwrap();
        assert!(r.rank_deficient);
        assert!(r.embedding.column(1).iter().all(|&v| v == 0.0));
        assert_eq!(r.eigenvalues[1], 0.0);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let mut d = pairwise(&[[0.0, 0.0], [1.0, 0.0]]);
        d[(0, 1)] += 1e-6;
        assert!(classical_mds(&d, 1).is_err());
    }

    #[test]
    fn double_centering_rows_sum_to_zero() {
        let b = double_center_squared(&pairwise(&[[0.0, 1.0], [3.0, 0.5], [2.0, 2.0], [1.0, -1.0]]));
        for i in 0..4 {
            assert!(b.row(i).sum().abs() < 1e-12);
        }
    }
}
