//! Isomap and landmark Isomap with out-of-sample triangulation.
//!
//! Both variants end in the same representation: a set of landmarks (every
//! training point for full Isomap), their geodesic rows, and the landmark-MDS
//! triangulation operator. A point `x` with squared landmark geodesics `δₓ`
//! is placed at `y = −½ L⁺ (δₓ − δ̄)`, where the rows of `L⁺` are `vᵢ/√λᵢ` and
//! `δ̄` is the mean column of the landmark squared-geodesic block.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::{dijkstra, geodesics, knn_graph, nearest_rows, NeighborGraph};
use super::mds::classical_mds;
use crate::cube_io::DesignMatrix;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::linalg::to_row_major;
use crate::model_io::mat_serde;

pub const DEFAULT_ISOMAP_CAP: usize = 2000;
pub const DEFAULT_LANDMARK_ISOMAP_CAP: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsomapOptions {
    pub k: usize,
    pub q: usize,
    pub cap: usize,
    /// Fit on the largest graph component instead of failing when disconnected.
    pub largest_component: bool,
}

impl Default for IsomapOptions {
    fn default() -> Self {
        IsomapOptions { k: 12, q: 3, cap: DEFAULT_ISOMAP_CAP, largest_component: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "seed")]
pub enum LandmarkSelection {
    /// Farthest-point traversal in geodesic distance, starting at row 0.
    MaxMin,
    Random(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsomapModel {
    /// `m × D` training spectra (after any component restriction).
    #[serde(with = "mat_serde")]
    pub training: DMatrix<f64>,
    pub landmark: bool,
    /// Landmark rows into `training`.
    pub landmark_indices: Vec<usize>,
    /// `L × m` geodesic distances from each landmark.
    #[serde(with = "mat_serde")]
    pub geodesics: DMatrix<f64>,
    /// `m × q` training embedding.
    #[serde(with = "mat_serde")]
    pub embedding: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// `q × L` triangulation operator.
    #[serde(with = "mat_serde")]
    pub triangulation: DMatrix<f64>,
    /// Mean squared landmark geodesic, one entry per landmark.
    pub mean_sq_geodesic: Vec<f64>,
    pub k: usize,
    pub rank_deficient: bool,
    /// Input rows excluded by the largest-component fallback.
    pub dropped_rows: Vec<usize>,
}

impl IsomapModel {
    pub fn dims(&self) -> usize {
        self.embedding.ncols()
    }
}

struct PreparedGraph {
    training: DMatrix<f64>,
    graph: NeighborGraph,
    dropped_rows: Vec<usize>,
}

fn prepare(data: &DesignMatrix, k: usize, cap: usize, largest_component: bool) -> Result<PreparedGraph> {
    let n = data.rows();
    if n > cap {
        return Err(Error::CapExceeded { what: "isomap training set", n, cap });
    }
    let graph = knn_graph(&data.values, k)?;
    let comp = graph.components();
    let count = comp.iter().max().map_or(0, |m| m + 1);
    if count <= 1 {
        return Ok(PreparedGraph { training: data.values.clone(), graph, dropped_rows: vec![] });
    }
    if !largest_component {
        return Err(Error::Disconnected { sizes: graph.component_sizes() });
    }
    let mut sizes = vec![0usize; count];
    for &c in &comp {
        sizes[c] += 1;
    }
    // Largest component; lowest id on ties.
    let best = (0..count).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).unwrap_or(0);
    let keep: Vec<usize> = (0..n).filter(|&i| comp[i] == best).collect();
    let dropped_rows = (0..n).filter(|&i| comp[i] != best).collect();
    Ok(PreparedGraph {
        training: data.values.select_rows(keep.iter()),
        graph: graph.induced(&keep),
        dropped_rows,
    })
}

fn check_q(q: usize) -> Result<()> {
    if q == 0 {
        return Err(Error::InvalidInput("target dimension q must be at least 1".into()));
    }
    Ok(())
}

/// Triangulation operator and `δ̄` from a landmark distance block.
fn landmark_mds(
    block: &DMatrix<f64>,
    q: usize,
) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>, Vec<f64>, bool)> {
    let mds = classical_mds(block, q)?;
    let l = block.nrows();
    let mut op = DMatrix::zeros(q, l);
    for c in 0..q {
        let lambda = mds.eigenvalues[c];
        if lambda > 0.0 {
            op.set_row(c, &(mds.vectors.column(c).transpose() / lambda.sqrt()));
        }
    }
    let mean_sq: Vec<f64> =
        (0..l).map(|i| block.row(i).iter().map(|d| d * d).sum::<f64>() / l as f64).collect();
    Ok((op, mean_sq, mds.embedding, mds.eigenvalues, mds.rank_deficient))
}

fn triangulate(op: &DMatrix<f64>, mean_sq: &[f64], sq_geodesics: &[f64]) -> DVector<f64> {
    let delta = DVector::from_iterator(mean_sq.len(), sq_geodesics.iter().zip(mean_sq).map(|(d, m)| d - m));
    (op * delta) * -0.5
}

/// k-NN graph, all-pairs geodesics, classical MDS.
pub fn isomap_embed(data: &DesignMatrix, opts: IsomapOptions) -> Result<IsomapModel> {
    check_q(opts.q)?;
    let prep = prepare(data, opts.k, opts.cap, opts.largest_component)?;
    let geo = geodesics(&prep.graph, None)?;
    let (triangulation, mean_sq_geodesic, embedding, eigenvalues, rank_deficient) =
        landmark_mds(&geo, opts.q)?;
    let m = prep.training.nrows();
    Ok(IsomapModel {
        training: prep.training,
        landmark: false,
        landmark_indices: (0..m).collect(),
        geodesics: geo,
        embedding,
        eigenvalues,
        triangulation,
        mean_sq_geodesic,
        k: opts.k,
        rank_deficient,
        dropped_rows: prep.dropped_rows,
    })
}

/// Landmark Isomap: geodesics only from `landmarks` chosen points, MDS on
/// the landmark block, triangulation for everything else.
pub fn landmark_isomap_embed(
    data: &DesignMatrix,
    opts: IsomapOptions,
    landmarks: usize,
    selection: LandmarkSelection,
) -> Result<IsomapModel> {
    check_q(opts.q)?;
    if landmarks < opts.q + 1 || landmarks > data.rows() {
        return Err(Error::InvalidInput(format!(
            "landmark count {landmarks} outside {}..={}",
            opts.q + 1,
            data.rows()
        )));
    }
    let prep = prepare(data, opts.k, opts.cap, opts.largest_component)?;
    let m = prep.training.nrows();
    let landmarks = landmarks.min(m);
    if landmarks < opts.q + 1 {
        return Err(Error::InvalidInput(format!(
            "largest component has {m} points, fewer than q + 1 landmarks"
        )));
    }

    let (landmark_indices, rows) = match selection {
        LandmarkSelection::MaxMin => {
            let mut chosen = vec![0usize];
            let mut rows = vec![dijkstra(&prep.graph, 0)];
            let mut nearest = rows[0].clone();
            while chosen.len() < landmarks {
                let mut best = 0;
                for i in 1..m {
                    if nearest[i] > nearest[best] {
                        best = i;
                    }
                }
                let row = dijkstra(&prep.graph, best);
                for (acc, &d) in nearest.iter_mut().zip(&row) {
                    *acc = acc.min(d);
                }
                chosen.push(best);
                rows.push(row);
            }
            (chosen, rows)
        }
        LandmarkSelection::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pool: Vec<usize> = (0..m).collect();
            for i in 0..landmarks {
                let j = rng.random_range(i..m);
                pool.swap(i, j);
            }
            pool.truncate(landmarks);
            let rows = pool.par_iter().map(|&s| dijkstra(&prep.graph, s)).collect();
            (pool, rows)
        }
    };
    let mut geo = DMatrix::zeros(landmarks, m);
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            geo[(r, c)] = v;
        }
    }
    let mut block = DMatrix::from_fn(landmarks, landmarks, |i, j| geo[(i, landmark_indices[j])]);
    for i in 0..landmarks {
        for j in (i + 1)..landmarks {
            let v = block[(i, j)].min(block[(j, i)]);
            block[(i, j)] = v;
            block[(j, i)] = v;
        }
    }
    let (triangulation, mean_sq_geodesic, _, eigenvalues, rank_deficient) =
        landmark_mds(&block, opts.q)?;

    let columns: Vec<DVector<f64>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let sq: Vec<f64> = (0..landmarks).map(|l| geo[(l, j)].powi(2)).collect();
            triangulate(&triangulation, &mean_sq_geodesic, &sq)
        })
        .collect();
    let embedding = DMatrix::from_fn(m, opts.q, |i, c| columns[i][c]);

    Ok(IsomapModel {
        training: prep.training,
        landmark: true,
        landmark_indices,
        geodesics: geo,
        embedding,
        eigenvalues,
        triangulation,
        mean_sq_geodesic,
        k: opts.k,
        rank_deficient,
        dropped_rows: prep.dropped_rows,
    })
}

/// Place new spectra by triangulation.
///
/// Geodesics from `x` to each landmark are approximated through its `k`
/// nearest training points `t`: `min_t ‖x − t‖ + g(t, landmark)`.
pub fn isomap_project(model: &IsomapModel, data: &DesignMatrix) -> Result<Embedding> {
    let d = model.training.ncols();
    if data.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "model expects {d} bands, data has {}",
            data.cols()
        )));
    }
    let train = to_row_major(&model.training);
    let queries = to_row_major(&data.values);
    let l = model.landmark_indices.len();
    let q = model.dims();
    // Landmark-major geodesics transposed for contiguous per-training-point access.
    let geo_t = to_row_major(&model.geodesics.transpose());
    let k = model.k.max(1);
    let rows: Vec<Vec<f64>> = (0..data.rows())
        .into_par_iter()
        .map(|i| {
            let x = &queries[i * d..(i + 1) * d];
            let nbrs = nearest_rows(&train, d, x, k, None);
            let mut best = vec![f64::INFINITY; l];
            for &(t, dist) in &nbrs {
                let g = &geo_t[t * l..(t + 1) * l];
                for (b, &gv) in best.iter_mut().zip(g) {
                    *b = b.min(dist + gv);
                }
            }
            best.iter_mut().for_each(|v| *v *= *v);
            triangulate(&model.triangulation, &model.mean_sq_geodesic, &best).iter().copied().collect()
        })
        .collect();
    Ok(Embedding::new(DMatrix::from_fn(data.rows(), q, |i, c| rows[i][c])))
}
