//! Unsupervised embeddings: PCA, probabilistic PCA, GPLVM, Isomap and
//! landmark Isomap.

mod gplvm;
mod graph;
mod isomap;
mod mds;
mod pca;

pub use gplvm::{
    gplvm_fit, gplvm_objective, gplvm_project, gplvm_weights, GplvmEval, GplvmModel, GplvmOptions,
    LogHypers, DEFAULT_GPLVM_CAP,
};
pub use graph::{dijkstra, geodesics, knn_graph, NeighborGraph, DUPLICATE_EDGE_WEIGHT};
pub use isomap::{
    isomap_embed, isomap_project, landmark_isomap_embed, IsomapModel, IsomapOptions,
    LandmarkSelection, DEFAULT_ISOMAP_CAP, DEFAULT_LANDMARK_ISOMAP_CAP,
};
pub use mds::{classical_mds, double_center_squared, MdsResult};
pub use pca::{pca_fit, ppca_fit, project_linear, LinearModel, PpcaOptions};
pub(crate) use pca::affine_project;
