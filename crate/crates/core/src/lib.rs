//! Multispectral palimpsest enhancement.
//!
//! Load a registered band stack, fit one of eight dimensionality-reduction
//! methods (five unsupervised, three trained on operator labels), project
//! every pixel, and render the result as a contrast-stretched image. The
//! operator-driven double-threshold technique and a Fisher separability score
//! for ranking methods live alongside.

pub mod cube_io;
pub mod dimred_sup;
pub mod dimred_unsup;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model_io;
mod optim;
pub mod pipeline;
pub mod render;
pub mod threshold;

pub use error::{Error, ErrorKind, Result};
