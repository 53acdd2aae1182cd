//! End-to-end runs shared by the command line and the service.
//!
//! Provenance never contains the output directory or timestamps, so the same
//! configuration and seed yield the same bytes wherever they run.

mod config;
mod run;

pub use config::{
    EnhanceSpec, Method, MethodParams, PipelineConfig, ResolvedParams, DEFAULT_K, DEFAULT_LANDMARKS,
    DEFAULT_UNSUPERVISED_Q,
};
pub use run::{
    content_hash, enhance, fit, plan, project, read_gray_image, read_image_channels, render, run_batch, run_single, threshold_params,
    BatchOutcome, EnhanceOutcome, PageInputs, Plan, SingleOutcome, ThresholdSource,
};
