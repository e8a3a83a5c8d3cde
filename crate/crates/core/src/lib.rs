//! Compressive background subtraction: random Gaussian sensing of video
//! frames, sparse Bayesian and greedy reconstruction of the foreground, and
//! the metrics used to score the recovered frames.
//!
//! ```no_run
//! use csbg::{bcs_reconstruct, compress, BcsConfig, DesignMatrix, FrameVector};
//!
//! # fn main() -> csbg::Result<()> {
//! let background = FrameVector::background(vec![100.0; 256])?;
//! let mut pixels = vec![100.0; 256];
//! pixels[17] = 160.0;
//! let frame = FrameVector::frame(pixels)?;
//! let phi = DesignMatrix::generate(64, 256, 7)?;
//! let g = compress(&phi, &frame, &background, 0)?;
//! let result = bcs_reconstruct(&phi, &g, &BcsConfig::default())?;
//! println!("support: {:?}", result.support());
//! # Ok(())
//! # }
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod image;
pub mod metrics;
pub mod pipeline;
pub mod sensing;
pub mod solvers;

pub use error::{Error, Result};
pub use image::Image;
pub use metrics::{
    aggregate, bs_quality, evaluate_frame, psnr, reconstruction_error, ssim, MetricSettings,
    MetricsRecord, SsimParams, Summary,
};
pub use pipeline::{run_experiment, ExperimentConfig, ExperimentReport, FrameSequence};
pub use sensing::{
    compress, compress_against, DesignMatrix, FrameRole, FrameVector, MeasurementVector,
};
pub use solvers::{
    bcs_reconstruct, mt_bcs_reconstruct, omp_reconstruct, BcsConfig, OmpConfig,
    ReconstructionResult, SolverKind, StopReason,
};
