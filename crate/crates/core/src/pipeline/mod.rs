//! Frame handling, synthetic data, configuration and the experiment driver.

pub mod bundle;
pub mod config;
pub mod experiment;
pub mod frames;
pub mod synth;

pub use bundle::VectorBundle;
pub use config::{parse_dims, parse_seeds, DataSource, ExperimentConfig};
pub use experiment::{
    load_data, metrics_csv, run_experiment, ExperimentReport, FrameOutcome, CSV_HEADER,
};
pub use frames::{
    decode_frame, encode_pgm, ground_truth, list_frames, load_frame, preprocess, render_mask,
    resize_area, write_pgm, RenderedMask,
};
pub use synth::{synth_dataset, FrameSequence, ObjectShape, SynthConfig, SyntheticData};
