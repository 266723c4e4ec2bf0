//! Event-based stereo visual-inertial odometry.
//!
//! The crate is organised along the processing chain:
//!
//! * [`event`] turns raw event streams into exponentially decaying time surfaces,
//! * [`tracking`] detects corners on those surfaces and tracks them over time and
//!   across the stereo pair,
//! * [`msckf`] is an error-state Kalman filter with a sliding window of pose
//!   clones and in-state map points,
//! * [`voxel`] organises map points in a spatial hash and decides which ones enter
//!   the filter and which new ones are admitted,
//! * [`pipeline`] wires the above together frame by frame,
//! * [`sim`] produces synthetic stereo event and IMU streams with ground truth, and
//! * [`eval`] computes aligned trajectory errors and timing summaries.

// `!(a > b)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod eval;
pub mod event;
pub mod msckf;
pub mod pipeline;
pub mod sim;
pub mod tracking;
pub mod voxel;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use eval::{TimingReport, Trajectory};
pub use event::{Event, LastEventMap, Polarity, StereoEventFrame, TimeSurface};
pub use msckf::{CameraParams, Filter, ImuSample, NoiseParams};
pub use pipeline::{run_pipeline, PipelineOutput, Variant};
pub use voxel::{InsertOutcome, MapPoint, VoxelKey, VoxelMap};

/// Identifier of a tracked feature; never reused within a run.
pub type FeatureId = u64;

/// Monotone identifier of a stereo frame.
pub type FrameId = u64;
