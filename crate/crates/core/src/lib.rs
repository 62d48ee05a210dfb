//! Egocentric activity indexing from sparse optical flow.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! * [`flow`]: grayscale frame ingestion, frame-rate normalization and
//!   per-cell Lucas-Kanade translation on a 32x32 grid.
//! * [`volume`]: 60-field blocks stacked into 32x32x120 volumes and the
//!   95th-percentile clamp-and-scale normalization.
//! * [`nn`]: double-precision layers (3D/2D convolution, max pooling, dense,
//!   ReLU, softmax) with exact backward passes, Xavier init and SGD.
//! * [`net`]: the compact 3D CNN, its training loop and transfer modes.
//! * [`segment`]: temporal-context score aggregation and activity timelines.
//! * [`analysis`]: metrics, dataset splits, class-kernel affinity and kernel
//!   flow-field rendering.
//! * [`synthetic`]: seeded motion-class volumes and textured frame pairs.
//! * [`formats`]: the little-endian binary containers shared by all stages.

pub mod analysis;
pub mod error;
pub mod flow;
pub mod formats;
pub mod net;
pub mod nn;
pub mod segment;
pub mod synthetic;
pub mod volume;

pub use error::{Error, Result};
pub use flow::{FlowField, Frame, GridGeometry, LkConfig};
pub use net::{Architecture, Engine, NetworkModel, TrainConfig, TrainMode};
pub use segment::{ActivityTimeline, ScoreSeries};
pub use volume::{FlowVolume, NormStats};

/// Target frame rate after normalization.
pub const TARGET_FPS: f64 = 15.0;
/// Flow grid resolution along each axis.
pub const GRID_SIZE: usize = 32;
/// Flow fields per input block.
pub const BLOCK_LEN: usize = 60;
/// Frames between consecutive block starts.
pub const BLOCK_STRIDE: usize = 30;
/// Depth of a stacked flow volume (u and v interleaved).
pub const VOLUME_DEPTH: usize = 2 * BLOCK_LEN;
/// Default temporal context for label aggregation.
pub const DEFAULT_ETA: usize = 21;
