//! Depth-aware video panoptic segmentation: fusion of network head outputs,
//! cross-frame instance stitching, and the PQ / VPQ / DVPQ / depth metrics.

pub mod cli;
pub mod dataset_io;
pub mod error;
pub mod fusion;
pub mod metrics_depth;
pub mod metrics_panoptic;
pub mod stitch;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{ClassInfo, ClassKind, DepthMap, Frame, LabelSpec, PanopticMap, SegmentId, Sequence};
