//! Tracking-by-detection over pluggable perception.
//!
//! `flowtrack` turns per-frame detections, box-prompted mask hypotheses and
//! dense optical flow into labeled spatio-temporal mask tracks. The neural
//! models live behind the [`perception::Perception`] trait; this crate ships a
//! file-backed provider that replays recorded model outputs and a synthetic
//! oracle provider for verification.
//!
//! The modules, bottom-up:
//!
//! * [`geometry`], [`mask`], [`flow`], [`detection`]: boxes, run-length
//!   encoded masks, flow fields and detections.
//! * [`motion`]: forward-backward consistency and the per-axis box motion fit.
//! * [`perception`]: the provider contract and the file-backed provider.
//! * [`engine`]: the tracker state machine.
//! * [`simulator`]: synthetic scenes with exact ground truth and an oracle
//!   provider.
//! * [`metrics`]: J, F, J&F, spatio-temporal IoU, AR/mAR and HOTA.

pub mod detection;
pub mod engine;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod mask;
pub mod metrics;
pub mod motion;
pub mod perception;
pub mod records;
pub mod simulator;

pub use detection::{Detection, FrameMasks};
pub use error::{Error, Result};
pub use flow::FlowField;
pub use geometry::BBox;
pub use mask::{BinaryMask, Bitmap};
