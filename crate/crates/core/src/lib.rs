//! Learned non-maximum suppression.
//!
//! This crate holds the algorithmic core: box geometry, GreedyNMS, the
//! detection grid and its IoU / score-map input layers, a synthetic
//! crowded-scene generator, a small fully-convolutional re-scoring network
//! with hand-written backpropagation, the weighted logistic training loss,
//! Adam, and Pascal-VOC style evaluation.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. File formats, the CLI and everything else touching the OS live in
//! the companion `lnms` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![warn(missing_debug_implementations, rust_2018_idioms)]
// `!(x > 0.0)` is the NaN-rejecting form used by config validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod detections;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod labeling;
pub mod net;
pub mod nms;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod train;

pub use detections::{Annotation, Detection, Frame};
pub use error::{Error, Result};
pub use geometry::{iou, BBox};
pub use grid::{build_grid, DetectionGrid, FeatureConfig, FeatureStack};
pub use net::{NetConfig, Network, Real, ScoreMap, Tensor3};
pub use nms::{greedy_nms, NmsResult};
pub use train::{train, FrameSource, TrainConfig};
