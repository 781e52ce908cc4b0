//! Deterministic geometry and label-propagation toolkit for multi-modal
//! 3D detection pipelines.
//!
//! The crate covers the non-neural parts of a detector that mixes point
//! clouds with RGB views:
//!
//! - [`geom`] — pinhole cameras, the 8-value extrinsic code and all
//!   world↔image projection,
//! - [`boxes`] — 2D / 7-DoF 3D box algebra, rotated IoU and 3D NMS,
//! - [`lift`] — turning 2D detections plus a point cloud into 3D boxes
//!   and fusing them with model predictions,
//! - [`pseudo`] — assigning class tags to class-agnostic 3D predictions
//!   by minimum-cost bipartite matching,
//! - [`fuse`] — voxel-grid projection maps, image-feature resampling,
//!   modality switching and the uncertainty-weighted loss,
//! - [`harness`] — scene I/O, synthetic-scene generation, AP evaluation
//!   and the end-to-end pipeline behind the `lift3d` CLI.
//!
//! Everything is seeded and pure: identical inputs (and seeds) produce
//! bit-identical outputs, which the test suite leans on heavily.

pub mod boxes;
pub mod error;
pub mod fuse;
pub mod geom;
pub mod harness;
pub mod lift;
pub mod pseudo;

pub use error::{Error, Result};
