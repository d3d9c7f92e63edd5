//! Category-level object pose from 2D–3D correspondences with the metric
//! size recovered on a separate branch.
//!
//! The object's metric scale comes from a category mean plus a relative
//! offset ([`scale`]); model points in normalized object coordinates
//! ([`nocs`]) are scaled by it and handed to a RANSAC-PnP solver ([`pnp`]).
//! Because perspective projection is invariant to a common scaling of
//! the scene, scale errors only reach the translation and never the
//! rotation. [`synth`] measures this against a depth-based similarity
//! alignment baseline, and [`eval`] provides the NOCS-style 3D IoU /
//! rotation / translation mAP metrics.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod nocs;
pub mod pnp;
pub mod scale;
pub mod synth;
