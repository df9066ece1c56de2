//! Lossless point-cloud geometry codec built around a learned multi-stage
//! occupancy-code predictor, plus the point-distribution analysis toolkit
//! (local density histograms, KL divergence, fractal dimension) and an
//! ablation harness over the model's configuration axes.
//!
//! Pipeline: world points are voxelized ([`geometry::quantize`]), expanded
//! into a multi-scale occupancy hierarchy ([`geometry::build_hierarchy`]),
//! and each scale's 8-bit occupancy codes are entropy-coded segment by
//! segment under probabilities produced by the predictor ([`model`]) through
//! a byte-renormalizing range coder ([`coder`]). The [`codec`] module ties
//! these into the `.gpcc` container; [`io`] handles PLY files and synthetic
//! corpus generation; [`analysis`] computes the distribution diagnostics.

pub mod analysis;
pub mod codec;
pub mod coder;
pub mod error;
pub mod geometry;
pub mod hash;
pub mod io;
pub mod model;

pub use error::{Error, Result};
