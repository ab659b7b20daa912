//! Shuffled group convolution networks for unordered point clouds.
//!
//! The crate provides a small reverse-mode tensor engine ([`tensor`]), point
//! cloud geometry ([`pointcloud`]), the grouped-convolution/channel-shuffle
//! unit ([`sgc`]), hierarchical classification and segmentation models
//! ([`model`]), analytic complexity accounting ([`complexity`]) and a
//! deterministic training loop ([`training`]).

// `!(x > 0.0)` is used to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::field_reassign_with_default)]

pub mod complexity;
pub mod error;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod pointcloud;
pub mod rng;
pub mod sgc;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Result, SpnError};
