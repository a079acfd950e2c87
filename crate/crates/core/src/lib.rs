//! Allocation-only building blocks for an agent that explores a 360° panorama
//! through retina-like glimpses.
//!
//! The crate is `no_std` (it needs `alloc`) and contains everything that is
//! plain arithmetic over pixels and patch ids:
//!
//! - [`geometry`]: the 16×8 block grid, block/patch indexing, glimpse footprints
//!   and the pixel budget of a glimpse sequence.
//! - [`image`]: a channel-last RGB float image and a boolean mask.
//! - [`retina`]: the foveated glimpse sensor and the full-resolution target crop.
//! - [`memory`]: the fit-in matrix, the slotted fit-in feature vector and the
//!   gather plans used to rebuild both inside a differentiable graph.
//! - [`loss`]: scalar reference implementations of every loss term and the
//!   attention target derived from reconstruction error.
//! - [`select`] and [`policy`]: next-glimpse selection for the learned policy
//!   and the baseline policies.
//! - [`metrics`]: MSE/RMSE reporting metrics.
//!
//! The trainable networks and all IO live in the `lookout` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod geometry;
pub mod image;
pub mod loss;
pub mod memory;
pub mod metrics;
pub mod policy;
pub mod retina;
pub mod select;

pub use error::{Error, Result};
pub use geometry::{BlockIndex, GridGeometry, Visited, GRID_COLS, GRID_ROWS, PATCH_COUNT};
pub use image::{Image, Mask};
pub use loss::{AttentionTarget, LossBreakdown};
pub use memory::{FitInFeatureVector, FitInMatrix, MatrixView};
pub use policy::PolicyKind;
pub use retina::{Resolution, RetinaGlimpse};
pub use select::SelectMode;
