//! Keypoint-driven articulated occupancy for human hands.
//!
//! The pipeline runs skeleton → [`canonicalization`] (per-bone rigid
//! transforms into a canonical pose) → [`occupancy`] (part-based neural
//! occupancy) → [`surface`] (meshing and metrics) and [`grasp`]
//! (interpenetration losses and refinement). [`training`] supplies an
//! analytic capsule hand as ground truth. Everything that touches keypoints
//! is differentiable through [`diffcore`].

pub mod canonicalization;
pub mod diffcore;
mod error;
pub mod geometry;
pub mod grasp;
pub mod occupancy;
pub mod par;
pub mod skeleton;
pub mod surface;
pub mod training;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
