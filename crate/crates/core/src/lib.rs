//! Geometric and algorithmic core for joint 3D hand and object pose
//! estimation with video pseudo-label selection.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: rotations, weak-perspective and pinhole cameras, PnP,
//!   similarity (Procrustes) alignment and 2D boxes.
//! - [`hand`]: a self-contained parametric hand (48 pose values, 10 shape
//!   values) with forward kinematics, linear blend skinning and the bone /
//!   flexion measurements used for plausibility checks.
//! - [`attention`]: the hand-object cross-attention block with analytic
//!   gradients, heatmap decoding and the training losses.
//! - [`object`]: grid-based control point decoding and 6-DoF recovery.
//! - [`filter`]: spatial and temporal pseudo-label selection.
//! - [`metrics`]: aligned errors, F-scores and PCK/PCV curves.
//! - [`synth`] and [`io`]: the synthetic sequence generator and file formats
//!   consumed by the `hopose` command-line tool.

pub mod attention;
mod error;
pub mod filter;
pub mod geometry;
pub mod hand;
pub mod io;
pub mod metrics;
pub mod object;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{Vec2, Vec3};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/hand_model.md")]
    mod hand_model {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/object_pose.md")]
    mod object_pose {}
    #[doc = include_str!("../../../book/src/pseudo_labels.md")]
    mod pseudo_labels {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
