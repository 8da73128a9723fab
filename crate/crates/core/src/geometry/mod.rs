//! Shared geometric primitives.
//!
//! Image quantities are in pixels, world quantities in millimeters. Points
//! are plain `nalgebra` vectors; the types defined here carry invariants
//! (orthonormal rotations, positive camera scale, ordered boxes) that are
//! checked once at construction.

mod bbox;
mod camera;
mod pnp;
mod procrustes;
mod rotation;

pub use bbox::{bbox_of_points, iou, Box2};
pub use camera::{fit_weak_camera, project_weak, weak_residual, PerspectiveCamera, WeakPerspectiveCamera};
pub use pnp::{refine_pnp, solve_pnp, solve_pnp_detailed, PnpSolution, PNP_MAX_ITERATIONS, PNP_MIN_DECREASE};
pub use procrustes::{procrustes_align, Similarity};
pub use rotation::Rotation3;

use crate::{Error, Result};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;

/// Rigid transform taking object-frame points into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6Dof {
    pub rotation: Rotation3,
    pub translation: Vec3,
}

impl Pose6Dof {
    pub fn new(rotation: Rotation3, translation: Vec3) -> Result<Self> {
        if !finite3(&translation) {
            return Err(Error::invalid("pose translation is not finite"));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Rotation3::identity(), translation: Vec3::zeros() }
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation.matrix() * p + self.translation
    }

    /// Angle of the relative rotation between two poses, in radians.
    pub fn rotation_error(&self, other: &Pose6Dof) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn translation_error(&self, other: &Pose6Dof) -> f64 {
        (self.translation - other.translation).norm()
    }
}

pub(crate) fn finite2(p: &Vec2) -> bool {
    p.x.is_finite() && p.y.is_finite()
}

pub(crate) fn finite3(p: &Vec3) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.z.is_finite()
}

pub(crate) fn check_finite3(pts: &[Vec3], what: &str) -> Result<()> {
    match pts.iter().position(|p| !finite3(p)) {
        Some(i) => Err(Error::invalid(format!("{what}[{i}] is not finite"))),
        None => Ok(()),
    }
}

pub(crate) fn check_finite2(pts: &[Vec2], what: &str) -> Result<()> {
    match pts.iter().position(|p| !finite2(p)) {
        Some(i) => Err(Error::invalid(format!("{what}[{i}] is not finite"))),
        None => Ok(()),
    }
}
