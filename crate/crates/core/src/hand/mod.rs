//! MANO-lite: a self-contained parametric hand.
//!
//! The parameter interface is the usual one, 16 axis-angle rotations packed
//! into a 48-vector `theta` (block 0 is the global root orientation) and a
//! 10-vector of linear shape coefficients `beta`. The skeleton is the
//! 21-joint layout used by most hand datasets:
//!
//! ```text
//! 0 wrist
//! 1-4   thumb  (CMC, MCP, IP, tip)
//! 5-8   index  (MCP, PIP, DIP, tip)
//! 9-12  middle
//! 13-16 ring
//! 17-20 pinky
//! ```
//!
//! The wrist and the first three joints of every finger carry rotations;
//! finger tips do not. Geometry values are artifact-defined and make no
//! attempt to match any licensed asset.

mod kinematics;
mod template;

pub use kinematics::{bone_lengths, forward, joint_flexion_angles, normalized_bone_lengths, HandOutput};
pub use template::{HandTemplate, TemplateDocument, TEMPLATE_FORMAT, TEMPLATE_VERSION};

use crate::{Error, Result};

pub const NUM_JOINTS: usize = 21;
pub const NUM_BONES: usize = 20;
pub const NUM_ARTICULATED: usize = 16;
pub const THETA_LEN: usize = 3 * NUM_ARTICULATED;
pub const BETA_LEN: usize = 10;

pub const WRIST: usize = 0;
/// Middle-finger MCP; the wrist-to-middle-MCP distance normalizes bones.
pub const MIDDLE_MCP: usize = 9;

pub const HAND_PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(0),
    Some(5),
    Some(6),
    Some(7),
    Some(0),
    Some(9),
    Some(10),
    Some(11),
    Some(0),
    Some(13),
    Some(14),
    Some(15),
    Some(0),
    Some(17),
    Some(18),
    Some(19),
];

/// Joints whose rotation occupies `theta[3k..3k + 3]` for slot `k`.
pub const ARTICULATED_JOINTS: [usize; NUM_ARTICULATED] = [0, 1, 2, 3, 5, 6, 7, 9, 10, 11, 13, 14, 15, 17, 18, 19];

/// Non-root joints with exactly one child, where a hinge angle is defined.
pub const FLEXION_JOINTS: [usize; 15] = [1, 2, 3, 5, 6, 7, 9, 10, 11, 13, 14, 15, 17, 18, 19];

/// Pose and shape parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HandParams {
    pub theta: [f64; THETA_LEN],
    pub beta: [f64; BETA_LEN],
}

impl Default for HandParams {
    fn default() -> Self {
        Self { theta: [0.0; THETA_LEN], beta: [0.0; BETA_LEN] }
    }
}

impl HandParams {
    pub fn new(theta: [f64; THETA_LEN], beta: [f64; BETA_LEN]) -> Result<Self> {
        let p = Self { theta, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn from_slices(theta: &[f64], beta: &[f64]) -> Result<Self> {
        let theta: [f64; THETA_LEN] =
            theta.try_into().map_err(|_| Error::dims(format!("theta has {} values, expected {THETA_LEN}", theta.len())))?;
        let beta: [f64; BETA_LEN] =
            beta.try_into().map_err(|_| Error::dims(format!("beta has {} values, expected {BETA_LEN}", beta.len())))?;
        Self::new(theta, beta)
    }

    /// Finite values and every per-joint rotation angle below 2*pi.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.theta.iter().chain(&self.beta).position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("hand parameter {i} is not finite")));
        }
        for k in 0..NUM_ARTICULATED {
            let angle = self.joint_rotation(k).norm();
            if angle >= std::f64::consts::TAU {
                return Err(Error::invalid(format!("joint slot {k} rotates by {angle} rad (>= 2 pi)")));
            }
        }
        Ok(())
    }

    /// Axis-angle of articulated slot `k`.
    pub fn joint_rotation(&self, k: usize) -> crate::Vec3 {
        crate::Vec3::new(self.theta[3 * k], self.theta[3 * k + 1], self.theta[3 * k + 2])
    }

    pub fn set_joint_rotation(&mut self, k: usize, v: &crate::Vec3) {
        self.theta[3 * k..3 * k + 3].copy_from_slice(v.as_slice());
    }
}
