use nalgebra::Matrix3;

use super::Vec3;
use crate::{Error, Result};

const ORTHO_TOL: f64 = 1e-9;

/// A proper rotation stored as a 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Default for Rotation3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Rodrigues' formula. The vector direction is the axis, its norm the
    /// angle in radians.
    pub fn from_axis_angle(v: &Vec3) -> Self {
        let angle = v.norm();
        let k = skew(v);
        if angle < 1e-8 {
            // second-order series keeps the result orthonormal to ~1e-24
            return Self(Matrix3::identity() + k + 0.5 * k * k);
        }
        let k = k / angle;
        let (s, c) = angle.sin_cos();
        Self(Matrix3::identity() + s * k + (1.0 - c) * k * k)
    }

    /// Accepts a matrix that is orthonormal with determinant +1 to 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("rotation matrix is not finite"));
        }
        let gram_err = (m.transpose() * m - Matrix3::identity()).amax();
        let det = m.determinant();
        if gram_err > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::invalid(format!("matrix is not a rotation (orthogonality error {gram_err:.2e}, det {det})")));
        }
        Ok(Self(m))
    }

    /// Nearest rotation in the Frobenius sense (polar factor with a
    /// determinant fix).
    pub fn nearest(m: &Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("matrix is not finite"));
        }
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::degenerate("svd failed while orthonormalizing")),
        };
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Ok(Self(u * d * v_t))
    }

    /// Logarithm map. Stable away from angle pi; at pi the axis sign is
    /// arbitrary.
    pub fn to_axis_angle(&self) -> Vec3 {
        let m = &self.0;
        let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let angle = cos.acos();
        let w = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
        if angle < 1e-6 {
            return 0.5 * w;
        }
        if std::f64::consts::PI - angle < 1e-6 {
            // R = 2 a a^T - I near pi
            let b = (m + Matrix3::identity()) * 0.5;
            let col = (0..3).max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)])).unwrap_or(0);
            let mut axis = Vec3::new(b[(0, col)], b[(1, col)], b[(2, col)]);
            axis /= axis.norm();
            return axis * angle;
        }
        w * (angle / (2.0 * angle.sin()))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, rhs: &Rotation3) -> Self {
        Self(self.0 * rhs.0)
    }

    pub fn rotate(&self, p: &Vec3) -> Vec3 {
        self.0 * p
    }

    /// Geodesic distance in radians.
    pub fn angle_to(&self, other: &Rotation3) -> f64 {
        let rel = self.0.transpose() * other.0;
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        // acos loses precision near 0; use the skew part there
        let w = Vec3::new(rel[(2, 1)] - rel[(1, 2)], rel[(0, 2)] - rel[(2, 0)], rel[(1, 0)] - rel[(0, 1)]);
        let s = 0.5 * w.norm();
        s.atan2(c)
    }
}

pub(crate) fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
