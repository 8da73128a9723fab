use serde::{Deserialize, Serialize};

use super::{check_finite2, check_finite3, finite2, Vec2, Vec3};
use crate::{Error, Result};

/// Scaled orthographic camera: `(x, y, z) -> s * (x, y) + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakPerspectiveCamera {
    scale: f64,
    translation: [f64; 2],
}

/// Smallest scale a fitted camera may take.
pub const MIN_WEAK_SCALE: f64 = 1e-8;
const MIN_XY_VARIANCE: f64 = 1e-12;

impl WeakPerspectiveCamera {
    pub fn new(scale: f64, translation: Vec2) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid(format!("weak camera scale must be positive, got {scale}")));
        }
        if !finite2(&translation) {
            return Err(Error::invalid("weak camera translation is not finite"));
        }
        Ok(Self { scale, translation: [translation.x, translation.y] })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn translation(&self) -> Vec2 {
        Vec2::new(self.translation[0], self.translation[1])
    }

    #[inline]
    pub fn project(&self, p: &Vec3) -> Vec2 {
        Vec2::new(self.scale * p.x + self.translation[0], self.scale * p.y + self.translation[1])
    }
}

pub fn project_weak(cam: &WeakPerspectiveCamera, pts: &[Vec3]) -> Vec<Vec2> {
    pts.iter().map(|p| cam.project(p)).collect()
}

/// Sum of squared reprojection errors of `j3d` against `j2d`.
pub fn weak_residual(cam: &WeakPerspectiveCamera, j3d: &[Vec3], j2d: &[Vec2]) -> f64 {
    j3d.iter().zip(j2d).map(|(p, q)| (cam.project(p) - q).norm_squared()).sum()
}

/// Least-squares weak-perspective camera mapping `j3d` onto `j2d`.
///
/// With centered coordinates `a_i = xy(j3d_i) - mean`, `b_i = j2d_i - mean`
/// the optimum is `s = sum(a.b) / sum(|a|^2)` and `t = mean(j2d) - s *
/// mean(xy)`. The scale is floored at [`MIN_WEAK_SCALE`].
pub fn fit_weak_camera(j3d: &[Vec3], j2d: &[Vec2]) -> Result<WeakPerspectiveCamera> {
    if j3d.len() != j2d.len() {
        return Err(Error::dims(format!("fit_weak_camera: {} 3D points vs {} 2D points", j3d.len(), j2d.len())));
    }
    if j3d.is_empty() {
        return Err(Error::degenerate("fit_weak_camera: no points"));
    }
    check_finite3(j3d, "j3d")?;
    check_finite2(j2d, "j2d")?;

    let n = j3d.len() as f64;
    let mean3 = j3d.iter().fold(Vec2::zeros(), |acc, p| acc + p.xy()) / n;
    let mean2 = j2d.iter().fold(Vec2::zeros(), |acc, p| acc + p) / n;

    let (mut cross, mut var) = (0.0, 0.0);
    for (p, q) in j3d.iter().zip(j2d) {
        let a = p.xy() - mean3;
        let b = q - mean2;
        cross += a.dot(&b);
        var += a.norm_squared();
    }
    if var / n < MIN_XY_VARIANCE {
        return Err(Error::degenerate("fit_weak_camera: 3D joints coincide in the image plane"));
    }
    let scale = (cross / var).max(MIN_WEAK_SCALE);
    WeakPerspectiveCamera::new(scale, mean2 - scale * mean3)
}

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl PerspectiveCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid(format!("invalid pinhole intrinsics {self:?}")));
        }
        Ok(())
    }

    /// Projects a camera-frame point. Points on or behind the image plane
    /// produce non-finite output.
    #[inline]
    pub fn project(&self, p: &Vec3) -> Vec2 {
        Vec2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Pixel to normalized image coordinates.
    #[inline]
    pub fn normalize(&self, q: &Vec2) -> Vec2 {
        Vec2::new((q.x - self.cx) / self.fx, (q.y - self.cy) / self.fy)
    }
}
