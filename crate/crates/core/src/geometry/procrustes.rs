use nalgebra::Matrix3;

use super::{check_finite3, Rotation3, Vec3};
use crate::{Error, Result};

const MIN_VARIANCE: f64 = 1e-12;

/// `x -> scale * R x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Rotation3,
    pub translation: Vec3,
}

impl Similarity {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: Rotation3::identity(), translation: Vec3::zeros() }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * self.rotation.rotate(p) + self.translation
    }
}

/// Closed-form least-squares similarity taking `pred` onto `gt` (Umeyama).
/// Reflections are excluded. Returns the aligned copy of `pred` together
/// with the transform.
pub fn procrustes_align(pred: &[Vec3], gt: &[Vec3]) -> Result<(Vec<Vec3>, Similarity)> {
    if pred.len() != gt.len() {
        return Err(Error::dims(format!("procrustes_align: {} vs {} points", pred.len(), gt.len())));
    }
    if pred.len() < 3 {
        return Err(Error::degenerate("procrustes_align: need at least 3 points"));
    }
    check_finite3(pred, "pred")?;
    check_finite3(gt, "gt")?;

    let n = pred.len() as f64;
    let mu_p = pred.iter().sum::<Vec3>() / n;
    let mu_g = gt.iter().sum::<Vec3>() / n;

    let mut var_p = 0.0;
    let mut var_g = 0.0;
    let mut cov = Matrix3::zeros();
    for (p, g) in pred.iter().zip(gt) {
        let (pc, gc) = (p - mu_p, g - mu_g);
        var_p += pc.norm_squared();
        var_g += gc.norm_squared();
        cov += gc * pc.transpose();
    }
    var_p /= n;
    var_g /= n;
    cov /= n;
    if var_p < MIN_VARIANCE || var_g < MIN_VARIANCE {
        return Err(Error::degenerate("procrustes_align: point set has zero spread"));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::degenerate("procrustes_align: svd failed")),
    };
    let mut d = Vec3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        d.z = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&d) * v_t;
    let scale = svd.singular_values.component_mul(&d).sum() / var_p;
    let rotation = Rotation3::nearest(&r)?;
    let translation = mu_g - scale * rotation.rotate(&mu_p);
    let transform = Similarity { scale, rotation, translation };
    let aligned = pred.iter().map(|p| transform.apply(p)).collect();
    Ok((aligned, transform))
}
