use crate::geometry::Vec3;
use crate::{Error, Result};

/// Weight of the heatmap term in the hand loss.
pub const HEATMAP_WEIGHT: f64 = 0.1;
/// Weight of the control-point offset term in the object loss.
pub const P2D_WEIGHT: f64 = 0.5;
/// Weight of the confidence term in the object loss.
pub const CONF_WEIGHT: f64 = 0.1;

/// The four quantities supervised by the mesh regression loss.
#[derive(Debug, Clone, Copy)]
pub struct ManoTerms<'a> {
    pub theta: &'a [f64],
    pub beta: &'a [f64],
    pub joints3d: &'a [Vec3],
    pub vertices: &'a [Vec3],
}

fn sq_dist(a: &[f64], b: &[f64], what: &str) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(format!("{what}: {} vs {} values", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn sq_dist3(a: &[Vec3], b: &[Vec3], what: &str) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(format!("{what}: {} vs {} points", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum())
}

/// Sum of squared L2 distances over pose, shape, joints and vertices.
pub fn mano_loss(pred: &ManoTerms<'_>, gt: &ManoTerms<'_>) -> Result<f64> {
    Ok(sq_dist(pred.theta, gt.theta, "theta")?
        + sq_dist(pred.beta, gt.beta, "beta")?
        + sq_dist3(pred.joints3d, gt.joints3d, "joints3d")?
        + sq_dist3(pred.vertices, gt.vertices, "vertices")?)
}

pub fn hand_loss(heatmap_term: f64, mano_term: f64) -> f64 {
    HEATMAP_WEIGHT * heatmap_term + mano_term
}

pub fn object_loss(p2d_term: f64, conf_term: f64) -> f64 {
    P2D_WEIGHT * p2d_term + CONF_WEIGHT * conf_term
}

/// Retraining loss: the object term only counts on samples that carry
/// object annotations (pseudo-labelled frames have hand labels only).
pub fn masked_total_loss(hand: f64, object: f64, has_object_labels: bool) -> f64 {
    let mask = if has_object_labels { 1.0 } else { 0.0 };
    hand + mask * object
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_sums() {
        assert_eq!(hand_loss(10.0, 1.0), 2.0);
        assert_eq!(hand_loss(0.0, 0.0), 0.0);
        assert_eq!(object_loss(2.0, 10.0), 2.0);
        assert_eq!(object_loss(0.0, 0.0), 0.0);
        assert_eq!(masked_total_loss(1.0, 2.0, true), 3.0);
        assert_eq!(masked_total_loss(1.0, 2.0, false), 1.0);
    }

    #[test]
    fn mano_loss_single_perturbation() {
        let theta = vec![0.1; 48];
        let beta = vec![0.2; 10];
        let j = vec![Vec3::new(1.0, 2.0, 3.0); 21];
        let v = vec![Vec3::new(-1.0, 0.5, 2.0); 64];
        let gt = ManoTerms { theta: &theta, beta: &beta, joints3d: &j, vertices: &v };
        assert_eq!(mano_loss(&gt, &gt).unwrap(), 0.0);

        let mut v2 = v.clone();
        v2[7].y += 1e-3;
        let pred = ManoTerms { vertices: &v2, ..gt };
        assert!((mano_loss(&pred, &gt).unwrap() - 1e-6).abs() < 1e-15);

        let short = vec![0.0; 47];
        let bad = ManoTerms { theta: &short, ..gt };
        assert!(matches!(mano_loss(&bad, &gt), Err(Error::DimensionMismatch(_))));
    }
}
