use super::FeatureMap;
use crate::geometry::Vec2;
use crate::{Error, Result};

/// Allowed deviation of a heatmap channel sum from 1.
pub const HEATMAP_NORM_TOL: f64 = 1e-6;

/// Expected pixel coordinate `(x, y) = (column, row)` of every channel.
/// Each channel must be non-negative and sum to one.
pub fn soft_argmax_joints(heatmaps: &FeatureMap) -> Result<Vec<Vec2>> {
    let (h, w, joints) = heatmaps.shape();
    let mut sums = vec![0.0; joints];
    let mut mins = vec![f64::INFINITY; joints];
    let mut acc = vec![Vec2::zeros(); joints];
    for y in 0..h {
        for x in 0..w {
            for (j, ((s, m), a)) in sums.iter_mut().zip(&mut mins).zip(&mut acc).enumerate() {
                let v = heatmaps.get(y, x, j);
                *s += v;
                *m = m.min(v);
                *a += Vec2::new(x as f64, y as f64) * v;
            }
        }
    }
    for (channel, (&sum, &min)) in sums.iter().zip(&mins).enumerate() {
        if min < 0.0 || (sum - 1.0).abs() > HEATMAP_NORM_TOL {
            return Err(Error::NotNormalized { channel, sum, min });
        }
    }
    Ok(acc)
}

/// Unit-sum isotropic Gaussians centred on `points` (pixel coordinates).
pub fn gaussian_heatmaps(height: usize, width: usize, points: &[Vec2], sigma: f64) -> Result<FeatureMap> {
    if points.is_empty() || !(sigma > 0.0) {
        return Err(Error::invalid("gaussian_heatmaps needs points and a positive sigma"));
    }
    let mut map = FeatureMap::from_fn(height, width, points.len(), |y, x, j| {
        let d = Vec2::new(x as f64, y as f64) - points[j];
        (-0.5 * d.norm_squared() / (sigma * sigma)).exp()
    });
    for j in 0..points.len() {
        let sum: f64 = (0..height).flat_map(|y| (0..width).map(move |x| (y, x))).map(|(y, x)| map.get(y, x, j)).sum();
        if !(sum > 0.0) {
            return Err(Error::invalid(format!("joint {j} lies too far outside the heatmap")));
        }
        for y in 0..height {
            for x in 0..width {
                let v = map.get(y, x, j) / sum;
                map.set(y, x, j, v);
            }
        }
    }
    Ok(map)
}

/// Sum over channels of the squared Frobenius distance.
pub fn heatmap_loss(pred: &FeatureMap, gt: &FeatureMap) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::dims(format!("heatmaps {:?} vs {:?}", pred.shape(), gt.shape())));
    }
    Ok(pred.data().iter().zip(gt.data()).map(|(a, b)| (a - b) * (a - b)).sum())
}
