//! Hand reconstruction metrics. All distances are in millimeters and are
//! measured after similarity alignment of the prediction onto the ground
//! truth.

use serde::{Deserialize, Serialize};

use crate::geometry::{procrustes_align, Vec3};
use crate::hand::HandOutput;
use crate::{Error, Result};

/// Upper threshold of the PCK / PCV curves.
pub const AUC_MAX_MM: f64 = 50.0;
pub const AUC_STEPS: usize = 100;
/// Slack on the `error <= threshold` test, so that alignment round-off on
/// identical inputs still counts as correct at the zero threshold.
pub const AUC_TOLERANCE_MM: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub mean_joint_err_mm: f64,
    pub mean_mesh_err_mm: f64,
    pub f_at_5: f64,
    pub f_at_15: f64,
    pub pck_auc: f64,
    pub pcv_auc: f64,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let rows = [
            ("frames", self.frames.to_string()),
            ("mean joint error (mm)", format!("{:.4}", self.mean_joint_err_mm)),
            ("mean mesh error (mm)", format!("{:.4}", self.mean_mesh_err_mm)),
            ("F@5mm", format!("{:.4}", self.f_at_5)),
            ("F@15mm", format!("{:.4}", self.f_at_15)),
            ("PCK AUC (0-50mm)", format!("{:.4}", self.pck_auc)),
            ("PCV AUC (0-50mm)", format!("{:.4}", self.pcv_auc)),
        ];
        rows.iter().map(|(k, v)| format!("{k:<24}{v:>12}\n")).collect()
    }
}

/// Per-point distances after aligning `pred` onto `gt`.
pub fn aligned_distances(pred: &[Vec3], gt: &[Vec3]) -> Result<Vec<f64>> {
    let (aligned, _) = procrustes_align(pred, gt)?;
    Ok(aligned.iter().zip(gt).map(|(a, g)| (a - g).norm()).collect())
}

/// Mean per-point distance after alignment.
pub fn aligned_error(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    let d = aligned_distances(pred, gt)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

fn fraction_within(from: &[Vec3], to: &[Vec3], threshold: f64) -> f64 {
    let hits = from.iter().filter(|p| to.iter().map(|q| (*p - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt() <= threshold).count();
    hits as f64 / from.len() as f64
}

/// Harmonic mean of precision and recall of nearest-neighbour matches
/// within `threshold_mm`, after alignment.
pub fn f_score(pred: &[Vec3], gt: &[Vec3], threshold_mm: f64) -> Result<f64> {
    if !(threshold_mm >= 0.0) {
        return Err(Error::invalid(format!("f-score threshold {threshold_mm} must be non-negative")));
    }
    let (aligned, _) = procrustes_align(pred, gt)?;
    let precision = fraction_within(&aligned, gt, threshold_mm);
    let recall = fraction_within(gt, &aligned, threshold_mm);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Normalized area under the fraction-of-errors-within-threshold curve,
/// thresholds `0, max/steps, ..., max`, trapezoidal rule.
pub fn pck_auc(errors: &[f64], max_threshold_mm: f64, steps: usize) -> Result<f64> {
    if errors.is_empty() || steps == 0 || !(max_threshold_mm > 0.0) {
        return Err(Error::invalid("pck_auc needs errors, steps >= 1 and a positive range"));
    }
    if errors.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::invalid("pck_auc errors must be finite and non-negative"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let curve: Vec<f64> = (0..=steps)
        .map(|k| {
            let t = max_threshold_mm * k as f64 / steps as f64;
            sorted.partition_point(|e| *e <= t + AUC_TOLERANCE_MM) as f64 / n
        })
        .collect();
    Ok(curve.windows(2).map(|w| (w[0] + w[1]) / 2.0).sum::<f64>() / steps as f64)
}

/// Aggregates every metric over paired predicted / ground-truth frames.
pub fn evaluate(pred: &[HandOutput], gt: &[HandOutput]) -> Result<EvalReport> {
    if pred.len() != gt.len() {
        return Err(Error::dims(format!("{} predicted vs {} ground-truth frames", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let mut joint_errs = Vec::new();
    let mut vert_errs = Vec::new();
    let (mut f5, mut f15) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        joint_errs.extend(aligned_distances(&p.joints3d, &g.joints3d)?);
        vert_errs.extend(aligned_distances(&p.vertices, &g.vertices)?);
        f5 += f_score(&p.vertices, &g.vertices, 5.0)?;
        f15 += f_score(&p.vertices, &g.vertices, 15.0)?;
    }
    let n = pred.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(EvalReport {
        frames: pred.len(),
        mean_joint_err_mm: mean(&joint_errs),
        mean_mesh_err_mm: mean(&vert_errs),
        f_at_5: f5 / n,
        f_at_15: f15 / n,
        pck_auc: pck_auc(&joint_errs, AUC_MAX_MM, AUC_STEPS)?,
        pcv_auc: pck_auc(&vert_errs, AUC_MAX_MM, AUC_STEPS)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> Vec<Vec3> {
        (0..30).map(|i| Vec3::new((i as f64 * 0.7).sin() * 40.0, (i as f64 * 1.3).cos() * 30.0, i as f64)).collect()
    }

    #[test]
    fn identical_clouds() {
        let c = cloud();
        assert!(aligned_error(&c, &c).unwrap() < 1e-9);
        assert_eq!(f_score(&c, &c, 5.0).unwrap(), 1.0);
    }

    #[test]
    fn far_clouds_score_zero() {
        let gt = cloud();
        let mut pred = gt.clone();
        // only a non-similarity distortion survives alignment
        for (i, p) in pred.iter_mut().enumerate() {
            p.z += if i % 2 == 0 { 500.0 } else { -500.0 };
        }
        assert_eq!(f_score(&pred, &gt, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn auc_limits() {
        assert_eq!(pck_auc(&[0.0; 21], 50.0, 100).unwrap(), 1.0);
        assert!(pck_auc(&[1e6; 21], 50.0, 100).unwrap() < 1e-6);
        // errors of exactly 25 mm: curve steps from 0 to 1 at threshold index 50
        assert!((pck_auc(&[25.0], 50.0, 100).unwrap() - 0.505).abs() < 1e-12);
        assert!(pck_auc(&[], 50.0, 100).is_err());
        assert!(pck_auc(&[-1.0], 50.0, 100).is_err());
    }

    #[test]
    fn table_lists_every_field() {
        let r =
            EvalReport { frames: 2, mean_joint_err_mm: 1.0, mean_mesh_err_mm: 2.0, f_at_5: 0.5, f_at_15: 0.9, pck_auc: 0.8, pcv_auc: 0.7 };
        assert_eq!(r.to_table().lines().count(), 7);
    }
}
