//! Pseudo-label selection for unlabeled video.
//!
//! Each frame's (ensemble-averaged) hand prediction goes through three
//! stages, always in this order:
//!
//! 1. spatial checks on the frame alone: box overlap, agreement of the 2D
//!    joints with the projected 3D joints, and plausible bones and joint
//!    angles;
//! 2. temporal smoothness against nearby frames that passed stage 1 (see
//!    [`temporal_check`]);
//! 3. a sequence-level shape check on the frames surviving 1 and 2.
//!
//! A frame is accepted when no constraint fails. Every rejection names the
//! constraints that failed.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{bbox_of_points, fit_weak_camera, iou, project_weak, Box2, Vec2, Vec3};
use crate::hand::{joint_flexion_angles, normalized_bone_lengths, HandParams, HandTemplate, BETA_LEN, NUM_JOINTS, WRIST};
use crate::{Error, Result};

/// Absolute slack on the shape-deviation bound, so that a set of equal
/// shapes does not lose members to rounding in the mean.
pub const SHAPE_TOLERANCE: f64 = 1e-9;
const MIN_NORMALIZER: f64 = 1e-9;

/// Largest frame-index distance at which two frames are compared for
/// smoothness.
pub const TEMPORAL_WINDOW: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct HandPrediction {
    /// Image joints in pixels.
    pub j2d: Vec<Vec2>,
    /// Root-relative joints in millimeters.
    pub j3d: Vec<Vec3>,
    pub vertices: Vec<Vec3>,
    pub params: HandParams,
}

impl HandPrediction {
    pub fn validate(&self) -> Result<()> {
        if self.j2d.len() != NUM_JOINTS || self.j3d.len() != NUM_JOINTS {
            return Err(Error::dims(format!(
                "prediction has {} 2D and {} 3D joints, expected {NUM_JOINTS}",
                self.j2d.len(),
                self.j3d.len()
            )));
        }
        crate::geometry::check_finite2(&self.j2d, "j2d")?;
        crate::geometry::check_finite3(&self.j3d, "j3d")?;
        crate::geometry::check_finite3(&self.vertices, "vertices")?;
        self.params.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_index: u64,
    pub prediction: HandPrediction,
    /// Annotated 2D hand box.
    pub gt_hand_box: Box2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub sequence_id: String,
    frames: Vec<FrameRecord>,
}

impl SequenceRecord {
    /// Frames must be non-empty, valid, share one vertex count and have
    /// strictly increasing indices.
    pub fn new(sequence_id: impl Into<String>, frames: Vec<FrameRecord>) -> Result<Self> {
        let sequence_id = sequence_id.into();
        let Some(first) = frames.first() else {
            return Err(Error::invalid(format!("sequence {sequence_id} has no frames")));
        };
        let v = first.prediction.vertices.len();
        for (k, f) in frames.iter().enumerate() {
            f.prediction.validate()?;
            if f.prediction.vertices.len() != v {
                return Err(Error::dims(format!("frame {} has {} vertices, expected {v}", f.frame_index, f.prediction.vertices.len())));
            }
            if k > 0 && f.frame_index <= frames[k - 1].frame_index {
                return Err(Error::invalid(format!("frame index {} does not increase", f.frame_index)));
            }
        }
        Ok(Self { sequence_id, frames })
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<FrameRecord> {
        self.frames
    }
}

/// Selection thresholds. Angles are in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub iou_min: f64,
    pub t_p: f64,
    pub bone_min: f64,
    pub angle_range: (f64, f64),
    pub t_j: f64,
    pub t_theta: f64,
    pub shape_sigma_mult: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { iou_min: 0.6, t_p: 0.65, bone_min: 0.1, angle_range: (0.0, 90.0), t_j: 0.5, t_theta: 0.01, shape_sigma_mult: 2.0 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("iou_min", self.iou_min),
            ("t_p", self.t_p),
            ("bone_min", self.bone_min),
            ("t_j", self.t_j),
            ("t_theta", self.t_theta),
            ("shape_sigma_mult", self.shape_sigma_mult),
        ];
        if let Some((name, v)) = named.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(format!("threshold {name} = {v} must be positive")));
        }
        let (lo, hi) = self.angle_range;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
            return Err(Error::invalid(format!("angle range ({lo}, {hi}) must be ordered and non-negative")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Constraint {
    IoU,
    Reprojection,
    BoneLength,
    JointAngle,
    Smoothness2D,
    SmoothnessTheta,
    ShapeDeviation,
}

impl Constraint {
    pub const ALL: [Constraint; 7] = [
        Constraint::IoU,
        Constraint::Reprojection,
        Constraint::BoneLength,
        Constraint::JointAngle,
        Constraint::Smoothness2D,
        Constraint::SmoothnessTheta,
        Constraint::ShapeDeviation,
    ];
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub frame_index: u64,
    pub accepted: bool,
    pub failed_constraints: Vec<Constraint>,
}

impl FilterDecision {
    fn from_failures(frame_index: u64, mut failed: Vec<Constraint>) -> Self {
        failed.sort();
        failed.dedup();
        Self { frame_index, accepted: failed.is_empty(), failed_constraints: failed }
    }
}

/// Component-wise mean of augmented predictions.
pub fn ensemble_average(predictions: &[HandPrediction]) -> Result<HandPrediction> {
    let Some(first) = predictions.first() else {
        return Err(Error::EmptyEnsemble);
    };
    let n = predictions.len() as f64;
    for p in predictions {
        if p.j2d.len() != first.j2d.len() || p.j3d.len() != first.j3d.len() || p.vertices.len() != first.vertices.len() {
            return Err(Error::dims("ensemble members differ in size"));
        }
    }
    let mean2 = |f: fn(&HandPrediction) -> &Vec<Vec2>| -> Vec<Vec2> {
        (0..f(first).len()).map(|i| predictions.iter().map(|p| f(p)[i]).sum::<Vec2>() / n).collect()
    };
    let mean3 = |f: fn(&HandPrediction) -> &Vec<Vec3>| -> Vec<Vec3> {
        (0..f(first).len()).map(|i| predictions.iter().map(|p| f(p)[i]).sum::<Vec3>() / n).collect()
    };
    let mut params = HandParams::default();
    for (i, t) in params.theta.iter_mut().enumerate() {
        *t = predictions.iter().map(|p| p.params.theta[i]).sum::<f64>() / n;
    }
    for (i, b) in params.beta.iter_mut().enumerate() {
        *b = predictions.iter().map(|p| p.params.beta[i]).sum::<f64>() / n;
    }
    Ok(HandPrediction { j2d: mean2(|p| &p.j2d), j3d: mean3(|p| &p.j3d), vertices: mean3(|p| &p.vertices), params })
}

/// Root-subtracted joints divided by the diagonal of their own bounding box.
pub fn normalize_joints(j2d: &[Vec2]) -> Result<Vec<Vec2>> {
    let diag = bbox_of_points(j2d)?.diagonal();
    if diag < MIN_NORMALIZER {
        return Err(Error::degenerate("2D joints collapse to a point"));
    }
    let root = j2d[WRIST];
    Ok(j2d.iter().map(|p| (p - root) / diag).collect())
}

/// Measurements behind the spatial decision of one frame. Quantities that
/// could not be computed are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialReport {
    pub iou: Option<f64>,
    /// Mean per-joint distance between normalized projected and observed
    /// joints.
    pub reprojection: Option<f64>,
    pub min_bone: Option<f64>,
    /// Smallest and largest flexion angle, degrees.
    pub angle_extent: Option<(f64, f64)>,
    pub failed: Vec<Constraint>,
}

impl SpatialReport {
    pub fn passed(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Box overlap, reprojection agreement and biomechanical plausibility.
pub fn spatial_check(frame: &FrameRecord, template: &HandTemplate, cfg: &FilterConfig) -> Result<SpatialReport> {
    let pred = &frame.prediction;
    if pred.vertices.len() != template.vertex_count() {
        return Err(Error::dims(format!(
            "frame {} has {} vertices, template has {}",
            frame.frame_index,
            pred.vertices.len(),
            template.vertex_count()
        )));
    }
    let mut report = SpatialReport { iou: None, reprojection: None, min_bone: None, angle_extent: None, failed: Vec::new() };

    match fit_weak_camera(&pred.j3d, &pred.j2d) {
        Ok(cam) => {
            let overlap = iou(&frame.gt_hand_box, &bbox_of_points(&project_weak(&cam, &pred.vertices))?);
            report.iou = Some(overlap);
            if !(overlap >= cfg.iou_min) {
                report.failed.push(Constraint::IoU);
            }
            match (normalize_joints(&project_weak(&cam, &pred.j3d)), normalize_joints(&pred.j2d)) {
                (Ok(a), Ok(b)) => {
                    let d = a.iter().zip(&b).map(|(p, q)| (p - q).norm()).sum::<f64>() / NUM_JOINTS as f64;
                    report.reprojection = Some(d);
                    if !(d <= cfg.t_p) {
                        report.failed.push(Constraint::Reprojection);
                    }
                }
                _ => report.failed.push(Constraint::Reprojection),
            }
        }
        Err(Error::DegenerateConfiguration(_)) => report.failed.extend([Constraint::IoU, Constraint::Reprojection]),
        Err(e) => return Err(e),
    }

    match normalized_bone_lengths(&pred.j3d) {
        Ok(bones) => {
            let min = bones.iter().copied().fold(f64::INFINITY, f64::min);
            report.min_bone = Some(min);
            if !(min >= cfg.bone_min) {
                report.failed.push(Constraint::BoneLength);
            }
        }
        Err(Error::DegenerateConfiguration(_)) => report.failed.push(Constraint::BoneLength),
        Err(e) => return Err(e),
    }

    match joint_flexion_angles(&pred.j3d) {
        Ok(angles) => {
            let lo = angles.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = angles.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            report.angle_extent = Some((lo, hi));
            if !(lo >= cfg.angle_range.0 && hi <= cfg.angle_range.1) {
                report.failed.push(Constraint::JointAngle);
            }
        }
        Err(Error::DegenerateConfiguration(_)) => report.failed.push(Constraint::JointAngle),
        Err(e) => return Err(e),
    }
    Ok(report)
}

/// Smoothness outcome of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalFlags {
    pub smooth_2d: bool,
    pub smooth_theta: bool,
    /// Position of the frame the verdict was taken against, if any.
    pub anchor: Option<usize>,
}

impl TemporalFlags {
    pub fn passed(&self) -> bool {
        self.smooth_2d && self.smooth_theta
    }
}

/// Distances `(|n(J_a) - n(J_b)|, |theta_a - theta_b|)` between two frames,
/// where `n` is [`normalize_joints`] and both norms run over the whole
/// vector.
pub fn frame_distances(a: &HandPrediction, b: &HandPrediction) -> Result<(f64, f64)> {
    let (na, nb) = (normalize_joints(&a.j2d)?, normalize_joints(&b.j2d)?);
    let d2 = na.iter().zip(&nb).map(|(p, q)| (p - q).norm_squared()).sum::<f64>().sqrt();
    let dt = a.params.theta.iter().zip(&b.params.theta).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    Ok((d2, dt))
}

fn compare(frame: &FrameRecord, anchor: &FrameRecord, at: usize, cfg: &FilterConfig) -> Result<TemporalFlags> {
    match frame_distances(&frame.prediction, &anchor.prediction) {
        Ok((d2, dt)) => Ok(TemporalFlags { smooth_2d: d2 <= cfg.t_j, smooth_theta: dt <= cfg.t_theta, anchor: Some(at) }),
        Err(Error::DegenerateConfiguration(_)) => Ok(TemporalFlags { smooth_2d: false, smooth_theta: true, anchor: Some(at) }),
        Err(e) => Err(e),
    }
}

/// Smoothness of every frame against the spatially passing frames around
/// it. `spatial_pass` is aligned with `frames`.
///
/// The references of a frame are the other spatially passing frames whose
/// `frame_index` lies within [`TEMPORAL_WINDOW`] of its own. The frame
/// passes if it is smooth with respect to at least one reference. A frame
/// with no other frame inside the window passes trivially; one whose
/// neighbours all failed the spatial stage has nothing to be checked
/// against and fails both bounds with no anchor. References are tried
/// nearest first (earlier before later at equal distance); the reported
/// flags are those of the first passing comparison, or of the nearest
/// reference when all fail.
///
/// Adding spatially passing frames only adds references, so loosening a
/// spatial threshold can only turn failing smoothness verdicts into
/// passing ones.
pub fn temporal_check(frames: &[FrameRecord], spatial_pass: &[bool], cfg: &FilterConfig) -> Result<Vec<TemporalFlags>> {
    if frames.len() != spatial_pass.len() {
        return Err(Error::dims(format!("{} frames vs {} spatial flags", frames.len(), spatial_pass.len())));
    }
    let mut out = Vec::with_capacity(frames.len());
    for (k, frame) in frames.iter().enumerate() {
        // frame indices increase, so the window is a contiguous range around k
        let near = |r: &usize| frame.frame_index.abs_diff(frames[*r].frame_index) <= TEMPORAL_WINDOW;
        let before = (0..k).rev().take_while(near);
        let after = (k + 1..frames.len()).take_while(near);
        let neighbours: Vec<usize> = before.chain(after).collect();
        let mut references: Vec<(u64, usize)> = neighbours
            .iter()
            .copied()
            .filter(|&r| spatial_pass[r])
            .map(|r| (frame.frame_index.abs_diff(frames[r].frame_index), r))
            .collect();
        references.sort();
        let isolated = neighbours.is_empty();
        let mut flags = TemporalFlags { smooth_2d: isolated, smooth_theta: isolated, anchor: None };
        for (i, &(_, r)) in references.iter().enumerate() {
            let f = compare(frame, &frames[r], r, cfg)?;
            if i == 0 || f.passed() {
                flags = f;
            }
            if f.passed() {
                break;
            }
        }
        out.push(flags);
    }
    Ok(out)
}

/// Keeps the shapes whose distance from the mean shape is within
/// `shape_sigma_mult` standard deviations (population form).
pub fn shape_check(betas: &[[f64; BETA_LEN]], cfg: &FilterConfig) -> Vec<bool> {
    if betas.is_empty() {
        return Vec::new();
    }
    let n = betas.len() as f64;
    let mut mean = [0.0; BETA_LEN];
    for b in betas {
        for (m, v) in mean.iter_mut().zip(b) {
            *m += v / n;
        }
    }
    let dev: Vec<f64> = betas.iter().map(|b| b.iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>().sqrt()).collect();
    let sigma = (dev.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    let bound = cfg.shape_sigma_mult * sigma + SHAPE_TOLERANCE;
    dev.iter().map(|d| *d <= bound).collect()
}

/// Spatial, then temporal, then shape selection over one sequence.
pub fn filter_sequence(seq: &SequenceRecord, template: &HandTemplate, cfg: &FilterConfig) -> Result<Vec<FilterDecision>> {
    cfg.validate()?;
    let frames = seq.frames();
    let spatial: Vec<SpatialReport> = frames.iter().map(|f| spatial_check(f, template, cfg)).collect::<Result<_>>()?;
    let spatial_pass: Vec<bool> = spatial.iter().map(SpatialReport::passed).collect();
    let temporal = temporal_check(frames, &spatial_pass, cfg)?;

    let mut failures: Vec<Vec<Constraint>> = spatial.into_iter().map(|r| r.failed).collect();
    for (f, t) in failures.iter_mut().zip(&temporal) {
        if !t.smooth_2d {
            f.push(Constraint::Smoothness2D);
        }
        if !t.smooth_theta {
            f.push(Constraint::SmoothnessTheta);
        }
    }

    let candidates: Vec<usize> = (0..frames.len()).filter(|&k| failures[k].is_empty()).collect();
    let betas: Vec<[f64; BETA_LEN]> = candidates.iter().map(|&k| frames[k].prediction.params.beta).collect();
    for (&k, keep) in candidates.iter().zip(shape_check(&betas, cfg)) {
        if !keep {
            failures[k].push(Constraint::ShapeDeviation);
        }
    }

    Ok(frames.iter().zip(failures).map(|(f, failed)| FilterDecision::from_failures(f.frame_index, failed)).collect())
}

/// Runs [`filter_sequence`] on independent sequences in parallel. Output
/// order follows input order.
pub fn filter_corpus(seqs: &[SequenceRecord], template: &HandTemplate, cfg: &FilterConfig) -> Result<Vec<Vec<FilterDecision>>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(seqs.len().max(1));
    if workers <= 1 {
        return seqs.iter().map(|s| filter_sequence(s, template, cfg)).collect();
    }
    let chunk = seqs.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = seqs
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|s| filter_sequence(s, template, cfg)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(seqs.len());
        for h in handles {
            out.extend(h.join().expect("filter worker panicked")?);
        }
        Ok(out)
    })
}

/// Accept and per-constraint rejection counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub sequences: usize,
    pub frames: usize,
    pub accepted: usize,
    pub failures: BTreeMap<Constraint, usize>,
}

impl FilterSummary {
    pub fn add_sequence(&mut self, decisions: &[FilterDecision]) {
        self.sequences += 1;
        self.frames += decisions.len();
        for d in decisions {
            if d.accepted {
                self.accepted += 1;
            }
            for c in &d.failed_constraints {
                *self.failures.entry(*c).or_default() += 1;
            }
        }
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<24}{:>10}\n", "sequences", self.sequences);
        s += &format!("{:<24}{:>10}\n", "frames", self.frames);
        s += &format!("{:<24}{:>10}\n", "accepted", self.accepted);
        for c in Constraint::ALL {
            s += &format!("{:<24}{:>10}\n", format!("failed {c}"), self.failures.get(&c).copied().unwrap_or(0));
        }
        s
    }
}
