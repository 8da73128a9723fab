//! Synthetic hand sequences with exactly labeled corruptions.
//!
//! A clean sequence follows a smooth flexion trajectory through random
//! keyframes with one fixed shape, rendered through a known weak-perspective
//! camera. Individual frames are then corrupted in one of five ways and the
//! corruption is recorded, which gives the filter an exact oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::filter::{FrameRecord, HandPrediction, SequenceRecord};
use crate::geometry::{bbox_of_points, project_weak, Box2, Vec2, Vec3, WeakPerspectiveCamera};
use crate::hand::{forward, HandOutput, HandParams, HandTemplate, BETA_LEN, FLEXION_JOINTS, THETA_LEN, WRIST};
use crate::{Error, Result};

/// Range of keyframe flexion angles, degrees.
pub const FLEXION_RANGE_DEG: (f64, f64) = (5.0, 85.0);
/// Largest `|theta_t - theta_{t-1}|` of a clean trajectory. A few times
/// below the default smoothness bound so that gaps of several rejected
/// frames still compare as smooth.
pub const MAX_THETA_STEP: f64 = 0.0025;
const BASE_MARGIN_DEG: f64 = 10.0;
const MAX_WRIST_TILT: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// Gaussian noise on the 2D joints only.
    Jitter2d,
    /// One pose coordinate jumps; 3D outputs and 2D joints follow.
    ThetaJump,
    /// One finger joint bent past the anatomical range.
    AngleViolation,
    /// Shape moved away from the sequence's shape.
    ShapeDrift,
    /// Annotated hand box displaced.
    BoxShift,
}

impl Corruption {
    pub const ALL: [Corruption; 5] =
        [Corruption::Jitter2d, Corruption::ThetaJump, Corruption::AngleViolation, Corruption::ShapeDrift, Corruption::BoxShift];
}

/// Per-frame probability of a corruption and its size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseMode {
    pub rate: f64,
    pub magnitude: f64,
}

/// Magnitudes are px of standard deviation (jitter), radians on one
/// coordinate (theta jump), degrees of the bent joint (angle violation),
/// shape-vector distance (drift) and px (box shift).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub jitter2d: NoiseMode,
    pub theta_jump: NoiseMode,
    pub angle_violation: NoiseMode,
    pub shape_drift: NoiseMode,
    pub box_shift: NoiseMode,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            jitter2d: NoiseMode { rate: 0.0, magnitude: 300.0 },
            theta_jump: NoiseMode { rate: 0.0, magnitude: 0.05 },
            angle_violation: NoiseMode { rate: 0.0, magnitude: 120.0 },
            shape_drift: NoiseMode { rate: 0.0, magnitude: 2.0 },
            box_shift: NoiseMode { rate: 0.0, magnitude: 150.0 },
        }
    }
}

impl NoiseConfig {
    /// Every mode at `total / 5`.
    pub fn uniform(total: f64) -> Self {
        let mut n = Self::default();
        for c in Corruption::ALL {
            n.mode_mut(c).rate = total / 5.0;
        }
        n
    }

    pub fn mode(&self, c: Corruption) -> &NoiseMode {
        match c {
            Corruption::Jitter2d => &self.jitter2d,
            Corruption::ThetaJump => &self.theta_jump,
            Corruption::AngleViolation => &self.angle_violation,
            Corruption::ShapeDrift => &self.shape_drift,
            Corruption::BoxShift => &self.box_shift,
        }
    }

    pub fn mode_mut(&mut self, c: Corruption) -> &mut NoiseMode {
        match c {
            Corruption::Jitter2d => &mut self.jitter2d,
            Corruption::ThetaJump => &mut self.theta_jump,
            Corruption::AngleViolation => &mut self.angle_violation,
            Corruption::ShapeDrift => &mut self.shape_drift,
            Corruption::BoxShift => &mut self.box_shift,
        }
    }

    pub fn total_rate(&self) -> f64 {
        Corruption::ALL.iter().map(|c| self.mode(*c).rate).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_frames: usize,
    pub keyframe_count: usize,
    pub noise: NoiseConfig,
    pub seed: u64,
    /// Pixels per millimeter of the rendering camera.
    pub camera_scale: f64,
    pub camera_translation: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_frames: 100,
            keyframe_count: 5,
            noise: NoiseConfig::default(),
            seed: 0,
            camera_scale: 1.2,
            camera_translation: [256.0, 150.0],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::invalid("n_frames must be positive"));
        }
        if self.keyframe_count < 2 {
            return Err(Error::invalid("keyframe_count must be at least 2"));
        }
        for c in Corruption::ALL {
            let m = self.noise.mode(c);
            if !(0.0..=1.0).contains(&m.rate) {
                return Err(Error::invalid(format!("{c:?} rate {} outside [0, 1]", m.rate)));
            }
            if !(m.magnitude.is_finite() && m.magnitude >= 0.0) {
                return Err(Error::invalid(format!("{c:?} magnitude {} must be non-negative", m.magnitude)));
            }
        }
        if self.noise.total_rate() > 1.0 + 1e-12 {
            return Err(Error::invalid("corruption rates sum to more than 1"));
        }
        self.camera()?;
        Ok(())
    }

    pub fn camera(&self) -> Result<WeakPerspectiveCamera> {
        WeakPerspectiveCamera::new(self.camera_scale, Vec2::from(self.camera_translation))
    }
}

/// A generated sequence, its labels and the clean ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub sequence: SequenceRecord,
    /// `None` for clean frames.
    pub labels: Vec<Option<Corruption>>,
    /// Uncorrupted root-relative joints and vertices.
    pub ground_truth: Vec<HandOutput>,
    pub clean_params: Vec<HandParams>,
}

/// Root-relative joints and vertices.
fn render(template: &HandTemplate, params: &HandParams) -> HandOutput {
    let out = forward(template, params);
    let root = out.joints3d[WRIST];
    HandOutput { joints3d: out.joints3d.iter().map(|p| p - root).collect(), vertices: out.vertices.iter().map(|p| p - root).collect() }
}

fn prediction(template: &HandTemplate, cam: &WeakPerspectiveCamera, params: HandParams) -> HandPrediction {
    let out = render(template, &params);
    HandPrediction { j2d: project_weak(cam, &out.joints3d), j3d: out.joints3d, vertices: out.vertices, params }
}

/// Zero-slope cubic between keyframes.
fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

fn random_unit<R: Rng + ?Sized, const N: usize>(rng: &mut R) -> [f64; N] {
    loop {
        let v: [f64; N] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.map(|x| x / n);
        }
    }
}

/// Smooth clean pose trajectory: per-joint flexion keyframes, interpolated
/// piecewise-cubically, with the motion slowed so that no frame-to-frame
/// step exceeds [`MAX_THETA_STEP`].
fn trajectory<R: Rng + ?Sized>(template: &HandTemplate, cfg: &SynthConfig, rng: &mut R) -> Result<Vec<[f64; THETA_LEN]>> {
    let (lo, hi) = FLEXION_RANGE_DEG;
    let wrist: [f64; 3] = random_unit(rng);
    let tilt = rng.random_range(0.0..MAX_WRIST_TILT);
    let base: Vec<f64> = FLEXION_JOINTS.iter().map(|_| rng.random_range(lo + BASE_MARGIN_DEG..hi - BASE_MARGIN_DEG)).collect();
    let keys: Vec<Vec<f64>> = (0..cfg.keyframe_count)
        .map(|_| FLEXION_JOINTS.iter().map(|_| rng.random_range(-BASE_MARGIN_DEG..BASE_MARGIN_DEG)).collect())
        .collect();

    let n = cfg.n_frames;
    let offset_at = |t: usize| -> Vec<f64> {
        if n == 1 {
            return keys[0].clone();
        }
        let x = t as f64 / (n - 1) as f64 * (cfg.keyframe_count - 1) as f64;
        let seg = (x.floor() as usize).min(cfg.keyframe_count - 2);
        let w = smoothstep(x - seg as f64);
        keys[seg].iter().zip(&keys[seg + 1]).map(|(a, b)| a + (b - a) * w).collect()
    };
    let offsets: Vec<Vec<f64>> = (0..n).map(offset_at).collect();
    let max_step = offsets
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).to_radians().powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let slow = if max_step > MAX_THETA_STEP { MAX_THETA_STEP / max_step } else { 1.0 };

    let axes: Vec<Vec3> = FLEXION_JOINTS
        .iter()
        .map(|&j| template.flexion_axis(j).ok_or_else(|| Error::invalid(format!("joint {j} has no flexion axis"))))
        .collect::<Result<_>>()?;
    let slots: Vec<usize> = FLEXION_JOINTS
        .iter()
        .map(|&j| template.slot_of_joint(j).ok_or_else(|| Error::invalid(format!("joint {j} is not articulated"))))
        .collect::<Result<_>>()?;
    Ok(offsets
        .iter()
        .map(|off| {
            let mut theta = [0.0; THETA_LEN];
            theta[..3].copy_from_slice(&wrist.map(|w| w * tilt));
            for (k, ((axis, &slot), b)) in axes.iter().zip(&slots).zip(&base).enumerate() {
                let angle = (b + slow * off[k]).to_radians();
                theta[3 * slot..3 * slot + 3].copy_from_slice((axis * angle).as_slice());
            }
            theta
        })
        .collect())
}

fn pick_corruption<R: Rng + ?Sized>(noise: &NoiseConfig, rng: &mut R) -> Option<Corruption> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for c in Corruption::ALL {
        acc += noise.mode(c).rate;
        if u < acc {
            return Some(c);
        }
    }
    None
}

/// Generates one sequence from `cfg.seed`, stream `stream`. Different
/// streams give independent sequences from the same seed.
pub fn generate_synthetic(cfg: &SynthConfig, template: &HandTemplate, stream: u64) -> Result<SyntheticSequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let cam = cfg.camera()?;

    let beta: [f64; BETA_LEN] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let thetas = trajectory(template, cfg, &mut rng)?;

    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut labels = Vec::with_capacity(cfg.n_frames);
    let mut ground_truth = Vec::with_capacity(cfg.n_frames);
    let mut clean_params = Vec::with_capacity(cfg.n_frames);
    for (t, theta) in thetas.into_iter().enumerate() {
        let params = HandParams::new(theta, beta)?;
        let clean = prediction(template, &cam, params.clone());
        let gt_box = bbox_of_points(&project_weak(&cam, &clean.vertices))?;
        ground_truth.push(HandOutput { joints3d: clean.j3d.clone(), vertices: clean.vertices.clone() });
        clean_params.push(params.clone());

        let label = pick_corruption(&cfg.noise, &mut rng);
        let (prediction_out, gt_hand_box) = match label {
            None => (clean, gt_box),
            Some(c) => corrupt(c, cfg.noise.mode(c).magnitude, clean, gt_box, template, &cam, &mut rng)?,
        };
        frames.push(FrameRecord { frame_index: t as u64, prediction: prediction_out, gt_hand_box });
        labels.push(label);
    }
    Ok(SyntheticSequence {
        sequence: SequenceRecord::new(format!("synth-{}-{stream}", cfg.seed), frames)?,
        labels,
        ground_truth,
        clean_params,
    })
}

/// `count` sequences on streams `0..count`.
pub fn generate_corpus(cfg: &SynthConfig, template: &HandTemplate, count: usize) -> Result<Vec<SyntheticSequence>> {
    (0..count as u64).map(|s| generate_synthetic(cfg, template, s)).collect()
}

fn corrupt<R: Rng + ?Sized>(
    kind: Corruption,
    magnitude: f64,
    clean: HandPrediction,
    gt_box: Box2,
    template: &HandTemplate,
    cam: &WeakPerspectiveCamera,
    rng: &mut R,
) -> Result<(HandPrediction, Box2)> {
    Ok(match kind {
        Corruption::Jitter2d => {
            let normal = Normal::new(0.0, magnitude).map_err(|e| Error::invalid(format!("jitter: {e}")))?;
            let mut p = clean;
            for q in &mut p.j2d {
                *q += Vec2::new(normal.sample(rng), normal.sample(rng));
            }
            (p, gt_box)
        }
        Corruption::ThetaJump => {
            let mut params = clean.params;
            let i = rng.random_range(0..THETA_LEN);
            params.theta[i] += if rng.random::<bool>() { magnitude } else { -magnitude };
            (prediction(template, cam, params), gt_box)
        }
        Corruption::AngleViolation => {
            let mut params = clean.params;
            let j = FLEXION_JOINTS[rng.random_range(0..FLEXION_JOINTS.len())];
            let slot = template.slot_of_joint(j).expect("flexion joints are articulated");
            let axis = template.flexion_axis(j).expect("flexion joints have a child");
            params.set_joint_rotation(slot, &(axis * magnitude.to_radians()));
            (prediction(template, cam, params), gt_box)
        }
        Corruption::ShapeDrift => {
            let mut params = clean.params;
            let dir: [f64; BETA_LEN] = random_unit(rng);
            for (b, d) in params.beta.iter_mut().zip(dir) {
                *b += magnitude * d;
            }
            (prediction(template, cam, params), gt_box)
        }
        Corruption::BoxShift => {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            (clean, gt_box.translated(Vec2::new(a.cos(), a.sin()) * magnitude))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{frame_distances, FilterConfig};
    use crate::hand::joint_flexion_angles;

    #[test]
    fn clean_trajectory_is_slow_and_in_range() {
        let t = HandTemplate::embedded();
        let cfg = SynthConfig { seed: 11, ..Default::default() };
        let s = generate_synthetic(&cfg, &t, 0).unwrap();
        assert!(s.labels.iter().all(Option::is_none));
        let frames = s.sequence.frames();
        for w in frames.windows(2) {
            let (_, dt) = frame_distances(&w[0].prediction, &w[1].prediction).unwrap();
            assert!(dt <= MAX_THETA_STEP + 1e-12);
        }
        for f in frames {
            for a in joint_flexion_angles(&f.prediction.j3d).unwrap() {
                assert!(a > 0.0 && a < FilterConfig::default().angle_range.1, "{a}");
            }
        }
    }

    #[test]
    fn streams_differ_and_repeat() {
        let t = HandTemplate::embedded();
        let cfg = SynthConfig { n_frames: 10, noise: NoiseConfig::uniform(0.5), ..Default::default() };
        let a = generate_synthetic(&cfg, &t, 0).unwrap();
        let b = generate_synthetic(&cfg, &t, 1).unwrap();
        assert_ne!(a.sequence, b.sequence);
        assert_eq!(a, generate_synthetic(&cfg, &t, 0).unwrap());
    }

    #[test]
    fn invalid_rates() {
        let mut cfg = SynthConfig::default();
        cfg.noise.jitter2d.rate = 1.5;
        assert!(cfg.validate().is_err());
        let cfg = SynthConfig { noise: NoiseConfig::uniform(1.2), ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
