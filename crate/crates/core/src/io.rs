//! File formats: JSON-lines frame files, decision files, key=value filter
//! configuration and pose documents.
//!
//! A frame file starts with a header line
//! `{"schema":"hopose-frames","version":1,"sequence_id":..,"vertex_count":..}`
//! followed by one [`FrameLine`] per line. Parse errors carry the 1-based
//! line number.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::filter::{FilterConfig, FilterDecision, FrameRecord, HandPrediction, SequenceRecord};
use crate::geometry::{Box2, Pose6Dof, Vec2, Vec3};
use crate::hand::{HandOutput, HandParams};
use crate::synth::{Corruption, SyntheticSequence};
use crate::{Error, Result};

pub const FRAME_SCHEMA: &str = "hopose-frames";
pub const FRAME_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameHeader {
    pub schema: String,
    pub version: u32,
    pub sequence_id: String,
    pub vertex_count: usize,
}

/// One frame as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameLine {
    pub frame_index: u64,
    pub j2d: Vec<[f64; 2]>,
    pub j3d: Vec<[f64; 3]>,
    pub vertices: Vec<[f64; 3]>,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub gt_box: Box2,
}

fn arr2(v: &[Vec2]) -> Vec<[f64; 2]> {
    v.iter().map(|p| [p.x, p.y]).collect()
}

fn arr3(v: &[Vec3]) -> Vec<[f64; 3]> {
    v.iter().map(|p| [p.x, p.y, p.z]).collect()
}

impl FrameLine {
    pub fn from_record(f: &FrameRecord) -> Self {
        let p = &f.prediction;
        Self {
            frame_index: f.frame_index,
            j2d: arr2(&p.j2d),
            j3d: arr3(&p.j3d),
            vertices: arr3(&p.vertices),
            theta: p.params.theta.to_vec(),
            beta: p.params.beta.to_vec(),
            gt_box: f.gt_hand_box,
        }
    }

    pub fn to_record(&self) -> Result<FrameRecord> {
        let prediction = HandPrediction {
            j2d: self.j2d.iter().map(|p| Vec2::from(*p)).collect(),
            j3d: self.j3d.iter().map(|p| Vec3::from(*p)).collect(),
            vertices: self.vertices.iter().map(|p| Vec3::from(*p)).collect(),
            params: HandParams::from_slices(&self.theta, &self.beta)?,
        };
        prediction.validate()?;
        Ok(FrameRecord { frame_index: self.frame_index, prediction, gt_hand_box: self.gt_box })
    }

    pub fn hand_output(&self) -> HandOutput {
        HandOutput {
            joints3d: self.j3d.iter().map(|p| Vec3::from(*p)).collect(),
            vertices: self.vertices.iter().map(|p| Vec3::from(*p)).collect(),
        }
    }
}

fn at_line(line: usize, e: impl std::fmt::Display) -> Error {
    Error::invalid(format!("line {line}: {e}"))
}

fn read_error(e: std::io::Error) -> Error {
    Error::invalid(format!("read failed: {e}"))
}

/// Reads a frame file. Blank lines are skipped.
pub fn read_sequence<R: BufRead>(reader: R) -> Result<SequenceRecord> {
    let mut header: Option<FrameHeader> = None;
    let mut frames: Vec<FrameRecord> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(read_error)?;
        if line.trim().is_empty() {
            continue;
        }
        match &header {
            None => {
                let h: FrameHeader = serde_json::from_str(&line).map_err(|e| at_line(n, format!("bad header: {e}")))?;
                if h.schema != FRAME_SCHEMA || h.version != FRAME_SCHEMA_VERSION {
                    return Err(at_line(n, format!("unsupported schema {} v{}", h.schema, h.version)));
                }
                header = Some(h);
            }
            Some(h) => {
                let fl: FrameLine = serde_json::from_str(&line).map_err(|e| at_line(n, e))?;
                if fl.vertices.len() != h.vertex_count {
                    return Err(at_line(n, format!("{} vertices, header says {}", fl.vertices.len(), h.vertex_count)));
                }
                if let Some(prev) = frames.last() {
                    if fl.frame_index <= prev.frame_index {
                        return Err(at_line(n, format!("frame_index {} not after {}", fl.frame_index, prev.frame_index)));
                    }
                }
                frames.push(fl.to_record().map_err(|e| at_line(n, e))?);
            }
        }
    }
    let header = header.ok_or_else(|| Error::invalid("empty frame file"))?;
    SequenceRecord::new(header.sequence_id, frames)
}

pub fn write_sequence<W: Write>(mut w: W, seq: &SequenceRecord) -> std::io::Result<()> {
    let vertex_count = seq.frames().first().map_or(0, |f| f.prediction.vertices.len());
    let header =
        FrameHeader { schema: FRAME_SCHEMA.to_string(), version: FRAME_SCHEMA_VERSION, sequence_id: seq.sequence_id.clone(), vertex_count };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for f in seq.frames() {
        writeln!(w, "{}", serde_json::to_string(&FrameLine::from_record(f))?)?;
    }
    Ok(())
}

/// The clean counterpart of a synthetic sequence in frame-file form, with
/// the uncorrupted parameters and the rendered 2D joints.
pub fn ground_truth_sequence(s: &SyntheticSequence, cam: &crate::geometry::WeakPerspectiveCamera) -> Result<SequenceRecord> {
    let frames = s
        .sequence
        .frames()
        .iter()
        .zip(&s.ground_truth)
        .zip(&s.clean_params)
        .map(|((f, gt), params)| {
            let vbox = crate::geometry::bbox_of_points(&crate::geometry::project_weak(cam, &gt.vertices))?;
            Ok(FrameRecord {
                frame_index: f.frame_index,
                prediction: HandPrediction {
                    j2d: crate::geometry::project_weak(cam, &gt.joints3d),
                    j3d: gt.joints3d.clone(),
                    vertices: gt.vertices.clone(),
                    params: params.clone(),
                },
                gt_hand_box: vbox,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SequenceRecord::new(format!("{}-gt", s.sequence.sequence_id), frames)
}

/// One line of a corruption label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelLine {
    pub sequence_id: String,
    pub frame_index: u64,
    pub corruption: Option<Corruption>,
}

/// One line of a decision file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionLine {
    pub sequence_id: String,
    #[serde(flatten)]
    pub decision: FilterDecision,
}

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: &[T]) -> std::io::Result<()> {
    for it in items {
        writeln!(w, "{}", serde_json::to_string(it)?)?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead, T: for<'de> Deserialize<'de>>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(read_error)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| at_line(i + 1, e))?);
    }
    Ok(out)
}

/// Applies `key = value` lines to `base`. Blank lines and `#` comments are
/// ignored. Keys: `iou_min`, `t_p`, `bone_min`, `angle_min`, `angle_max`,
/// `t_j`, `t_theta`, `shape_sigma_mult`. The result is validated.
pub fn parse_filter_config(text: &str, base: FilterConfig) -> Result<FilterConfig> {
    let mut cfg = base;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| at_line(i + 1, format!("expected key = value, got `{line}`")))?;
        let value: f64 = value.trim().parse().map_err(|e| at_line(i + 1, format!("{}: {e}", key.trim())))?;
        set_filter_key(&mut cfg, key.trim(), value).map_err(|e| at_line(i + 1, e))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Sets one threshold by name.
pub fn set_filter_key(cfg: &mut FilterConfig, key: &str, value: f64) -> Result<()> {
    match key {
        "iou_min" => cfg.iou_min = value,
        "t_p" => cfg.t_p = value,
        "bone_min" => cfg.bone_min = value,
        "angle_min" => cfg.angle_range.0 = value,
        "angle_max" => cfg.angle_range.1 = value,
        "t_j" => cfg.t_j = value,
        "t_theta" => cfg.t_theta = value,
        "shape_sigma_mult" => cfg.shape_sigma_mult = value,
        other => return Err(Error::invalid(format!("unknown filter key `{other}`"))),
    }
    Ok(())
}

/// Serialized pose: axis-angle rotation (radians), its matrix (row-major)
/// and translation (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDocument {
    pub axis_angle: [f64; 3],
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl PoseDocument {
    pub fn from_pose(p: &Pose6Dof) -> Self {
        let m = p.rotation.matrix();
        let aa = p.rotation.to_axis_angle();
        Self {
            axis_angle: [aa.x, aa.y, aa.z],
            rotation: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }

    pub fn to_pose(&self) -> Result<Pose6Dof> {
        let m = nalgebra::Matrix3::from_fn(|r, c| self.rotation[r][c]);
        Pose6Dof::new(crate::geometry::Rotation3::from_matrix(m)?, Vec3::from(self.translation))
    }
}
