use nalgebra::Matrix3;

use super::{HandParams, HandTemplate, FLEXION_JOINTS, HAND_PARENTS, MIDDLE_MCP, NUM_BONES, NUM_JOINTS, WRIST};
use crate::geometry::{Rotation3, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HandOutput {
    pub joints3d: Vec<Vec3>,
    pub vertices: Vec<Vec3>,
}

/// Shape blend, forward kinematics and linear blend skinning.
///
/// Joint transforms are composed root to leaf; a joint's own rotation moves
/// its descendants, not itself. The root transform is its rotation about
/// the shaped root position, so with the root at the origin a pure
/// `theta[0..3]` rotation rotates the whole rest hand.
pub fn forward(template: &HandTemplate, params: &HandParams) -> HandOutput {
    let beta = &params.beta;
    let shaped = |rest: &Vec3, dirs: &[Vec3]| -> Vec3 { dirs.iter().zip(beta).fold(*rest, |acc, (d, b)| acc + d * *b) };
    let joints: Vec<Vec3> = template.rest_joints().iter().zip(template.shape_dirs()).map(|(r, d)| shaped(r, d)).collect();

    let mut rot = vec![Matrix3::identity(); NUM_JOINTS];
    let mut pos = vec![Vec3::zeros(); NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let local = match template.slot_of_joint(j) {
            Some(slot) => *Rotation3::from_axis_angle(&params.joint_rotation(slot)).matrix(),
            None => Matrix3::identity(),
        };
        match template.parents()[j] {
            None => {
                rot[j] = local;
                pos[j] = joints[j];
            }
            Some(p) => {
                rot[j] = rot[p] * local;
                pos[j] = rot[p] * (joints[j] - joints[p]) + pos[p];
            }
        }
    }

    let vertices = template
        .mesh_rest()
        .iter()
        .zip(template.mesh_shape_dirs())
        .zip(template.sparse_skin())
        .map(|((rest, dirs), skin)| {
            let v = shaped(rest, dirs);
            skin.iter().fold(Vec3::zeros(), |acc, &(j, w)| acc + w * (rot[j] * (v - joints[j]) + pos[j]))
        })
        .collect();

    HandOutput { joints3d: pos, vertices }
}

fn check_joints(joints3d: &[Vec3]) -> Result<()> {
    if joints3d.len() != NUM_JOINTS {
        return Err(Error::dims(format!("expected {NUM_JOINTS} joints, got {}", joints3d.len())));
    }
    crate::geometry::check_finite3(joints3d, "joints3d")
}

/// Lengths of the 20 parent-child bones, ordered by child joint.
pub fn bone_lengths(joints3d: &[Vec3]) -> Result<[f64; NUM_BONES]> {
    check_joints(joints3d)?;
    let mut out = [0.0; NUM_BONES];
    for c in 1..NUM_JOINTS {
        let p = HAND_PARENTS[c].expect("non-root joint");
        out[c - 1] = (joints3d[c] - joints3d[p]).norm();
    }
    Ok(out)
}

/// Bone lengths divided by the wrist to middle-MCP distance.
pub fn normalized_bone_lengths(joints3d: &[Vec3]) -> Result<[f64; NUM_BONES]> {
    let mut lengths = bone_lengths(joints3d)?;
    let norm = (joints3d[MIDDLE_MCP] - joints3d[WRIST]).norm();
    if norm < 1e-9 {
        return Err(Error::degenerate("wrist and middle MCP coincide"));
    }
    lengths.iter_mut().for_each(|l| *l /= norm);
    Ok(lengths)
}

/// Hinge angle in degrees at each of [`FLEXION_JOINTS`]: the angle between
/// the incoming bone (parent to joint) and the outgoing bone (joint to
/// child). A straight finger reads 0.
pub fn joint_flexion_angles(joints3d: &[Vec3]) -> Result<[f64; FLEXION_JOINTS.len()]> {
    check_joints(joints3d)?;
    let mut out = [0.0; FLEXION_JOINTS.len()];
    for (slot, &j) in FLEXION_JOINTS.iter().enumerate() {
        let p = HAND_PARENTS[j].expect("flexion joints have parents");
        let c = j + 1;
        let incoming = joints3d[j] - joints3d[p];
        let outgoing = joints3d[c] - joints3d[j];
        let (a, b) = (incoming.norm(), outgoing.norm());
        if a < 1e-12 || b < 1e-12 {
            return Err(Error::degenerate(format!("zero-length bone at joint {j}")));
        }
        // atan2 form keeps precision near 0 and 180 degrees
        let angle = incoming.cross(&outgoing).norm().atan2(incoming.dot(&outgoing));
        out[slot] = angle.to_degrees();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(points: &[Vec3]) -> Vec<Vec3> {
        // one straight finger per chain, copied into every finger slot
        let mut joints = vec![Vec3::zeros(); NUM_JOINTS];
        for f in 0..5 {
            let shift = Vec3::new(f as f64 * 10.0, 0.0, 0.0);
            for (i, p) in points.iter().enumerate() {
                joints[1 + 4 * f + i] = p + shift;
            }
        }
        joints
    }

    #[test]
    fn straight_rest_fingers_read_zero() {
        let t = HandTemplate::mano_lite(4).unwrap();
        let angles = joint_flexion_angles(t.rest_joints()).unwrap();
        assert!(angles.iter().all(|a| a.abs() < 1e-6), "{angles:?}");
    }

    #[test]
    fn right_angle_reads_ninety() {
        let j = chain(&[Vec3::new(0.0, 10.0, 0.0), Vec3::new(0.0, 20.0, 0.0), Vec3::new(0.0, 20.0, 10.0), Vec3::new(0.0, 20.0, 20.0)]);
        let angles = joint_flexion_angles(&j).unwrap();
        // slot 1 is joint 2 (thumb MCP), where the bend happens
        assert!((angles[1] - 90.0).abs() < 1e-12);
        assert!(angles[2].abs() < 1e-12);
    }

    #[test]
    fn zero_length_bone_is_degenerate() {
        let j = vec![Vec3::zeros(); NUM_JOINTS];
        assert!(matches!(joint_flexion_angles(&j), Err(Error::DegenerateConfiguration(_))));
        assert!(matches!(normalized_bone_lengths(&j), Err(Error::DegenerateConfiguration(_))));
    }

    #[test]
    fn wrong_joint_count() {
        assert!(matches!(bone_lengths(&[Vec3::zeros(); 5]), Err(Error::DimensionMismatch(_))));
    }
}
