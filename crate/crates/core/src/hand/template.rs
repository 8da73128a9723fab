use serde::{Deserialize, Serialize};

use super::{ARTICULATED_JOINTS, BETA_LEN, HAND_PARENTS, NUM_ARTICULATED, NUM_JOINTS};
use crate::geometry::Vec3;
use crate::{Error, Result};

pub const TEMPLATE_FORMAT: &str = "mano-lite-template";
pub const TEMPLATE_VERSION: u32 = 1;

const MIN_VERTICES: usize = 64;
const WEIGHT_SUM_TOL: f64 = 1e-9;

/// On-disk form of a [`HandTemplate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateDocument {
    pub format: String,
    pub version: u32,
    pub rest_joints: Vec<[f64; 3]>,
    pub parents: Vec<Option<usize>>,
    pub articulated: Vec<usize>,
    /// `shape_dirs[joint][k]` is the displacement per unit of `beta[k]`.
    pub shape_dirs: Vec<Vec<[f64; 3]>>,
    pub mesh_rest: Vec<[f64; 3]>,
    /// `skin_weights[vertex][joint]`.
    pub skin_weights: Vec<Vec<f64>>,
    pub mesh_shape_dirs: Vec<Vec<[f64; 3]>>,
}

/// Rest geometry, kinematic tree, shape basis and skinning of the hand.
#[derive(Debug, Clone, PartialEq)]
pub struct HandTemplate {
    rest_joints: Vec<Vec3>,
    parents: Vec<Option<usize>>,
    articulated: Vec<usize>,
    slot_of_joint: Vec<Option<usize>>,
    shape_dirs: Vec<[Vec3; BETA_LEN]>,
    mesh_rest: Vec<Vec3>,
    skin_weights: Vec<Vec<f64>>,
    sparse_skin: Vec<Vec<(usize, f64)>>,
    mesh_shape_dirs: Vec<[Vec3; BETA_LEN]>,
}

static EMBEDDED_TEMPLATE: &str = include_str!("../../assets/mano_lite_template.json");

/// Per-finger layout of the default template: direction angle from +y
/// (degrees), wrist-to-base distance and the three bone lengths (mm).
const FINGERS: [(f64, f64, [f64; 3]); 5] = [
    (-40.0, 35.0, [35.0, 30.0, 26.0]),
    (-14.0, 92.0, [40.0, 25.0, 20.0]),
    (0.0, 95.0, [45.0, 28.0, 22.0]),
    (12.0, 90.0, [42.0, 27.0, 21.0]),
    (24.0, 82.0, [32.0, 20.0, 18.0]),
];

const BETA_FINGER_LENGTH: f64 = 0.04;
const BETA_PALM: f64 = 0.04;
const BETA_GLOBAL: f64 = 0.03;
const BETA_THUMB_SPREAD: f64 = 0.04;
const BETA_THICKNESS: f64 = 0.05;
const THICKNESS_COMPONENT: usize = 9;

impl HandTemplate {
    /// The template shipped with the crate (120 vertices).
    pub fn embedded() -> Self {
        let doc: TemplateDocument = serde_json::from_str(EMBEDDED_TEMPLATE).expect("embedded template is valid JSON");
        Self::from_document(doc).expect("embedded template is valid")
    }

    /// Builds the default geometry with `verts_per_region` vertices around
    /// each of the 20 bones. The embedded asset is `mano_lite(6)`.
    pub fn mano_lite(verts_per_region: usize) -> Result<Self> {
        if verts_per_region * 20 < MIN_VERTICES {
            return Err(Error::invalid(format!(
                "need at least {MIN_VERTICES} vertices, {verts_per_region} per region gives {}",
                verts_per_region * 20
            )));
        }
        let mut rest = vec![Vec3::zeros(); NUM_JOINTS];
        let mut shape = vec![[Vec3::zeros(); BETA_LEN]; NUM_JOINTS];
        for (f, &(angle, base_dist, bones)) in FINGERS.iter().enumerate() {
            let a = angle.to_radians();
            let dir = Vec3::new(a.sin(), a.cos(), 0.0);
            let base = 1 + 4 * f;
            let mut p = dir * base_dist;
            rest[base] = p;
            for (i, len) in bones.iter().enumerate() {
                p += dir * *len;
                rest[base + 1 + i] = p;
            }
        }
        for (f, _) in FINGERS.iter().enumerate() {
            let base = 1 + 4 * f;
            let b = rest[base];
            for j in base..base + 4 {
                if j != base {
                    shape[j][f] = (rest[j] - b) * BETA_FINGER_LENGTH;
                }
                shape[j][5] = Vec3::new(b.x, 0.0, 0.0) * BETA_PALM;
                shape[j][6] = Vec3::new(0.0, b.y, 0.0) * BETA_PALM;
                if f == 0 {
                    shape[j][8] = Vec3::new(rest[j].y, -rest[j].x, 0.0) * (0.5 * BETA_THUMB_SPREAD);
                }
            }
        }
        for j in 0..NUM_JOINTS {
            shape[j][7] = rest[j] * BETA_GLOBAL;
        }

        let z = Vec3::z();
        let mut mesh = Vec::new();
        let mut weights = Vec::new();
        let mut mesh_shape = Vec::new();
        for child in 1..NUM_JOINTS {
            let parent = HAND_PARENTS[child].expect("non-root joint");
            let (a, b) = (rest[parent], rest[child]);
            let len = (b - a).norm();
            let d = (b - a) / len;
            let e1 = d.cross(&z).normalize();
            let e2 = e1.cross(&d);
            let radius = (0.22 * len).clamp(6.0, 14.0);
            let mid = 0.5 * (a + b);
            let mut row = vec![0.0; NUM_JOINTS];
            match HAND_PARENTS[parent] {
                Some(grand) => {
                    row[parent] = 0.75;
                    row[grand] = 0.25;
                }
                None => row[parent] = 1.0,
            }
            for k in 0..verts_per_region {
                let phi = std::f64::consts::TAU * (k as f64 + 0.5) / verts_per_region as f64;
                let offset = radius * (phi.cos() * e1 + phi.sin() * e2);
                mesh.push(mid + offset);
                weights.push(row.clone());
                let mut dirs = [Vec3::zeros(); BETA_LEN];
                for (c, dir) in dirs.iter_mut().enumerate() {
                    *dir = 0.5 * (shape[parent][c] + shape[child][c]);
                }
                dirs[THICKNESS_COMPONENT] = e2 * (offset.dot(&e2) * BETA_THICKNESS);
                mesh_shape.push(dirs);
            }
        }

        Self::from_document(TemplateDocument {
            format: TEMPLATE_FORMAT.to_string(),
            version: TEMPLATE_VERSION,
            rest_joints: rest.iter().map(to_arr).collect(),
            parents: HAND_PARENTS.to_vec(),
            articulated: ARTICULATED_JOINTS.to_vec(),
            shape_dirs: shape.iter().map(|d| d.iter().map(to_arr).collect()).collect(),
            mesh_rest: mesh.iter().map(to_arr).collect(),
            skin_weights: weights,
            mesh_shape_dirs: mesh_shape.iter().map(|d| d.iter().map(to_arr).collect()).collect(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TemplateDocument = serde_json::from_str(text).map_err(|e| Error::invalid(format!("template JSON: {e}")))?;
        Self::from_document(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("template serializes")
    }

    pub fn from_document(doc: TemplateDocument) -> Result<Self> {
        if doc.format != TEMPLATE_FORMAT {
            return Err(Error::invalid(format!("unknown template format {:?}", doc.format)));
        }
        if doc.version != TEMPLATE_VERSION {
            return Err(Error::invalid(format!("unsupported template version {}", doc.version)));
        }
        if doc.rest_joints.len() != NUM_JOINTS || doc.parents.len() != NUM_JOINTS {
            return Err(Error::dims(format!(
                "template needs {NUM_JOINTS} joints and parents, got {} and {}",
                doc.rest_joints.len(),
                doc.parents.len()
            )));
        }
        validate_tree(&doc.parents)?;
        if doc.parents != HAND_PARENTS {
            return Err(Error::invalid("template skeleton differs from the 21-joint hand layout"));
        }
        let rest_joints: Vec<Vec3> = doc.rest_joints.iter().map(from_arr).collect();
        for (j, p) in doc.parents.iter().enumerate() {
            if let Some(p) = p {
                let len = (rest_joints[j] - rest_joints[*p]).norm();
                if !(len > 0.0) {
                    return Err(Error::invalid(format!("rest bone {p}->{j} has zero length")));
                }
            }
        }

        if doc.articulated.len() != NUM_ARTICULATED || doc.articulated[0] != 0 {
            return Err(Error::invalid("articulated map must list 16 joints starting with the root"));
        }
        let mut slot_of_joint = vec![None; NUM_JOINTS];
        for (slot, &j) in doc.articulated.iter().enumerate() {
            if j >= NUM_JOINTS || slot_of_joint[j].is_some() {
                return Err(Error::invalid(format!("articulated joint {j} is out of range or repeated")));
            }
            slot_of_joint[j] = Some(slot);
        }

        let shape_dirs = parse_dirs(&doc.shape_dirs, NUM_JOINTS, "shape_dirs")?;
        let v = doc.mesh_rest.len();
        if v < MIN_VERTICES {
            return Err(Error::invalid(format!("template mesh has {v} vertices, need {MIN_VERTICES}")));
        }
        if doc.skin_weights.len() != v {
            return Err(Error::dims(format!("{} skin weight rows for {v} vertices", doc.skin_weights.len())));
        }
        let mesh_shape_dirs = parse_dirs(&doc.mesh_shape_dirs, v, "mesh_shape_dirs")?;
        let mut sparse_skin = Vec::with_capacity(v);
        for (i, row) in doc.skin_weights.iter().enumerate() {
            if row.len() != NUM_JOINTS {
                return Err(Error::dims(format!("skin weight row {i} has {} entries", row.len())));
            }
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::invalid(format!("skin weight row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(Error::invalid(format!("skin weight row {i} sums to {sum}")));
            }
            sparse_skin.push(row.iter().copied().enumerate().filter(|(_, w)| *w > 0.0).collect());
        }
        let all = doc.rest_joints.iter().chain(&doc.mesh_rest).flatten();
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("template geometry is not finite"));
        }

        Ok(Self {
            rest_joints,
            parents: doc.parents,
            articulated: doc.articulated,
            slot_of_joint,
            shape_dirs,
            mesh_rest: doc.mesh_rest.iter().map(from_arr).collect(),
            skin_weights: doc.skin_weights,
            sparse_skin,
            mesh_shape_dirs,
        })
    }

    pub fn to_document(&self) -> TemplateDocument {
        let dirs = |d: &Vec<[Vec3; BETA_LEN]>| d.iter().map(|r| r.iter().map(to_arr).collect()).collect();
        TemplateDocument {
            format: TEMPLATE_FORMAT.to_string(),
            version: TEMPLATE_VERSION,
            rest_joints: self.rest_joints.iter().map(to_arr).collect(),
            parents: self.parents.clone(),
            articulated: self.articulated.clone(),
            shape_dirs: dirs(&self.shape_dirs),
            mesh_rest: self.mesh_rest.iter().map(to_arr).collect(),
            skin_weights: self.skin_weights.clone(),
            mesh_shape_dirs: dirs(&self.mesh_shape_dirs),
        }
    }

    pub fn rest_joints(&self) -> &[Vec3] {
        &self.rest_joints
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn articulated(&self) -> &[usize] {
        &self.articulated
    }

    /// Theta slot that rotates joint `j`, if any.
    pub fn slot_of_joint(&self, j: usize) -> Option<usize> {
        self.slot_of_joint[j]
    }

    pub fn shape_dirs(&self) -> &[[Vec3; BETA_LEN]] {
        &self.shape_dirs
    }

    pub fn mesh_rest(&self) -> &[Vec3] {
        &self.mesh_rest
    }

    pub fn skin_weights(&self) -> &[Vec<f64>] {
        &self.skin_weights
    }

    pub(crate) fn sparse_skin(&self) -> &[Vec<(usize, f64)>] {
        &self.sparse_skin
    }

    pub fn mesh_shape_dirs(&self) -> &[[Vec3; BETA_LEN]] {
        &self.mesh_shape_dirs
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh_rest.len()
    }

    /// Rest bone lengths in `HAND_PARENTS` child order (bones 1..=20).
    pub fn rest_bone_lengths(&self) -> Vec<f64> {
        (1..NUM_JOINTS).map(|c| (self.rest_joints[c] - self.rest_joints[self.parents[c].unwrap_or(0)]).norm()).collect()
    }

    /// Hinge axis that bends the bone leaving `joint` toward the palm side
    /// (+z) in the rest frame.
    pub fn flexion_axis(&self, joint: usize) -> Option<Vec3> {
        let child = (0..NUM_JOINTS).find(|&c| self.parents[c] == Some(joint))?;
        let d = self.rest_joints[child] - self.rest_joints[joint];
        let axis = d.cross(&Vec3::z());
        (axis.norm() > 0.0).then(|| axis.normalize())
    }
}

fn validate_tree(parents: &[Option<usize>]) -> Result<()> {
    if parents.first() != Some(&None) {
        return Err(Error::invalid("joint 0 must be the root"));
    }
    for (j, p) in parents.iter().enumerate().skip(1) {
        match p {
            Some(p) if *p < j => {}
            Some(p) => return Err(Error::invalid(format!("joint {j} has parent {p}; parents must precede children"))),
            None => return Err(Error::invalid(format!("joint {j} is a second root"))),
        }
    }
    Ok(())
}

fn parse_dirs(raw: &[Vec<[f64; 3]>], rows: usize, what: &str) -> Result<Vec<[Vec3; BETA_LEN]>> {
    if raw.len() != rows {
        return Err(Error::dims(format!("{what} has {} rows, expected {rows}", raw.len())));
    }
    raw.iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != BETA_LEN {
                return Err(Error::dims(format!("{what}[{i}] has {} components", row.len())));
            }
            if row.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("{what}[{i}] is not finite")));
            }
            let mut out = [Vec3::zeros(); BETA_LEN];
            for (o, r) in out.iter_mut().zip(row) {
                *o = from_arr(r);
            }
            Ok(out)
        })
        .collect()
}

fn to_arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn from_arr(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_asset_matches_builder() {
        assert_eq!(HandTemplate::embedded(), HandTemplate::mano_lite(6).unwrap());
    }

    #[test]
    fn default_mesh_size() {
        let t = HandTemplate::mano_lite(6).unwrap();
        assert_eq!(t.vertex_count(), 120);
        assert!(HandTemplate::mano_lite(3).is_err());
    }

    #[test]
    fn json_round_trip() {
        let t = HandTemplate::mano_lite(4).unwrap();
        assert_eq!(HandTemplate::from_json(&t.to_json()).unwrap(), t);
    }

    #[test]
    fn rejects_bad_weights() {
        let mut doc = HandTemplate::mano_lite(4).unwrap().to_document();
        doc.skin_weights[3][0] += 1e-6;
        assert!(HandTemplate::from_document(doc.clone()).is_err());
        doc.skin_weights[3][0] -= 1e-6;
        doc.skin_weights[5] = vec![0.0; NUM_JOINTS];
        doc.skin_weights[5][0] = 1.5;
        doc.skin_weights[5][1] = -0.5;
        assert!(HandTemplate::from_document(doc).is_err());
    }

    #[test]
    fn rejects_cycles_and_bad_versions() {
        let mut doc = HandTemplate::mano_lite(4).unwrap().to_document();
        doc.parents[2] = Some(3);
        assert!(HandTemplate::from_document(doc.clone()).is_err());
        let mut doc = HandTemplate::mano_lite(4).unwrap().to_document();
        doc.version = 99;
        assert!(HandTemplate::from_document(doc).is_err());
    }

    #[test]
    fn rest_bones_positive() {
        let t = HandTemplate::embedded();
        assert!(t.rest_bone_lengths().iter().all(|l| *l > 0.0));
    }

    /// Run with `--ignored` after changing the builder to refresh the asset.
    #[test]
    #[ignore]
    fn regenerate_embedded_asset() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/mano_lite_template.json");
        std::fs::write(path, serde_json::to_string(&HandTemplate::mano_lite(6).unwrap().to_document()).unwrap() + "\n").unwrap();
    }
}
