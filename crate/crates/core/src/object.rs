//! Object pose from dense control-point votes.
//!
//! Every cell `g` of a `rows x cols` grid predicts, for each of the 21
//! control points of the object's bounding box, a pixel offset `v_{g,i}`
//! from the cell centre and a confidence. The most confident proposals per
//! control point are averaged and the resulting 2D-3D correspondences are
//! handed to PnP.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{check_finite2, check_finite3, solve_pnp, PerspectiveCamera, Pose6Dof, Vec2, Vec3};
use crate::{Error, Result};

pub const NUM_CONTROL_POINTS: usize = 21;
pub const NUM_CORNERS: usize = 8;
/// Default grid: 32 x 32 cells over a 512 px input.
pub const GRID_SIZE: usize = 32;
pub const GRID_STRIDE: f64 = 16.0;
pub const DEFAULT_TOPK: usize = 10;
/// Index of the box centre among the control points.
pub const CENTER_INDEX: usize = 20;

/// Corner pairs joined by a box edge. Corner `c` sits on the `+x` face when
/// bit 0 is set, `+y` for bit 1 and `+z` for bit 2.
pub const BOX_EDGES: [(usize, usize); 12] =
    [(0, 1), (0, 2), (0, 4), (1, 3), (1, 5), (2, 3), (2, 6), (3, 7), (4, 5), (4, 6), (5, 7), (6, 7)];

const CONSISTENCY_TOL: f64 = 1e-9;

/// Control points from 8 box corners: the corners, then the 12 edge
/// midpoints in [`BOX_EDGES`] order, then the centre.
pub fn control_points_from_corners(corners: &[Vec3; NUM_CORNERS]) -> Vec<Vec3> {
    let mut pts = corners.to_vec();
    pts.extend(BOX_EDGES.iter().map(|&(a, b)| (corners[a] + corners[b]) / 2.0));
    pts.push(corners.iter().sum::<Vec3>() / NUM_CORNERS as f64);
    pts
}

/// Corners of an axis-aligned box of full side lengths `extents`, centred on
/// the origin.
pub fn box_corners(extents: [f64; 3]) -> [Vec3; NUM_CORNERS] {
    std::array::from_fn(|c| {
        let sign = |bit: usize| if c >> bit & 1 == 1 { 0.5 } else { -0.5 };
        Vec3::new(sign(0) * extents[0], sign(1) * extents[1], sign(2) * extents[2])
    })
}

/// Surface samples of the (possibly skewed) box spanned by `corners`: a
/// 5 x 5 lattice on every face, without duplicates.
pub fn box_surface(corners: &[Vec3; NUM_CORNERS]) -> Vec<Vec3> {
    let n = 4;
    let mut out = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                if ![i, j, k].iter().any(|&v| v == 0 || v == n) {
                    continue;
                }
                let (u, v, w) = (i as f64 / n as f64, j as f64 / n as f64, k as f64 / n as f64);
                let p = (0..NUM_CORNERS)
                    .map(|c| {
                        let f = |bit: usize, t: f64| if c >> bit & 1 == 1 { t } else { 1.0 - t };
                        corners[c] * (f(0, u) * f(1, v) * f(2, w))
                    })
                    .sum();
                out.push(p);
            }
        }
    }
    out
}

/// Rigid object with its 21 bounding-box control points and a vertex set
/// used for the ADD metric.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    control_points: Vec<Vec3>,
    mesh_vertices: Vec<Vec3>,
    diameter: f64,
}

/// JSON form. Exactly one of `extents` and `corners` is given; without
/// `mesh_vertices` the box surface is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectModelDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extents: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corners: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_vertices: Option<Vec<[f64; 3]>>,
}

impl ObjectModel {
    /// Checks that the control points follow the corner / midpoint / centre
    /// construction and that the mesh has a positive diameter.
    pub fn new(control_points: Vec<Vec3>, mesh_vertices: Vec<Vec3>) -> Result<Self> {
        if control_points.len() != NUM_CONTROL_POINTS {
            return Err(Error::dims(format!("object needs {NUM_CONTROL_POINTS} control points, got {}", control_points.len())));
        }
        check_finite3(&control_points, "control points")?;
        check_finite3(&mesh_vertices, "mesh vertices")?;
        let corners: [Vec3; NUM_CORNERS] = std::array::from_fn(|c| control_points[c]);
        let expected = control_points_from_corners(&corners);
        let scale = corners.iter().map(|c| c.norm()).fold(1.0, f64::max);
        if let Some(i) = (0..NUM_CONTROL_POINTS).find(|&i| (expected[i] - control_points[i]).norm() > CONSISTENCY_TOL * scale) {
            return Err(Error::invalid(format!("control point {i} does not follow the box construction")));
        }
        let diameter = diameter(&mesh_vertices);
        if !(diameter > 0.0) {
            return Err(Error::degenerate("object mesh has zero diameter"));
        }
        Ok(Self { control_points, mesh_vertices, diameter })
    }

    pub fn from_corners(corners: &[Vec3; NUM_CORNERS], mesh_vertices: Option<Vec<Vec3>>) -> Result<Self> {
        let mesh = mesh_vertices.unwrap_or_else(|| box_surface(corners));
        Self::new(control_points_from_corners(corners), mesh)
    }

    pub fn from_extents(extents: [f64; 3]) -> Result<Self> {
        if extents.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::invalid(format!("box extents must be positive, got {extents:?}")));
        }
        Self::from_corners(&box_corners(extents), None)
    }

    pub fn from_document(doc: &ObjectModelDocument) -> Result<Self> {
        let to_vecs = |v: &[[f64; 3]]| v.iter().map(|p| Vec3::from(*p)).collect::<Vec<_>>();
        let mesh = doc.mesh_vertices.as_deref().map(to_vecs);
        let corners = match (&doc.extents, &doc.corners) {
            (Some(e), None) => {
                if e.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
                    return Err(Error::invalid(format!("box extents must be positive, got {e:?}")));
                }
                box_corners(*e)
            }
            (None, Some(c)) => {
                let c = to_vecs(c);
                c.try_into().map_err(|c: Vec<Vec3>| Error::dims(format!("object needs 8 corners, got {}", c.len())))?
            }
            _ => return Err(Error::invalid("object model needs exactly one of `extents` and `corners`")),
        };
        Self::from_corners(&corners, mesh)
    }

    pub fn to_document(&self) -> ObjectModelDocument {
        let arr = |v: &[Vec3]| v.iter().map(|p| [p.x, p.y, p.z]).collect();
        ObjectModelDocument { extents: None, corners: Some(arr(self.corners())), mesh_vertices: Some(arr(&self.mesh_vertices)) }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ObjectModelDocument = serde_json::from_str(text).map_err(|e| Error::invalid(format!("object model json: {e}")))?;
        Self::from_document(&doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("object model serializes")
    }

    pub fn control_points(&self) -> &[Vec3] {
        &self.control_points
    }

    pub fn corners(&self) -> &[Vec3] {
        &self.control_points[..NUM_CORNERS]
    }

    pub fn mesh_vertices(&self) -> &[Vec3] {
        &self.mesh_vertices
    }

    /// Largest distance between two mesh vertices, in mm.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Control points projected under `pose` through `cam`.
    pub fn project_control_points(&self, pose: &Pose6Dof, cam: &PerspectiveCamera) -> Vec<Vec2> {
        self.control_points.iter().map(|p| cam.project(&pose.transform(p))).collect()
    }
}

fn diameter(pts: &[Vec3]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

/// Per-cell offsets and confidences, laid out `(row, col, control point)`
/// with the control point fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPrediction {
    rows: usize,
    cols: usize,
    offsets: Vec<Vec2>,
    confidences: Vec<f64>,
}

impl GridPrediction {
    /// Confidences must lie in `(0, 1]`; a saturated sigmoid rounds to 1.
    pub fn new(rows: usize, cols: usize, offsets: Vec<Vec2>, confidences: Vec<f64>) -> Result<Self> {
        let n = rows * cols * NUM_CONTROL_POINTS;
        if rows == 0 || cols == 0 || offsets.len() != n || confidences.len() != n {
            return Err(Error::dims(format!(
                "{rows}x{cols} grid needs {n} offsets and confidences, got {} and {}",
                offsets.len(),
                confidences.len()
            )));
        }
        check_finite2(&offsets, "grid offsets")?;
        if let Some(c) = confidences.iter().find(|c| !(**c > 0.0 && **c <= 1.0)) {
            return Err(Error::invalid(format!("grid confidence {c} outside (0, 1]")));
        }
        Ok(Self { rows, cols, offsets, confidences })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn index(&self, row: usize, col: usize, control: usize) -> usize {
        (row * self.cols + col) * NUM_CONTROL_POINTS + control
    }

    pub fn offset(&self, row: usize, col: usize, control: usize) -> Vec2 {
        self.offsets[self.index(row, col, control)]
    }

    pub fn confidence(&self, row: usize, col: usize, control: usize) -> f64 {
        self.confidences[self.index(row, col, control)]
    }

    pub fn offsets(&self) -> &[Vec2] {
        &self.offsets
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }

    /// Noise-free grid voting exactly for `points`, every confidence 1.
    pub fn exact(rows: usize, cols: usize, stride: f64, points: &[Vec2]) -> Result<Self> {
        Self::from_votes(rows, cols, stride, points, |_, _, _| Vec2::zeros())
    }

    /// Grid whose offsets miss `points` by isotropic Gaussian noise of
    /// standard deviation `sigma` px, with confidences set to the training
    /// target of that miss.
    pub fn noisy<R: Rng + ?Sized>(rows: usize, cols: usize, stride: f64, points: &[Vec2], sigma: f64, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("noise sigma: {e}")))?;
        Self::from_votes(rows, cols, stride, points, |_, _, _| Vec2::new(normal.sample(rng), normal.sample(rng)))
    }

    fn from_votes(
        rows: usize,
        cols: usize,
        stride: f64,
        points: &[Vec2],
        mut miss: impl FnMut(usize, usize, usize) -> Vec2,
    ) -> Result<Self> {
        check_points(points)?;
        let mut offsets = Vec::with_capacity(rows * cols * NUM_CONTROL_POINTS);
        let mut confidences = Vec::with_capacity(offsets.capacity());
        for row in 0..rows {
            for col in 0..cols {
                for (i, t) in points.iter().enumerate() {
                    let m = miss(row, col, i);
                    offsets.push(t - cell_center(row, col, stride) + m);
                    confidences.push(conf_target(&m).max(f64::MIN_POSITIVE));
                }
            }
        }
        Self::new(rows, cols, offsets, confidences)
    }
}

fn check_points(points: &[Vec2]) -> Result<()> {
    if points.len() != NUM_CONTROL_POINTS {
        return Err(Error::dims(format!("expected {NUM_CONTROL_POINTS} control points, got {}", points.len())));
    }
    check_finite2(points, "control point targets")
}

/// Pixel centre `p_g` of a grid cell: `(stride/2 + stride*col, stride/2 + stride*row)`.
pub fn cell_center(row: usize, col: usize, stride: f64) -> Vec2 {
    Vec2::new(stride * (col as f64 + 0.5), stride * (row as f64 + 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPointProposal {
    pub point2d: Vec2,
    pub confidence: f64,
    pub grid_index: (usize, usize),
    pub control_index: usize,
}

/// One proposal list per control point, each in row-major cell order.
pub fn decode_proposals(grid: &GridPrediction, stride: f64) -> Vec<Vec<ControlPointProposal>> {
    let mut out = vec![Vec::with_capacity(grid.rows * grid.cols); NUM_CONTROL_POINTS];
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let centre = cell_center(row, col, stride);
            for (i, list) in out.iter_mut().enumerate() {
                list.push(ControlPointProposal {
                    point2d: centre + grid.offset(row, col, i),
                    confidence: grid.confidence(row, col, i),
                    grid_index: (row, col),
                    control_index: i,
                });
            }
        }
    }
    out
}

/// Confidence-weighted mean of the `k` most confident proposals of every
/// control point. Equal confidences are ordered by `(row, col, control)`.
pub fn select_topk(proposals: &[Vec<ControlPointProposal>], k: usize) -> Result<Vec<Vec2>> {
    if k == 0 {
        return Err(Error::invalid("top-k needs k >= 1"));
    }
    proposals
        .iter()
        .enumerate()
        .map(|(i, list)| {
            if list.len() < k {
                return Err(Error::invalid(format!("control point {i} has {} proposals, need {k}", list.len())));
            }
            let mut order: Vec<&ControlPointProposal> = list.iter().collect();
            order.sort_by(|a, b| {
                b.confidence.total_cmp(&a.confidence).then(a.grid_index.cmp(&b.grid_index)).then(a.control_index.cmp(&b.control_index))
            });
            let top = &order[..k];
            let weight: f64 = top.iter().map(|p| p.confidence).sum();
            if !(weight > 0.0) {
                return Err(Error::degenerate(format!("control point {i} has zero total confidence")));
            }
            Ok(top.iter().map(|p| p.point2d * p.confidence).sum::<Vec2>() / weight)
        })
        .collect()
}

/// Training target for a cell's confidence given its miss `delta`.
pub fn conf_target(delta: &Vec2) -> f64 {
    (-delta.norm()).exp()
}

/// Misses `delta_{g,i} = p_g + v_{g,i} - t_i` in grid layout.
pub fn grid_deltas(grid: &GridPrediction, gt_points: &[Vec2], stride: f64) -> Result<Vec<Vec2>> {
    check_points(gt_points)?;
    let mut out = Vec::with_capacity(grid.offsets.len());
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let centre = cell_center(row, col, stride);
            for (i, t) in gt_points.iter().enumerate() {
                out.push(centre + grid.offset(row, col, i) - t);
            }
        }
    }
    Ok(out)
}

/// Sum of L1 norms of all misses.
pub fn p2d_loss(grid: &GridPrediction, gt_points: &[Vec2], stride: f64) -> Result<f64> {
    Ok(grid_deltas(grid, gt_points, stride)?.iter().map(|d| d.x.abs() + d.y.abs()).sum())
}

/// Sum of squared differences between predicted confidences and the
/// targets implied by `gt_deltas`.
pub fn conf_loss(pred_conf: &[f64], gt_deltas: &[Vec2]) -> Result<f64> {
    if pred_conf.len() != gt_deltas.len() {
        return Err(Error::dims(format!("{} confidences vs {} deltas", pred_conf.len(), gt_deltas.len())));
    }
    Ok(pred_conf.iter().zip(gt_deltas).map(|(c, d)| (c - conf_target(d)).powi(2)).sum())
}

/// PnP on the 21 aggregated control points.
pub fn recover_pose(points2d: &[Vec2], model: &ObjectModel, cam: &PerspectiveCamera) -> Result<Pose6Dof> {
    check_points(points2d)?;
    solve_pnp(model.control_points(), points2d, cam)
}

/// Decode, aggregate and solve in one call.
pub fn estimate_pose(grid: &GridPrediction, stride: f64, k: usize, model: &ObjectModel, cam: &PerspectiveCamera) -> Result<Pose6Dof> {
    let points = select_topk(&decode_proposals(grid, stride), k)?;
    recover_pose(&points, model, cam)
}

/// Mean vertex distance between the two placements of the mesh (ADD) and
/// whether it falls below a tenth of the diameter.
pub fn add_metric(pred: &Pose6Dof, gt: &Pose6Dof, model: &ObjectModel) -> (f64, bool) {
    let verts = model.mesh_vertices();
    let mean = verts.iter().map(|v| (pred.transform(v) - gt.transform(v)).norm()).sum::<f64>() / verts.len() as f64;
    (mean, mean < 0.1 * model.diameter())
}
