//! `hopose losses`: evaluates the hand, object and total training losses on
//! a JSON fixture.

use std::fs;
use std::path::Path;

use hopose::attention::{hand_loss, heatmap_loss, mano_loss, masked_total_loss, object_loss, FeatureMap, ManoTerms};
use hopose::object::{conf_loss, grid_deltas, p2d_loss, GridPrediction};
use hopose::{Vec2, Vec3};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

/// Row-major `H x W x C` tensor, channel fastest.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorDoc {
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

impl TensorDoc {
    fn to_map(&self) -> CliResult<FeatureMap> {
        let [h, w, c] = self.shape;
        Ok(FeatureMap::new(h, w, c, self.data.clone())?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManoDoc {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub joints3d: Vec<[f64; 3]>,
    pub vertices: Vec<[f64; 3]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandFixture {
    pub pred_heatmaps: TensorDoc,
    pub gt_heatmaps: TensorDoc,
    pub pred: ManoDoc,
    pub gt: ManoDoc,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectFixture {
    pub rows: usize,
    pub cols: usize,
    pub stride: f64,
    /// `rows * cols * 21` offsets, control point fastest.
    pub offsets: Vec<[f64; 2]>,
    pub confidences: Vec<f64>,
    pub gt_points: Vec<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossFixture {
    pub has_object_labels: bool,
    pub hand: HandFixture,
    pub object: Option<ObjectFixture>,
}

#[derive(Debug, Serialize)]
pub struct LossReport {
    pub heatmap: f64,
    pub mano: f64,
    pub hand: f64,
    pub p2d: Option<f64>,
    pub conf: Option<f64>,
    pub object: Option<f64>,
    pub total: f64,
}

fn points3(v: &[[f64; 3]]) -> Vec<Vec3> {
    v.iter().map(|p| Vec3::from(*p)).collect()
}

fn points2(v: &[[f64; 2]]) -> Vec<Vec2> {
    v.iter().map(|p| Vec2::from(*p)).collect()
}

pub fn evaluate_fixture(fx: &LossFixture) -> CliResult<LossReport> {
    let heatmap = heatmap_loss(&fx.hand.pred_heatmaps.to_map()?, &fx.hand.gt_heatmaps.to_map()?)?;
    let (pj, pv) = (points3(&fx.hand.pred.joints3d), points3(&fx.hand.pred.vertices));
    let (gj, gv) = (points3(&fx.hand.gt.joints3d), points3(&fx.hand.gt.vertices));
    let mano = mano_loss(
        &ManoTerms { theta: &fx.hand.pred.theta, beta: &fx.hand.pred.beta, joints3d: &pj, vertices: &pv },
        &ManoTerms { theta: &fx.hand.gt.theta, beta: &fx.hand.gt.beta, joints3d: &gj, vertices: &gv },
    )?;
    let hand = hand_loss(heatmap, mano);

    let (p2d, conf, object) = match &fx.object {
        Some(o) => {
            let grid = GridPrediction::new(o.rows, o.cols, points2(&o.offsets), o.confidences.clone())?;
            let gt = points2(&o.gt_points);
            let p2d = p2d_loss(&grid, &gt, o.stride)?;
            let conf = conf_loss(grid.confidences(), &grid_deltas(&grid, &gt, o.stride)?)?;
            (Some(p2d), Some(conf), Some(object_loss(p2d, conf)))
        }
        None if fx.has_object_labels => {
            return Err(CliError::Data("has_object_labels is set but the fixture has no object section".into()))
        }
        None => (None, None, None),
    };
    let total = masked_total_loss(hand, object.unwrap_or(0.0), fx.has_object_labels);
    Ok(LossReport { heatmap, mano, hand, p2d, conf, object, total })
}

pub fn run(path: &Path) -> CliResult<()> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let fx: LossFixture = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let report = evaluate_fixture(&fx)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?);
    Ok(())
}
