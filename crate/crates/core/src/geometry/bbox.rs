use serde::{Deserialize, Serialize};

use super::{finite2, Vec2};
use crate::{Error, Result};

/// Axis-aligned box in pixels, `min <= max` component-wise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Box2 {
    min: Vec2,
    max: Vec2,
}

impl Box2 {
    pub fn new(min: Vec2, max: Vec2) -> Result<Self> {
        if !finite2(&min) || !finite2(&max) {
            return Err(Error::invalid("box corners are not finite"));
        }
        if min.x > max.x || min.y > max.y {
            return Err(Error::invalid(format!("box min ({}, {}) exceeds max ({}, {})", min.x, min.y, max.x, max.y)));
        }
        Ok(Self { min, max })
    }

    pub fn min(&self) -> Vec2 {
        self.min
    }

    pub fn max(&self) -> Vec2 {
        self.max
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn translated(&self, d: Vec2) -> Self {
        Self { min: self.min + d, max: self.max + d }
    }
}

impl TryFrom<[f64; 4]> for Box2 {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Box2::new(Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3]))
    }
}

impl From<Box2> for [f64; 4] {
    fn from(b: Box2) -> Self {
        [b.min.x, b.min.y, b.max.x, b.max.y]
    }
}

/// Intersection over union. Two zero-area boxes that coincide score 1.
pub fn iou(a: &Box2, b: &Box2) -> f64 {
    let lo = a.min.sup(&b.min);
    let hi = a.max.inf(&b.max);
    let inter = (hi.x - lo.x).max(0.0) * (hi.y - lo.y).max(0.0);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Tight bounds of a non-empty point set.
pub fn bbox_of_points(pts: &[Vec2]) -> Result<Box2> {
    let first = pts.first().ok_or_else(|| Error::invalid("bbox_of_points: empty point set"))?;
    let (min, max) = pts.iter().skip(1).fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    Box2::new(min, max)
}
