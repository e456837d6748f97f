//! Pixel boxes and overlap measures.
//!
//! Boxes are half-open: `(x0, y0, x1, y1)` covers columns `x0..x1` and rows
//! `y0..y1`, so the area is `(x1 - x0) * (y1 - y0)` with no off-by-one.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::param(format!(
                "degenerate box ({x0},{y0},{x1},{y1})"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    /// Box from signed coordinates clipped to `[0,w) x [0,h)`; `None` when
    /// nothing is left after clipping.
    pub fn clipped(x0: i64, y0: i64, x1: i64, y1: i64, w: u32, h: u32) -> Option<Self> {
        let cx0 = x0.clamp(0, w as i64) as u32;
        let cy0 = y0.clamp(0, h as i64) as u32;
        let cx1 = x1.clamp(0, w as i64) as u32;
        let cy1 = y1.clamp(0, h as i64) as u32;
        Self::new(cx0, cy0, cx1, cy1).ok()
    }

    pub fn x0(&self) -> u32 {
        self.x0
    }
    pub fn y0(&self) -> u32 {
        self.y0
    }
    pub fn x1(&self) -> u32 {
        self.x1
    }
    pub fn y1(&self) -> u32 {
        self.y1
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let w = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let h = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        w as u64 * h as u64
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.x1 <= width && self.y1 <= height
    }

    pub fn as_array(&self) -> [u32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    /// Smallest box containing both.
    pub fn union_hull(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.as_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x0, y0, x1, y1] = <[u32; 4]>::deserialize(d)?;
        BBox::new(x0, y0, x1, y1).map_err(serde::de::Error::custom)
    }
}

/// Intersection over union.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Mean, over predictions, of each prediction's best IoU against the truth
/// set. Ties between truths resolve to the lowest index. Unmatched truths do
/// not enter the mean; an empty prediction set scores 0.
pub fn match_iou(preds: &[BBox], truths: &[BBox]) -> Result<f64> {
    if truths.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = preds
        .iter()
        .map(|p| best_match(p, truths).map_or(0.0, |(_, v)| v))
        .sum();
    Ok(total / preds.len() as f64)
}

/// Index and IoU of the truth overlapping `pred` the most (lowest index on
/// ties).
pub fn best_match(pred: &BBox, truths: &[BBox]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in truths.iter().enumerate() {
        let v = iou(pred, t);
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}
