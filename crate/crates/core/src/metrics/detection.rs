//! Detection scoring: confidence-ordered matching at an IoU threshold,
//! F1, all-point interpolated AP and mean IoU.

use serde::{Deserialize, Serialize};

use super::classification::{prf1, ClassCounts, Prf1};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub confidence: f64,
}

/// Predictions and ground truth for one image.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub predictions: Vec<ScoredBox>,
    pub truths: Vec<BBox>,
}

impl DetectionRecord {
    /// Record from unscored boxes; earlier boxes rank higher.
    pub fn unscored(predictions: &[BBox], truths: &[BBox]) -> Self {
        let n = predictions.len().max(1) as f64;
        Self {
            predictions: predictions
                .iter()
                .enumerate()
                .map(|(i, &bbox)| ScoredBox {
                    bbox,
                    confidence: 1.0 - i as f64 / n,
                })
                .collect(),
            truths: truths.to_vec(),
        }
    }
}

/// Outcome of matching one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMatch {
    /// Prediction indices in ranked order (descending confidence, stable).
    pub order: Vec<usize>,
    /// For each ranked prediction: the claimed truth and its IoU, if a TP.
    pub hits: Vec<Option<(usize, f64)>>,
    pub unmatched_truths: usize,
}

impl ImageMatch {
    pub fn counts(&self) -> ClassCounts {
        let tp = self.hits.iter().filter(|h| h.is_some()).count() as u64;
        ClassCounts {
            tp,
            fp: self.hits.len() as u64 - tp,
            fn_: self.unmatched_truths as u64,
        }
    }
}

fn ranked(preds: &[ScoredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    order
}

/// Each prediction, most confident first, looks up the truth it overlaps the
/// most. It is a true positive when that IoU is positive and at least
/// `lambda` and the truth is still unclaimed; otherwise a false positive.
pub fn match_image(record: &DetectionRecord, lambda: f64) -> ImageMatch {
    let order = ranked(&record.predictions);
    let mut claimed = vec![false; record.truths.len()];
    let mut hits = Vec::with_capacity(order.len());
    for &i in &order {
        let p = &record.predictions[i].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (j, t) in record.truths.iter().enumerate() {
            let v = iou(p, t);
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        let hit = match best {
            Some((j, v)) if v > 0.0 && v >= lambda && !claimed[j] => {
                claimed[j] = true;
                Some((j, v))
            }
            _ => None,
        };
        hits.push(hit);
    }
    ImageMatch {
        order,
        hits,
        unmatched_truths: claimed.iter().filter(|c| !**c).count(),
    }
}

pub fn detection_tally(records: &[DetectionRecord], lambda: f64) -> ClassCounts {
    let mut total = ClassCounts::default();
    for r in records {
        let c = match_image(r, lambda).counts();
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn_ += c.fn_;
    }
    total
}

pub fn detection_f1(records: &[DetectionRecord], lambda: f64) -> Prf1 {
    prf1(detection_tally(records, lambda))
}

/// All-point interpolated average precision over every image's predictions
/// pooled and ranked by confidence (ties keep record order, then input
/// order).
pub fn average_precision(records: &[DetectionRecord], lambda: f64) -> Result<f64> {
    let n_truth: usize = records.iter().map(|r| r.truths.len()).sum();
    if n_truth == 0 {
        return Err(Error::NoGroundTruth);
    }
    let mut ranked_hits: Vec<(f64, bool)> = Vec::new();
    for r in records {
        let m = match_image(r, lambda);
        for (k, &i) in m.order.iter().enumerate() {
            ranked_hits.push((r.predictions[i].confidence, m.hits[k].is_some()));
        }
    }
    ranked_hits.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, hit) in &ranked_hits {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_truth as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    for i in 1..recall.len() {
        ap += (recall[i] - recall[i - 1]) * precision[i];
    }
    Ok(ap)
}

/// Unweighted mean over the classes whose AP is defined.
pub fn mean_ap(per_class: &[Option<f64>]) -> Result<f64> {
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.len() < per_class.len() {
        log::warn!(
            "{} class(es) without ground truth excluded from mAP",
            per_class.len() - defined.len()
        );
    }
    if defined.is_empty() {
        return Err(Error::Empty("no class with a defined AP".into()));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Mean IoU where every matched pair contributes its IoU and every unmatched
/// prediction or truth contributes 0. Nothing to average yields 0.
pub fn avg_iou(records: &[DetectionRecord], lambda: f64) -> f64 {
    let mut sum = 0.0;
    let mut terms = 0usize;
    for r in records {
        let m = match_image(r, lambda);
        for hit in &m.hits {
            if let Some((_, v)) = hit {
                sum += v;
            }
            terms += 1;
        }
        terms += m.unmatched_truths;
    }
    if terms == 0 {
        log::warn!("average IoU over an empty record set reported as 0");
        return 0.0;
    }
    sum / terms as f64
}
