//! Precision, recall and F1 from per-class confusion tallies.

use serde::Serialize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Ratios with a zero denominator are defined as 0.
pub fn prf1(c: ClassCounts) -> Prf1 {
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf1 {
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfusionTally {
    counts: Vec<ClassCounts>,
    seen: Vec<bool>,
}

impl ConfusionTally {
    pub fn new(n_classes: usize) -> Self {
        Self {
            counts: vec![ClassCounts::default(); n_classes],
            seen: vec![false; n_classes],
        }
    }

    fn grow(&mut self, class: usize) {
        if class >= self.counts.len() {
            self.counts.resize(class + 1, ClassCounts::default());
            self.seen.resize(class + 1, false);
        }
    }

    pub fn record(&mut self, predicted: usize, truth: usize) {
        self.grow(predicted.max(truth));
        self.seen[predicted] = true;
        self.seen[truth] = true;
        if predicted == truth {
            self.counts[truth].tp += 1;
        } else {
            self.counts[predicted].fp += 1;
            self.counts[truth].fn_ += 1;
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut t = Self::default();
        for (p, g) in pairs {
            t.record(p, g);
        }
        t
    }

    pub fn counts(&self) -> &[ClassCounts] {
        &self.counts
    }

    /// Per-class scores plus macro averages over the classes that occur as a
    /// prediction or a truth at least once.
    pub fn report(&self) -> ClassificationReport {
        let per_class: Vec<Prf1> = self.counts.iter().map(|&c| prf1(c)).collect();
        let active: Vec<&Prf1> = per_class
            .iter()
            .zip(&self.seen)
            .filter_map(|(p, &s)| s.then_some(p))
            .collect();
        let mean = |f: fn(&Prf1) -> f64| {
            if active.is_empty() {
                0.0
            } else {
                active.iter().map(|p| f(p)).sum::<f64>() / active.len() as f64
            }
        };
        ClassificationReport {
            macro_precision: mean(|p| p.precision),
            macro_recall: mean(|p| p.recall),
            macro_f1: mean(|p| p.f1),
            per_class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub per_class: Vec<Prf1>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Macro-F1 of paired predictions and truths.
pub fn macro_f1(predicted: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(predicted.len(), truth.len(), "prediction/truth length mismatch");
    ConfusionTally::from_pairs(predicted.iter().copied().zip(truth.iter().copied()))
        .report()
        .macro_f1
}

/// Reads a detector's output as a classification: the label of its most
/// confident box, or `none_label` when it predicted nothing. Equal
/// confidences keep the earlier box.
pub fn detector_label(detections: &[(usize, f64)], none_label: usize) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for &(label, conf) in detections {
        if best.map_or(true, |(_, c)| conf > c) {
            best = Some((label, conf));
        }
    }
    best.map_or(none_label, |(l, _)| l)
}
