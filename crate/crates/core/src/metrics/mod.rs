//! Evaluation mathematics for every stage of the pipeline.

pub mod bleu;
pub mod classification;
pub mod detection;
pub mod pareto;

pub use bleu::{bleu, corpus_bleu, tokenize};
pub use classification::{detector_label, macro_f1, prf1, ClassCounts, ClassificationReport, ConfusionTally, Prf1};
pub use detection::{
    average_precision, avg_iou, detection_f1, detection_tally, match_image, mean_ap, DetectionRecord, ImageMatch,
    ScoredBox,
};
pub use pareto::{dominates, pareto_flags, pareto_front, ModelPoint};
