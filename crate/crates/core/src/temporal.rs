//! k-frame consistency gate over raw per-frame gesture decisions.

use crate::error::{Error, Result};
use crate::labels::{GestureLabel, LabelRegistry};
use crate::metrics::macro_f1;

/// Gate state. Generic over the label type so tests can drive it with
/// plain characters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalGate<L> {
    k: usize,
    validated: Option<L>,
    candidate: Option<L>,
    run: usize,
}

impl<L: Copy + Eq> TemporalGate<L> {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("k must be at least 1"));
        }
        Ok(Self {
            k,
            validated: None,
            candidate: None,
            run: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn validated(&self) -> Option<L> {
        self.validated
    }

    pub fn run_length(&self) -> usize {
        self.run
    }

    /// Feeds one raw label. Returns the validated label (`None` until the
    /// first validation) and whether it changed on this frame.
    pub fn step(&mut self, raw: L) -> (Option<L>, bool) {
        if self.validated == Some(raw) {
            self.candidate = None;
            self.run = 0;
            return (self.validated, false);
        }
        if self.candidate == Some(raw) {
            self.run += 1;
        } else {
            self.candidate = Some(raw);
            self.run = 1;
        }
        if self.run >= self.k {
            self.validated = Some(raw);
            self.candidate = None;
            self.run = 0;
            return (self.validated, true);
        }
        (self.validated, false)
    }

    pub fn reset(&mut self) {
        self.validated = None;
        self.candidate = None;
        self.run = 0;
    }
}

/// Maps every negative-bound label (other, none) onto a single label so the
/// gate treats them as one class.
pub fn collapse(label: GestureLabel, registry: &LabelRegistry, negative: GestureLabel) -> Result<GestureLabel> {
    Ok(if registry.is_negative(label)? { negative } else { label })
}

/// Gated outputs for a raw stream; frames before the first validation map to
/// `unset`.
pub fn gate_stream<L: Copy + Eq>(raw: &[L], k: usize, unset: L) -> Result<Vec<L>> {
    let mut gate = TemporalGate::new(k)?;
    Ok(raw.iter().map(|&r| gate.step(r).0.unwrap_or(unset)).collect())
}

/// Macro-F1 of the gated stream against the truth for each `k`. Unset frames
/// count as predictions of `negative`.
pub fn evaluate_k(stream: &[(usize, usize)], ks: impl IntoIterator<Item = usize>, negative: usize) -> Result<Vec<(usize, f64)>> {
    if stream.is_empty() {
        return Err(Error::Empty("label stream".into()));
    }
    let raw: Vec<usize> = stream.iter().map(|p| p.0).collect();
    let truth: Vec<usize> = stream.iter().map(|p| p.1).collect();
    ks.into_iter()
        .map(|k| Ok((k, macro_f1(&gate_stream(&raw, k, negative)?, &truth))))
        .collect()
}
