//! Dense + softmax gesture classifier over pooled features, and the switch
//! that maps its one-hot output to a specialized head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::FeatureVector;
use crate::error::{Error, Result};
use crate::labels::{GestureLabel, HeadBinding, LabelRegistry};
use crate::nn::{self, ParamRef, ParamStore};
use crate::train::Trainable;

pub const INIT_BOUND: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseSoftmaxHead {
    n_labels: usize,
    feature_dim: usize,
    params: ParamStore,
    w: ParamRef,
    b: ParamRef,
}

impl DenseSoftmaxHead {
    /// Weights uniform in `±0.05`, biases zero.
    pub fn new(n_labels: usize, feature_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let w = params.add_uniform("W", vec![n_labels, feature_dim], INIT_BOUND, &mut rng);
        let b = params.add_const("b", vec![n_labels], 0.0, true);
        Self {
            n_labels,
            feature_dim,
            params,
            w,
            b,
        }
    }

    pub fn zeros(n_labels: usize, feature_dim: usize) -> Self {
        let mut head = Self::new(n_labels, feature_dim, 0);
        head.params.values_mut().fill(0.0);
        head
    }

    pub fn from_weights(weights: &[f64], biases: &[f64]) -> Result<Self> {
        let n_labels = biases.len();
        if n_labels == 0 || weights.is_empty() || weights.len() % n_labels != 0 {
            return Err(Error::shape(format!(
                "weights of length {} do not fit {n_labels} labels",
                weights.len()
            )));
        }
        let mut head = Self::zeros(n_labels, weights.len() / n_labels);
        head.params.get_mut(head.w).copy_from_slice(weights);
        head.params.get_mut(head.b).copy_from_slice(biases);
        Ok(head)
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        nn::dense(self.params.get(self.w), self.params.get(self.b), x)
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_dim {
            return Err(Error::shape(format!(
                "classifier expects {} features, got {}",
                self.feature_dim,
                x.len()
            )));
        }
        Ok(nn::softmax(&self.logits(x)))
    }

    pub fn classify(&self, features: &FeatureVector) -> Result<RoutingDecision> {
        let probabilities = self.probabilities(&features.to_f64())?;
        Ok(RoutingDecision::from_probabilities(probabilities))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDecision {
    pub probabilities: Vec<f64>,
    pub one_hot: Vec<u8>,
    pub label: GestureLabel,
}

impl RoutingDecision {
    pub fn from_probabilities(probabilities: Vec<f64>) -> Self {
        let idx = nn::argmax(&probabilities);
        let mut one_hot = vec![0u8; probabilities.len()];
        one_hot[idx] = 1;
        Self {
            probabilities,
            one_hot,
            label: GestureLabel::from_index(idx),
        }
    }
}

/// The head a routed frame activates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSelector {
    /// Fingertip localization; `drag` frames skip object description.
    Localization { drag: bool },
    Caption,
    Pinch,
    /// Negative class: no head runs and no payload is produced.
    NoHead,
}

impl From<HeadBinding> for HeadSelector {
    fn from(b: HeadBinding) -> Self {
        match b {
            HeadBinding::Point => HeadSelector::Localization { drag: false },
            HeadBinding::Drag => HeadSelector::Localization { drag: true },
            HeadBinding::Caption => HeadSelector::Caption,
            HeadBinding::Pinch => HeadSelector::Pinch,
            HeadBinding::Negative => HeadSelector::NoHead,
        }
    }
}

pub fn route(decision: &RoutingDecision, registry: &LabelRegistry) -> Result<HeadSelector> {
    Ok(registry.binding(decision.label)?.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Trainable for DenseSoftmaxHead {
    type Sample = ClassSample;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn loss_and_grad(&mut self, batch: &[&ClassSample], grad: &mut [f64], _training: bool) -> f64 {
        let scale = 1.0 / batch.len() as f64;
        let (w_range, b_range) = (self.w.range(), self.b.range());
        let mut loss = 0.0;
        for s in batch {
            let probs = nn::softmax(&self.logits(&s.features));
            loss += nn::cross_entropy(&probs, s.label).expect("label in range");
            let dz = nn::softmax_xent_grad(&probs, s.label, scale);
            let (gw, gb) = split_pair(grad, w_range.clone(), b_range.clone());
            nn::dense_backward(self.params.get(self.w), &s.features, &dz, gw, gb);
        }
        loss * scale
    }

    fn evaluate(&self, samples: &[&ClassSample]) -> (f64, usize) {
        let mut loss = 0.0;
        let mut correct = 0;
        for s in samples {
            let probs = nn::softmax(&self.logits(&s.features));
            loss += nn::cross_entropy(&probs, s.label).expect("label in range");
            correct += (nn::argmax(&probs) == s.label) as usize;
        }
        (loss / samples.len().max(1) as f64, correct)
    }

    fn target(sample: &ClassSample) -> Option<usize> {
        Some(sample.label)
    }
}

/// Two disjoint mutable sub-slices of a gradient buffer.
pub(crate) fn split_pair(
    buf: &mut [f64],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    assert!(a.end <= b.start || b.end <= a.start, "ranges overlap");
    if a.start < b.start {
        let (lo, hi) = buf.split_at_mut(b.start);
        (&mut lo[a], &mut hi[..b.end - b.start])
    } else {
        let (lo, hi) = buf.split_at_mut(a.start);
        (&mut hi[..a.end - a.start], &mut lo[b])
    }
}
