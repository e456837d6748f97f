//! Supervised training of heads on frozen backbone outputs.
//!
//! Mini-batch gradient descent with the accumulated-squared-gradient /
//! accumulated-squared-update learning-rate rule (decay `rho`, `epsilon`),
//! categorical cross-entropy, and early stopping on validation loss.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub use crate::nn::cross_entropy;

/// A head whose parameters can be fitted by [`train`].
pub trait Trainable {
    type Sample;

    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// Mean cross-entropy over `batch`, adding its gradient into `grad`
    /// (same layout as [`ParamStore::values`]). With `training` set, layers
    /// with batch statistics normalise with the batch and update their
    /// running estimates.
    fn loss_and_grad(&mut self, batch: &[&Self::Sample], grad: &mut [f64], training: bool) -> f64;

    /// Mean loss and number of correct argmax predictions, inference mode.
    fn evaluate(&self, samples: &[&Self::Sample]) -> (f64, usize);

    /// Class index of a sample, used for the single-class warning.
    fn target(_sample: &Self::Sample) -> Option<usize> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub rho: f64,
    pub epsilon: f64,
    /// Multiplier on the adaptive step. 1.0 is the plain rule.
    pub learning_rate: f64,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            batch_size: 32,
            patience: 10,
            rho: 0.95,
            epsilon: 1e-6,
            learning_rate: 1.0,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::param("max_epochs, batch_size and patience must be positive"));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::param(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.epsilon > 0.0) || !(self.learning_rate >= 0.0) {
            return Err(Error::param("epsilon must be positive and learning_rate non-negative"));
        }
        Ok(())
    }
}

/// Per-parameter adaptive step: running averages of squared gradients and
/// squared updates set each coordinate's step size.
#[derive(Debug, Clone)]
pub struct Adadelta {
    rho: f64,
    epsilon: f64,
    learning_rate: f64,
    sq_grad: Vec<f64>,
    sq_update: Vec<f64>,
}

impl Adadelta {
    pub fn new(n: usize, rho: f64, epsilon: f64, learning_rate: f64) -> Self {
        Self {
            rho,
            epsilon,
            learning_rate,
            sq_grad: vec![0.0; n],
            sq_update: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], mask: &[bool]) {
        let (rho, eps) = (self.rho, self.epsilon);
        for i in 0..params.len() {
            if !mask[i] {
                continue;
            }
            let g = grad[i];
            self.sq_grad[i] = rho * self.sq_grad[i] + (1.0 - rho) * g * g;
            let update = (self.sq_update[i] + eps).sqrt() / (self.sq_grad[i] + eps).sqrt() * g;
            self.sq_update[i] = rho * self.sq_update[i] + (1.0 - rho) * update * update;
            params[i] -= self.learning_rate * update;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Last epoch run (1-based).
    pub stopped_epoch: usize,
    /// Epoch whose weights were kept (1-based).
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn best(&self) -> &EpochStats {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn last(&self) -> &EpochStats {
        self.epochs.last().expect("at least one epoch")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy,best\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{}",
                e.epoch,
                e.train_loss,
                e.train_accuracy,
                e.val_loss,
                e.val_accuracy,
                (e.epoch == self.best_epoch) as u8
            );
        }
        out
    }
}

/// Fits `model` in place and leaves it holding the weights of the epoch with
/// the lowest validation loss. With an empty validation set the training loss
/// drives early stopping.
pub fn train<M: Trainable>(
    model: &mut M,
    train_set: &[M::Sample],
    val_set: &[M::Sample],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let classes: std::collections::BTreeSet<usize> = train_set.iter().filter_map(M::target).collect();
    if classes.len() == 1 {
        log::warn!("training set holds a single class");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mask = model.params().trainable_mask();
    let mut opt = Adadelta::new(mask.len(), config.rho, config.epsilon, config.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut grad = vec![0.0; mask.len()];
    let train_refs: Vec<&M::Sample> = train_set.iter().collect();
    let val_refs: Vec<&M::Sample> = val_set.iter().collect();

    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&M::Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            grad.fill(0.0);
            model.loss_and_grad(&batch, &mut grad, true);
            opt.step(model.params_mut().values_mut(), &grad, &mask);
        }
        let (train_loss, train_correct) = model.evaluate(&train_refs);
        let (val_loss, val_correct) = if val_refs.is_empty() {
            (train_loss, train_correct)
        } else {
            model.evaluate(&val_refs)
        };
        let val_n = if val_refs.is_empty() { train_refs.len() } else { val_refs.len() };
        epochs.push(EpochStats {
            epoch,
            train_loss,
            train_accuracy: train_correct as f64 / train_refs.len() as f64,
            val_loss,
            val_accuracy: val_correct as f64 / val_n as f64,
        });
        if !val_loss.is_finite() {
            log::warn!("non-finite validation loss at epoch {epoch}; stopping");
            break;
        }
        match &best {
            Some((b, _, _)) if val_loss >= *b => {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
            _ => {
                best = Some((val_loss, epoch, model.params().clone()));
                since_best = 0;
            }
        }
    }
    let stopped_epoch = epochs.len();
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            *model.params_mut() = params;
            epoch
        }
        None => stopped_epoch,
    };
    Ok(TrainReport {
        epochs,
        stopped_epoch,
        best_epoch,
    })
}

/// Train/validation pair.
pub type Split<'a, S> = (&'a [S], &'a [S]);

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseReport {
    pub synthetic: Option<TrainReport>,
    pub real: TrainReport,
}

/// Optional pre-training on synthetic data followed by fine-tuning on real
/// data, starting from the phase-one weights. Both phases share `config`.
pub fn two_phase<M: Trainable>(
    model: &mut M,
    synthetic: Option<Split<'_, M::Sample>>,
    real: Split<'_, M::Sample>,
    config: &TrainConfig,
) -> Result<TwoPhaseReport> {
    let synthetic = match synthetic {
        Some((tr, va)) => Some(train(model, tr, va, config)?),
        None => None,
    };
    let real = train(model, real.0, real.1, config)?;
    Ok(TwoPhaseReport { synthetic, real })
}
