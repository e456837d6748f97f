//! Desk-scale hand gesture engine: a shared backbone feeds a routing
//! classifier, and a temporal gate decides which specialized head (fingertip
//! localization by filter selection, captioning, or pinch zoom) answers each
//! frame. Also ships the evaluation metrics, training loop and synthetic data
//! used to exercise it.

pub mod atn;
pub mod backbone;
pub mod caption;
pub mod classifier;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod export;
pub mod filter_selection;
pub mod geometry;
pub mod labels;
pub mod metrics;
pub mod morphology;
pub mod nn;
pub mod pinch;
pub mod reference;
pub mod temporal;
pub mod tensor;
pub mod train;
pub mod weights;

pub use backbone::{ActivationStack, Backbone, FeatureVector, ForwardOutput, NoisyBackbone, SyntheticBackbone, SyntheticConfig};
pub use caption::{CaptionModel, Vocabulary};
pub use classifier::{DenseSoftmaxHead, HeadSelector, RoutingDecision};
pub use config::ConfigFile;
pub use engine::{FramePrediction, Heads, Payload, Session, SessionConfig};
pub use error::{Error, Result};
pub use filter_selection::{FSParams, FilterSet, Selection};
pub use geometry::BBox;
pub use labels::{GestureLabel, HeadBinding, LabelRegistry};
pub use pinch::{PinchHead, ZoomAction};
pub use temporal::TemporalGate;
pub use tensor::Tensor;
pub use train::{TrainConfig, TrainReport};
pub use weights::Persist;
