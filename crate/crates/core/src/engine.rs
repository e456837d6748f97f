//! Per-frame orchestration: one backbone pass, classification, temporal
//! gating, then at most one specialized head on the cached outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, ForwardOutput};
use crate::caption::{postprocess, CaptionModel, Vocabulary};
use crate::classifier::{DenseSoftmaxHead, HeadSelector};
use crate::error::{Error, Result};
use crate::filter_selection::{localize_stack, FSParams, FilterSet};
use crate::geometry::BBox;
use crate::labels::{GestureLabel, LabelRegistry};
use crate::pinch::{pinch_forward, FrameBuffer, PinchHead, ZoomAction, DEFAULT_D};
use crate::temporal::{collapse, TemporalGate};

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub k: usize,
    pub d: usize,
    pub max_caption_len: usize,
    /// While loupe stays validated, re-caption every `n` frames; 0 captions
    /// only on the validating frame.
    pub caption_every_n: usize,
    pub fs_params: FSParams,
    pub registry: LabelRegistry,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            k: 2,
            d: DEFAULT_D,
            max_caption_len: 20,
            caption_every_n: 0,
            fs_params: FSParams::new("conv3"),
            registry: LabelRegistry::standard(),
        }
    }
}

/// Heads a session may route to. Only the classifier is mandatory; a
/// missing head fails the first frame that needs it.
#[derive(Debug, Clone)]
pub struct Heads {
    pub classifier: DenseSoftmaxHead,
    /// Filter set per fingertip gesture (point, drag).
    pub filter_sets: BTreeMap<GestureLabel, FilterSet>,
    pub pinch: Option<PinchHead>,
    pub caption: Option<(CaptionModel, Vocabulary)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    FingertipBoxes { boxes: Vec<BBox> },
    Caption { text: String },
    Zoom { action: ZoomAction },
    NoResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub frame_index: usize,
    pub raw_label: String,
    /// `None` until the gate validates a first label.
    pub validated_label: Option<String>,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub frames: u64,
    pub backbone_forwards: u64,
    pub classifier_calls: u64,
    pub localization_calls: u64,
    pub caption_calls: u64,
    pub pinch_calls: u64,
}

impl Counters {
    pub fn head_calls(&self) -> u64 {
        self.localization_calls + self.caption_calls + self.pinch_calls
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TimingReport {
    pub frames: u64,
    pub backbone: Duration,
    pub classify: Duration,
    pub head: Duration,
    pub total: Duration,
}

impl TimingReport {
    pub fn to_csv(&self) -> String {
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        let mut out = String::from("stage,total_ms,per_frame_ms\n");
        let per = |d: Duration| if self.frames == 0 { 0.0 } else { ms(d) / self.frames as f64 };
        for (name, d) in [
            ("backbone", self.backbone),
            ("classify", self.classify),
            ("head", self.head),
            ("total", self.total),
        ] {
            let _ = writeln!(out, "{name},{:.3},{:.3}", ms(d), per(d));
        }
        out
    }
}

pub struct Session<B> {
    backbone: B,
    heads: Heads,
    config: SessionConfig,
    gate: TemporalGate<GestureLabel>,
    buffer: FrameBuffer,
    layers: Vec<String>,
    negative: GestureLabel,
    counters: Counters,
    timing: TimingReport,
    next_index: usize,
    loupe_run: usize,
    last_caption: Option<String>,
}

impl<B: Backbone> Session<B> {
    pub fn new(backbone: B, heads: Heads, config: SessionConfig) -> Result<Self> {
        let names = backbone.layer_names();
        let last = backbone.last_layer();
        let mut layers = vec![last];
        for fset in heads.filter_sets.values() {
            if !names.contains(&fset.layer_name) {
                return Err(Error::UnknownLayer(fset.layer_name.clone()));
            }
            if !layers.contains(&fset.layer_name) {
                layers.push(fset.layer_name.clone());
            }
        }
        if heads.classifier.n_labels() != config.registry.len() {
            return Err(Error::shape(format!(
                "classifier has {} outputs for {} registered labels",
                heads.classifier.n_labels(),
                config.registry.len()
            )));
        }
        let negative = config
            .registry
            .negative()
            .ok_or_else(|| Error::param("registry has no negative label"))?;
        Ok(Self {
            negative,
            gate: TemporalGate::new(config.k)?,
            buffer: FrameBuffer::new(config.d)?,
            backbone,
            heads,
            config,
            layers,
            counters: Counters::default(),
            timing: TimingReport::default(),
            next_index: 0,
            loupe_run: 0,
            last_caption: None,
        })
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn timing(&self) -> TimingReport {
        self.timing
    }

    pub fn backbone(&self) -> &B {
        &self.backbone
    }

    /// Clears the gate, the frame buffer and the counters.
    pub fn reset(&mut self) {
        self.gate.reset();
        self.buffer.clear();
        self.counters = Counters::default();
        self.timing = TimingReport::default();
        self.next_index = 0;
        self.loupe_run = 0;
        self.last_caption = None;
    }

    fn name(&self, l: GestureLabel) -> Result<String> {
        Ok(self.config.registry.name(l)?.to_string())
    }

    pub fn process_frame(&mut self, frame: &crate::tensor::Tensor) -> Result<FramePrediction> {
        let start = Instant::now();
        let frame_index = self.next_index;
        self.next_index += 1;
        self.counters.frames += 1;

        let layer_refs: Vec<&str> = self.layers.iter().map(String::as_str).collect();
        let out: ForwardOutput = self.backbone.forward(frame, &layer_refs)?;
        self.counters.backbone_forwards += 1;
        let after_backbone = Instant::now();

        let decision = self.heads.classifier.classify(&out.features)?;
        self.counters.classifier_calls += 1;
        let raw = decision.label;
        let gated = collapse(raw, &self.config.registry, self.negative)?;
        let (validated, changed) = self.gate.step(gated);
        let after_classify = Instant::now();

        // the buffer sees every frame so history exists when pinch validates
        let last = out
            .stack(&self.layers[0])
            .cloned()
            .ok_or_else(|| Error::UnknownLayer(self.layers[0].clone()))?;
        let (current, past) = self.buffer.push(last);

        let selector = match validated {
            Some(v) => HeadSelector::from(self.config.registry.binding(v)?),
            None => HeadSelector::NoHead,
        };
        if selector != HeadSelector::Caption {
            self.loupe_run = 0;
        }
        let payload = match selector {
            HeadSelector::NoHead => Payload::NoResponse,
            HeadSelector::Localization { .. } => {
                let v = validated.expect("routed label");
                let fset = self
                    .heads
                    .filter_sets
                    .get(&v)
                    .ok_or_else(|| Error::MissingWeights(format!("{} filter set", self.name(v).unwrap_or_default())))?;
                let stack = out
                    .stack(&fset.layer_name)
                    .ok_or_else(|| Error::UnknownLayer(fset.layer_name.clone()))?;
                let params = FSParams {
                    layer_name: fset.layer_name.clone(),
                    ..self.config.fs_params.clone()
                };
                self.counters.localization_calls += 1;
                Payload::FingertipBoxes {
                    boxes: localize_stack(stack, fset, &params)?.boxes,
                }
            }
            HeadSelector::Pinch => {
                let head = self
                    .heads
                    .pinch
                    .as_ref()
                    .ok_or_else(|| Error::MissingWeights("pinch head".into()))?;
                self.counters.pinch_calls += 1;
                Payload::Zoom {
                    action: pinch_forward(head, &current, &past)?.1,
                }
            }
            HeadSelector::Caption => {
                let (model, vocab) = self
                    .heads
                    .caption
                    .as_ref()
                    .ok_or_else(|| Error::MissingWeights("caption head".into()))?;
                let every = self.config.caption_every_n;
                let due = changed
                    || self.last_caption.is_none()
                    || (every > 0 && self.loupe_run % every == 0);
                if due {
                    let caption = model.decode(&out.features, vocab, self.config.max_caption_len)?;
                    self.counters.caption_calls += 1;
                    self.last_caption = Some(postprocess(&caption.text));
                    self.loupe_run = 0;
                }
                self.loupe_run += 1;
                Payload::Caption {
                    text: self.last_caption.clone().unwrap_or_default(),
                }
            }
        };
        if selector != HeadSelector::Caption {
            self.last_caption = None;
        }
        let end = Instant::now();
        self.timing.frames += 1;
        self.timing.backbone += after_backbone - start;
        self.timing.classify += after_classify - after_backbone;
        self.timing.head += end - after_classify;
        self.timing.total += end - start;

        Ok(FramePrediction {
            frame_index,
            raw_label: self.name(raw)?,
            validated_label: validated.map(|v| self.name(v)).transpose()?,
            payload,
        })
    }

    /// Runs every frame in order. Frame errors carry their index.
    pub fn process_stream<I>(&mut self, frames: I) -> Result<(Vec<FramePrediction>, TimingReport)>
    where
        I: IntoIterator<Item = Result<crate::tensor::Tensor>>,
    {
        let before = self.timing;
        let mut out = Vec::new();
        for (index, frame) in frames.into_iter().enumerate() {
            let wrap = |e: Error| Error::Frame {
                index,
                source: Box::new(e),
            };
            let frame = frame.map_err(wrap)?;
            out.push(self.process_frame(&frame).map_err(wrap)?);
        }
        let t = self.timing;
        Ok((
            out,
            TimingReport {
                frames: t.frames - before.frames,
                backbone: t.backbone - before.backbone,
                classify: t.classify - before.classify,
                head: t.head - before.head,
                total: t.total - before.total,
            },
        ))
    }
}

/// JSON-lines rendering, one prediction per line.
pub fn to_json_lines(predictions: &[FramePrediction]) -> Result<String> {
    let mut out = String::new();
    for p in predictions {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_json_lines(text: &str) -> Result<Vec<FramePrediction>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
