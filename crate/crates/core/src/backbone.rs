//! Backbone contract and a deterministic synthetic implementation.
//!
//! A backbone maps an `h x w x 3` frame (values in `[0, 1]`) to activation
//! stacks for named layers plus a pooled feature vector (global average pool
//! of its last layer). Heads only ever see these outputs, never backbone
//! parameters.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-frame activation maps of one layer, dims `(n_filters, h', w')`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStack {
    layer_name: String,
    maps: Tensor,
    source_extent: (usize, usize),
}

impl ActivationStack {
    pub fn new(layer_name: impl Into<String>, maps: Tensor, source_extent: (usize, usize)) -> Result<Self> {
        let &[_, h, w] = maps.dims() else {
            return Err(Error::shape(format!(
                "activation stack must be 3-D, got {:?}",
                maps.dims()
            )));
        };
        if h > source_extent.1 || w > source_extent.0 {
            return Err(Error::shape(format!(
                "maps {w}x{h} larger than source {}x{}",
                source_extent.0, source_extent.1
            )));
        }
        Ok(Self {
            layer_name: layer_name.into(),
            maps,
            source_extent,
        })
    }

    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }

    pub fn maps(&self) -> &Tensor {
        &self.maps
    }

    pub fn n_filters(&self) -> usize {
        self.maps.dims()[0]
    }

    /// `(width, height)` of each map.
    pub fn map_extent(&self) -> (usize, usize) {
        (self.maps.dims()[2], self.maps.dims()[1])
    }

    /// `(width, height)` of the frame the stack was computed from.
    pub fn source_extent(&self) -> (usize, usize) {
        self.source_extent
    }

    pub fn filter(&self, f: usize) -> &[f32] {
        let (w, h) = self.map_extent();
        &self.maps.data()[f * w * h..(f + 1) * w * h]
    }

    pub fn filter_tensor(&self, f: usize) -> Tensor {
        let (w, h) = self.map_extent();
        Tensor::new(vec![h, w], self.filter(f).to_vec()).expect("filter plane dims")
    }

    /// Global average pooling: per-filter spatial mean.
    pub fn gap(&self) -> FeatureVector {
        let values = (0..self.n_filters())
            .map(|f| {
                let plane = self.filter(f);
                (plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64) as f32
            })
            .collect();
        FeatureVector::new(values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Tensor,
}

impl FeatureVector {
    /// Panics on an empty vector.
    pub fn new(values: Vec<f32>) -> Self {
        let n = values.len();
        Self {
            values: Tensor::new(vec![n], values).expect("feature vector must be non-empty"),
        }
    }

    pub fn as_slice(&self) -> &[f32] {
        self.values.data()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.as_slice().iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub stacks: Vec<ActivationStack>,
    pub features: FeatureVector,
}

impl ForwardOutput {
    pub fn stack(&self, layer: &str) -> Option<&ActivationStack> {
        self.stacks.iter().find(|s| s.layer_name() == layer)
    }
}

pub trait Backbone: Send + Sync {
    /// Input `(width, height)`.
    fn extent(&self) -> (usize, usize);

    /// Layer names, shallow to deep. The last one feeds the pooled features.
    fn layer_names(&self) -> Vec<String>;

    fn forward(&self, frame: &Tensor, layers: &[&str]) -> Result<ForwardOutput>;

    fn last_layer(&self) -> String {
        self.layer_names()
            .pop()
            .expect("backbone declares at least one layer")
    }

    fn check_frame(&self, frame: &Tensor) -> Result<()> {
        let (w, h) = self.extent();
        if frame.dims() != [h, w, 3] {
            return Err(Error::shape(format!(
                "frame dims {:?} do not match backbone extent {h}x{w}x3",
                frame.dims()
            )));
        }
        Ok(())
    }
}

impl<B: Backbone + ?Sized> Backbone for Box<B> {
    fn extent(&self) -> (usize, usize) {
        (**self).extent()
    }
    fn layer_names(&self) -> Vec<String> {
        (**self).layer_names()
    }
    fn forward(&self, frame: &Tensor, layers: &[&str]) -> Result<ForwardOutput> {
        (**self).forward(frame, layers)
    }
}

impl<B: Backbone + ?Sized> Backbone for &B {
    fn extent(&self) -> (usize, usize) {
        (**self).extent()
    }
    fn layer_names(&self) -> Vec<String> {
        (**self).layer_names()
    }
    fn forward(&self, frame: &Tensor, layers: &[&str]) -> Result<ForwardOutput> {
        (**self).forward(frame, layers)
    }
}

impl<B: Backbone + ?Sized> Backbone for Arc<B> {
    fn extent(&self) -> (usize, usize) {
        (**self).extent()
    }
    fn layer_names(&self) -> Vec<String> {
        (**self).layer_names()
    }
    fn forward(&self, frame: &Tensor, layers: &[&str]) -> Result<ForwardOutput> {
        (**self).forward(frame, layers)
    }
}

/// Colours the synthetic backbone has planted detectors for. Synthetic scenes
/// draw gesture stimuli in these colours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StimulusColor {
    Red,
    Green,
    Blue,
    Yellow,
    Magenta,
}

impl StimulusColor {
    pub const ALL: [StimulusColor; 5] = [
        StimulusColor::Red,
        StimulusColor::Green,
        StimulusColor::Blue,
        StimulusColor::Yellow,
        StimulusColor::Magenta,
    ];

    pub fn rgb(self) -> [f32; 3] {
        match self {
            StimulusColor::Red => [0.9, 0.1, 0.1],
            StimulusColor::Green => [0.1, 0.9, 0.1],
            StimulusColor::Blue => [0.1, 0.1, 0.9],
            StimulusColor::Yellow => [0.9, 0.9, 0.1],
            StimulusColor::Magenta => [0.9, 0.1, 0.9],
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }
}

/// Planted detector response at a pixel is `clamp(1 - d / tol, 0, 1)` where
/// `d` is the L-infinity distance to the detector colour. Copy `v` of a colour
/// uses tolerance `PLANTED_BASE_TOL + v * PLANTED_TOL_STEP`. Any pixel within
/// `PLANTED_BASE_TOL / 2` of the colour drives every copy to at least 0.5.
pub const PLANTED_BASE_TOL: f32 = 0.20;
pub const PLANTED_TOL_STEP: f32 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    /// `(width, height)`.
    pub extent: (usize, usize),
    /// Random 3x3 filters per stride-2 stage.
    pub widths: [usize; 3],
    /// Planted detector copies per stimulus colour, appended to every layer.
    pub planted_per_color: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            extent: (224, 224),
            widths: [16, 32, 64],
            planted_per_color: 4,
            seed: 0,
        }
    }
}

/// Three stride-2 3x3 ReLU conv stages with seeded weights and zero biases
/// (`conv1`, `conv2`, `conv3`), each layer followed by planted colour
/// detectors averaged over the layer's stride footprint.
///
/// Filter layout of every layer: `widths[i]` random filters, then for each
/// colour in [`StimulusColor::ALL`] order, `planted_per_color` detector copies.
#[derive(Debug, Clone)]
pub struct SyntheticBackbone {
    config: SyntheticConfig,
    stages: Vec<ConvStage>,
}

#[derive(Debug, Clone)]
struct ConvStage {
    in_ch: usize,
    out_ch: usize,
    // [out][in][3][3]
    weights: Vec<f32>,
}

pub const SYNTHETIC_LAYERS: [&str; 3] = ["conv1", "conv2", "conv3"];

impl SyntheticBackbone {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        if config.extent.0 < 8 || config.extent.1 < 8 {
            return Err(Error::param("synthetic backbone extent must be at least 8x8"));
        }
        if config.widths.iter().any(|&w| w == 0) {
            return Err(Error::param("stage widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut stages = Vec::new();
        let mut in_ch = 3;
        for &out_ch in &config.widths {
            let fan_in = (in_ch * 9) as f32;
            let bound = (3.0 / fan_in).sqrt();
            let weights = (0..out_ch * in_ch * 9)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            stages.push(ConvStage {
                in_ch,
                out_ch,
                weights,
            });
            in_ch = out_ch;
        }
        Ok(Self { config, stages })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    pub fn n_random(&self, layer: usize) -> usize {
        self.config.widths[layer]
    }

    pub fn n_planted(&self) -> usize {
        StimulusColor::ALL.len() * self.config.planted_per_color
    }

    /// Filter indices of the planted detectors for `color` in `layer`.
    pub fn planted_filters(&self, layer: &str, color: StimulusColor) -> Result<Vec<usize>> {
        let li = layer_index(layer)?;
        let base = self.config.widths[li] + color.index() * self.config.planted_per_color;
        Ok((base..base + self.config.planted_per_color).collect())
    }

    pub fn n_filters(&self, layer: &str) -> Result<usize> {
        Ok(self.config.widths[layer_index(layer)?] + self.n_planted())
    }

    fn planted_maps(&self, frame: &Tensor, stride: usize, out_w: usize, out_h: usize) -> Vec<f32> {
        let (w, h) = self.config.extent;
        let ppc = self.config.planted_per_color;
        let data = frame.data();
        let mut out = vec![0f32; StimulusColor::ALL.len() * ppc * out_w * out_h];
        let mut dist = vec![0f32; w * h];
        for (ci, color) in StimulusColor::ALL.iter().enumerate() {
            let rgb = color.rgb();
            for (p, d) in dist.iter_mut().enumerate() {
                let px = &data[p * 3..p * 3 + 3];
                *d = (px[0] - rgb[0])
                    .abs()
                    .max((px[1] - rgb[1]).abs())
                    .max((px[2] - rgb[2]).abs());
            }
            for v in 0..ppc {
                let tol = PLANTED_BASE_TOL + v as f32 * PLANTED_TOL_STEP;
                let plane = &mut out[(ci * ppc + v) * out_w * out_h..][..out_w * out_h];
                for oy in 0..out_h {
                    let y_lo = oy * stride;
                    let y_hi = ((oy + 1) * stride).min(h);
                    for ox in 0..out_w {
                        let x_lo = ox * stride;
                        let x_hi = ((ox + 1) * stride).min(w);
                        let mut acc = 0f32;
                        for y in y_lo..y_hi {
                            for x in x_lo..x_hi {
                                acc += (1.0 - dist[y * w + x] / tol).clamp(0.0, 1.0);
                            }
                        }
                        let n = ((y_hi - y_lo) * (x_hi - x_lo)).max(1);
                        plane[oy * out_w + ox] = acc / n as f32;
                    }
                }
            }
        }
        out
    }
}

fn layer_index(layer: &str) -> Result<usize> {
    SYNTHETIC_LAYERS
        .iter()
        .position(|&l| l == layer)
        .ok_or_else(|| Error::UnknownLayer(layer.to_string()))
}

impl ConvStage {
    /// Stride 2, zero padding 1, ReLU. Input and output are planar `(c, h, w)`.
    fn apply(&self, input: &[f32], w: usize, h: usize) -> (Vec<f32>, usize, usize) {
        let ow = w.div_ceil(2);
        let oh = h.div_ceil(2);
        let mut out = vec![0f32; self.out_ch * ow * oh];
        for oc in 0..self.out_ch {
            let plane = &mut out[oc * ow * oh..(oc + 1) * ow * oh];
            for ic in 0..self.in_ch {
                let src = &input[ic * w * h..(ic + 1) * w * h];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wt = self.weights[((oc * self.in_ch + ic) * 3 + ky) * 3 + kx];
                        for oy in 0..oh {
                            let iy = (2 * oy + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &src[iy as usize * w..(iy as usize + 1) * w];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            for (ox, o) in orow.iter_mut().enumerate() {
                                let ix = (2 * ox + kx) as isize - 1;
                                if ix >= 0 && ix < w as isize {
                                    *o += wt * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
            for v in plane.iter_mut() {
                *v = v.max(0.0);
            }
        }
        (out, ow, oh)
    }
}

impl Backbone for SyntheticBackbone {
    fn extent(&self) -> (usize, usize) {
        self.config.extent
    }

    fn layer_names(&self) -> Vec<String> {
        SYNTHETIC_LAYERS.iter().map(|s| s.to_string()).collect()
    }

    fn forward(&self, frame: &Tensor, layers: &[&str]) -> Result<ForwardOutput> {
        self.check_frame(frame)?;
        let wanted = layers
            .iter()
            .map(|l| layer_index(l))
            .collect::<Result<Vec<_>>>()?;
        let (w, h) = self.config.extent;
        let mut planar = vec![0f32; 3 * w * h];
        for (p, px) in frame.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                planar[c * w * h + p] = px[c];
            }
        }
        let mut full = Vec::with_capacity(3);
        let (mut cur, mut cw, mut ch) = (planar, w, h);
        for (i, stage) in self.stages.iter().enumerate() {
            let (next, nw, nh) = stage.apply(&cur, cw, ch);
            let stride = 1 << (i + 1);
            let mut maps = next.clone();
            maps.extend(self.planted_maps(frame, stride, nw, nh));
            let n = stage.out_ch + self.n_planted();
            let stack = ActivationStack::new(
                SYNTHETIC_LAYERS[i],
                Tensor::new(vec![n, nh, nw], maps)?,
                self.config.extent,
            )?;
            full.push(stack);
            cur = next;
            cw = nw;
            ch = nh;
        }
        let features = full.last().expect("three stages").gap();
        let stacks = wanted.into_iter().map(|i| full[i].clone()).collect();
        Ok(ForwardOutput { stacks, features })
    }
}

/// Adds seeded uniform noise in `[-amplitude, amplitude]` to every activation
/// map the wrapped backbone returns. The noise pattern is a function of the
/// seed, the frame contents and the layer, so outputs stay deterministic.
/// Pooled features are passed through unchanged.
#[derive(Debug, Clone)]
pub struct NoisyBackbone<B> {
    inner: B,
    amplitude: f32,
    seed: u64,
}

impl<B: Backbone> NoisyBackbone<B> {
    pub fn new(inner: B, amplitude: f32, seed: u64) -> Self {
        Self {
            inner,
            amplitude,
            seed,
        }
    }
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>, mut hash: u64) -> u64 {
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

impl<B: Backbone> Backbone for NoisyBackbone<B> {
    fn extent(&self) -> (usize, usize) {
        self.inner.extent()
    }

    fn layer_names(&self) -> Vec<String> {
        self.inner.layer_names()
    }

    fn forward(&self, frame: &Tensor, layers: &[&str]) -> Result<ForwardOutput> {
        let mut out = self.inner.forward(frame, layers)?;
        if self.amplitude == 0.0 {
            return Ok(out);
        }
        let frame_hash = fnv1a(
            frame.data().iter().flat_map(|v| v.to_le_bytes()),
            0xcbf2_9ce4_8422_2325 ^ self.seed,
        );
        for stack in &mut out.stacks {
            let seed = fnv1a(stack.layer_name.bytes(), frame_hash);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in stack.maps.data_mut() {
                *v += self.amplitude * rng.gen_range(-1.0f32..=1.0);
            }
        }
        Ok(out)
    }
}
