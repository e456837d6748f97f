//! Dynamic zoom gesture head: compares the current spatial features with the
//! features `d` frames earlier. Also the fingertip-distance baseline.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::ActivationStack;
use crate::classifier::{split_pair, INIT_BOUND};
use crate::error::{Error, Result};
use crate::nn::{self, ParamRef, ParamStore};
use crate::train::Trainable;

pub const DEFAULT_D: usize = 5;
pub const BASELINE_THRESHOLD_PX: f64 = 3.0;
pub const BN_EPSILON: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoomAction {
    ZoomIn,
    ZoomOut,
    NoZoom,
}

impl ZoomAction {
    pub const ALL: [ZoomAction; 3] = [ZoomAction::ZoomIn, ZoomAction::ZoomOut, ZoomAction::NoZoom];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Argmax over `[in, out, none]`; any tie involving the maximum resolves
    /// to `NoZoom`.
    pub fn from_probabilities(p: &[f64]) -> Self {
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<usize> = (0..3).filter(|&i| p[i] == max).collect();
        if winners.len() == 1 {
            Self::ALL[winners[0]]
        } else {
            ZoomAction::NoZoom
        }
    }
}

/// Ring of the last `d` activation stacks.
#[derive(Debug, Clone)]
pub struct FrameBuffer {
    capacity: usize,
    ring: VecDeque<ActivationStack>,
}

impl FrameBuffer {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("frame buffer capacity must be positive"));
        }
        Ok(Self {
            capacity: d,
            ring: VecDeque::with_capacity(d),
        })
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stores `stack` and returns it with the frame `d` steps earlier, or the
    /// oldest held frame while the buffer is still filling.
    pub fn push(&mut self, stack: ActivationStack) -> (ActivationStack, ActivationStack) {
        let past = self.ring.front().cloned().unwrap_or_else(|| stack.clone());
        self.ring.push_back(stack.clone());
        if self.ring.len() > self.capacity {
            self.ring.pop_front();
        }
        (stack, past)
    }

    pub fn clear(&mut self) {
        self.ring.clear();
    }
}

/// Head dimensions. `channels` is the filter count of one stack; the
/// convolution sees twice that.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PinchDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub hidden: usize,
}

impl PinchDims {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            filters: 64,
            hidden: 32,
        }
    }

    pub fn for_stack(stack: &ActivationStack) -> Self {
        let (w, h) = stack.map_extent();
        Self::new(stack.n_filters(), h, w)
    }

    pub fn in_channels(&self) -> usize {
        2 * self.channels
    }

    pub fn pooled(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    pub fn flat_len(&self) -> usize {
        let (ph, pw) = self.pooled();
        self.filters * ph * pw
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.filters == 0 || self.hidden == 0 || self.height < 2 || self.width < 2 {
            return Err(Error::param(format!("pinch head dimensions {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinchHead {
    dims: PinchDims,
    params: ParamStore,
    conv_w: ParamRef,
    conv_b: ParamRef,
    gamma: ParamRef,
    beta: ParamRef,
    mean: ParamRef,
    var: ParamRef,
    fc1_w: ParamRef,
    fc1_b: ParamRef,
    fc2_w: ParamRef,
    fc2_b: ParamRef,
}

/// One training or evaluation example: the two stacks concatenated
/// channel-wise, current first.
#[derive(Debug, Clone, PartialEq)]
pub struct PinchSample {
    pub input: Vec<f64>,
    pub label: usize,
}

impl PinchSample {
    pub fn new(current: &ActivationStack, past: &ActivationStack, action: ZoomAction) -> Result<Self> {
        Ok(Self {
            input: concat_stacks(current, past)?,
            label: action.index(),
        })
    }
}

fn concat_stacks(current: &ActivationStack, past: &ActivationStack) -> Result<Vec<f64>> {
    if current.maps().dims() != past.maps().dims() {
        return Err(Error::shape(format!(
            "current stack {:?} and past stack {:?} differ",
            current.maps().dims(),
            past.maps().dims()
        )));
    }
    Ok(current
        .maps()
        .data()
        .iter()
        .chain(past.maps().data())
        .map(|&v| v as f64)
        .collect())
}

/// Intermediate values of one forward pass kept for the backward pass.
struct Trace {
    zhat: Vec<f64>,
    pool_idx: Vec<usize>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl PinchHead {
    pub fn new(dims: PinchDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let f = dims.filters;
        let conv_w = p.add_uniform("conv.W", vec![f, dims.in_channels(), 3, 3], INIT_BOUND, &mut rng);
        let conv_b = p.add_const("conv.b", vec![f], 0.0, true);
        let gamma = p.add_const("bn.gamma", vec![f], 1.0, true);
        let beta = p.add_const("bn.beta", vec![f], 0.0, true);
        let mean = p.add_const("bn.mean", vec![f], 0.0, false);
        let var = p.add_const("bn.var", vec![f], 1.0, false);
        let fc1_w = p.add_uniform("fc1.W", vec![dims.hidden, dims.flat_len()], INIT_BOUND, &mut rng);
        let fc1_b = p.add_const("fc1.b", vec![dims.hidden], 0.0, true);
        let fc2_w = p.add_uniform("fc2.W", vec![3, dims.hidden], INIT_BOUND, &mut rng);
        let fc2_b = p.add_const("fc2.b", vec![3], 0.0, true);
        Ok(Self {
            dims,
            params: p,
            conv_w,
            conv_b,
            gamma,
            beta,
            mean,
            var,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
        })
    }

    /// All weights zero (running variance one): every input maps to the
    /// uniform distribution.
    pub fn zeros(dims: PinchDims) -> Result<Self> {
        let mut head = Self::new(dims, 0)?;
        head.params.values_mut().fill(0.0);
        head.params.get_mut(head.var).fill(1.0);
        Ok(head)
    }

    pub fn dims(&self) -> PinchDims {
        self.dims
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.params.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::format("pinch weights hold non-finite values"));
        }
        if self.params.get(self.var).iter().any(|&v| v < 0.0) {
            return Err(Error::format("negative batch-norm variance"));
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        let d = self.dims;
        let want = d.in_channels() * d.height * d.width;
        if input.len() != want {
            return Err(Error::shape(format!("pinch head expects {want} inputs, got {}", input.len())));
        }
        Ok(())
    }

    /// 3x3 convolution, stride 1, zero padding.
    fn conv(&self, x: &[f64]) -> Vec<f64> {
        let PinchDims { height: h, width: w, filters, .. } = self.dims;
        let cin = self.dims.in_channels();
        let wts = self.params.get(self.conv_w);
        let bias = self.params.get(self.conv_b);
        let mut z = vec![0.0; filters * h * w];
        for f in 0..filters {
            let out = &mut z[f * h * w..(f + 1) * h * w];
            out.fill(bias[f]);
            for c in 0..cin {
                let plane = &x[c * h * w..(c + 1) * h * w];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = wts[((f * cin + c) * 3 + ky) * 3 + kx];
                        let (ys, xs) = (shifted(h, ky), shifted(w, kx));
                        for y in ys.clone() {
                            let sy = y + ky - 1;
                            let orow = &mut out[y * w..(y + 1) * w];
                            let irow = &plane[sy * w..(sy + 1) * w];
                            for xx in xs.clone() {
                                orow[xx] += k * irow[xx + kx - 1];
                            }
                        }
                    }
                }
            }
        }
        z
    }

    fn conv_backward(&self, x: &[f64], dz: &[f64], dw: &mut [f64], db: &mut [f64]) {
        let PinchDims { height: h, width: w, filters, .. } = self.dims;
        let cin = self.dims.in_channels();
        for f in 0..filters {
            let g = &dz[f * h * w..(f + 1) * h * w];
            db[f] += g.iter().sum::<f64>();
            for c in 0..cin {
                let plane = &x[c * h * w..(c + 1) * h * w];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (ys, xs) = (shifted(h, ky), shifted(w, kx));
                        let mut acc = 0.0;
                        for y in ys.clone() {
                            let sy = y + ky - 1;
                            let grow = &g[y * w..(y + 1) * w];
                            let irow = &plane[sy * w..(sy + 1) * w];
                            for xx in xs.clone() {
                                acc += grow[xx] * irow[xx + kx - 1];
                            }
                        }
                        dw[((f * cin + c) * 3 + ky) * 3 + kx] += acc;
                    }
                }
            }
        }
    }

    /// Everything after batch normalization, given the normalized maps.
    fn tail(&self, zhat: Vec<f64>) -> Trace {
        let PinchDims { height: h, width: w, filters, .. } = self.dims;
        let (ph, pw) = self.dims.pooled();
        let gamma = self.params.get(self.gamma);
        let beta = self.params.get(self.beta);
        let mut flat = Vec::with_capacity(self.dims.flat_len());
        let mut pool_idx = Vec::with_capacity(self.dims.flat_len());
        for f in 0..filters {
            let base = f * h * w;
            let y_of = |i: usize| gamma[f] * zhat[i] + beta[f];
            for py in 0..ph {
                for px in 0..pw {
                    let mut best = base + 2 * py * w + 2 * px;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * py + dy) * w + 2 * px + dx;
                        if y_of(i) > y_of(best) {
                            best = i;
                        }
                    }
                    flat.push(y_of(best));
                    pool_idx.push(best);
                }
            }
        }
        let mut hidden = nn::dense(self.params.get(self.fc1_w), self.params.get(self.fc1_b), &flat);
        nn::relu_inplace(&mut hidden);
        let probs = nn::softmax(&nn::dense(self.params.get(self.fc2_w), self.params.get(self.fc2_b), &hidden));
        Trace {
            zhat,
            pool_idx,
            hidden,
            probs,
        }
    }

    fn normalize(&self, z: &[f64], mean: &[f64], var: &[f64]) -> Vec<f64> {
        let hw = self.dims.height * self.dims.width;
        z.iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = i / hw;
                (v - mean[f]) / (var[f] + BN_EPSILON).sqrt()
            })
            .collect()
    }

    /// Class probabilities `[in, out, none]` in inference mode.
    pub fn probabilities(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let z = self.conv(input);
        let zhat = self.normalize(&z, self.params.get(self.mean), self.params.get(self.var));
        Ok(self.tail(zhat).probs)
    }

    fn inference_loss(&self, s: &PinchSample) -> (f64, Vec<f64>) {
        let probs = self.probabilities(&s.input).expect("sample matches head");
        (nn::cross_entropy(&probs, s.label).expect("label in range"), probs)
    }
}

/// Output positions whose 3x3 tap at offset `k` stays inside `[0, n)`.
fn shifted(n: usize, k: usize) -> std::ops::Range<usize> {
    match k {
        0 => 1..n,
        1 => 0..n,
        _ => 0..n - 1,
    }
}

/// Probabilities and zoom decision for a (current, past) pair.
pub fn pinch_forward(head: &PinchHead, current: &ActivationStack, past: &ActivationStack) -> Result<(Vec<f64>, ZoomAction)> {
    let input = concat_stacks(current, past)?;
    let probs = head.probabilities(&input)?;
    let action = ZoomAction::from_probabilities(&probs);
    Ok((probs, action))
}

impl Trainable for PinchHead {
    type Sample = PinchSample;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn loss_and_grad(&mut self, batch: &[&PinchSample], grad: &mut [f64], training: bool) -> f64 {
        let PinchDims { height: h, width: w, filters, .. } = self.dims;
        let hw = h * w;
        let n = batch.len();
        let scale = 1.0 / n as f64;
        let zs: Vec<Vec<f64>> = batch.iter().map(|s| self.conv(&s.input)).collect();

        let (mean, var) = if training {
            let m = (n * hw) as f64;
            let mut mean = vec![0.0; filters];
            let mut var = vec![0.0; filters];
            for z in &zs {
                for f in 0..filters {
                    mean[f] += z[f * hw..(f + 1) * hw].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= m);
            for z in &zs {
                for f in 0..filters {
                    var[f] += z[f * hw..(f + 1) * hw].iter().map(|v| (v - mean[f]).powi(2)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= m);
            let (run_mean, run_var) = (self.mean, self.var);
            for (r, b) in self.params.get_mut(run_mean).iter_mut().zip(&mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
            for (r, b) in self.params.get_mut(run_var).iter_mut().zip(&var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
            (mean, var)
        } else {
            (self.params.get(self.mean).to_vec(), self.params.get(self.var).to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();

        let mut loss = 0.0;
        let mut traces = Vec::with_capacity(n);
        let mut dzhats = Vec::with_capacity(n);
        let gamma = self.params.get(self.gamma).to_vec();
        for (s, z) in batch.iter().zip(&zs) {
            let trace = self.tail(self.normalize(z, &mean, &var));
            loss += nn::cross_entropy(&trace.probs, s.label).expect("label in range");
            let dlogits = nn::softmax_xent_grad(&trace.probs, s.label, scale);

            let (g2w, g2b) = split_pair(grad, self.fc2_w.range(), self.fc2_b.range());
            let mut dhidden = nn::dense_backward(self.params.get(self.fc2_w), &trace.hidden, &dlogits, g2w, g2b);
            nn::relu_backward(&trace.hidden, &mut dhidden);

            let flat: Vec<f64> = trace
                .pool_idx
                .iter()
                .map(|&i| gamma[i / hw] * trace.zhat[i] + self.params.get(self.beta)[i / hw])
                .collect();
            let (g1w, g1b) = split_pair(grad, self.fc1_w.range(), self.fc1_b.range());
            let dflat = nn::dense_backward(self.params.get(self.fc1_w), &flat, &dhidden, g1w, g1b);

            let mut dzhat = vec![0.0; filters * hw];
            let (ggamma, gbeta) = split_pair(grad, self.gamma.range(), self.beta.range());
            for (&i, &d) in trace.pool_idx.iter().zip(&dflat) {
                let f = i / hw;
                ggamma[f] += d * trace.zhat[i];
                gbeta[f] += d;
                dzhat[i] = d * gamma[f];
            }
            traces.push(trace);
            dzhats.push(dzhat);
        }

        // batch-norm backward: in training mode the batch statistics depend on
        // every sample
        let dzs: Vec<Vec<f64>> = if training {
            let m = (n * hw) as f64;
            let mut sum_d = vec![0.0; filters];
            let mut sum_dx = vec![0.0; filters];
            for (t, d) in traces.iter().zip(&dzhats) {
                for i in 0..filters * hw {
                    sum_d[i / hw] += d[i];
                    sum_dx[i / hw] += d[i] * t.zhat[i];
                }
            }
            traces
                .iter()
                .zip(&dzhats)
                .map(|(t, d)| {
                    (0..filters * hw)
                        .map(|i| {
                            let f = i / hw;
                            inv_std[f] / m * (m * d[i] - sum_d[f] - t.zhat[i] * sum_dx[f])
                        })
                        .collect()
                })
                .collect()
        } else {
            dzhats
                .iter()
                .map(|d| d.iter().enumerate().map(|(i, v)| v * inv_std[i / hw]).collect())
                .collect()
        };

        for (s, dz) in batch.iter().zip(&dzs) {
            let (gw, gb) = split_pair(grad, self.conv_w.range(), self.conv_b.range());
            self.conv_backward(&s.input, dz, gw, gb);
        }
        loss * scale
    }

    fn evaluate(&self, samples: &[&PinchSample]) -> (f64, usize) {
        let mut loss = 0.0;
        let mut correct = 0;
        for s in samples {
            let (l, probs) = self.inference_loss(s);
            loss += l;
            correct += (ZoomAction::from_probabilities(&probs).index() == s.label) as usize;
        }
        (loss / samples.len().max(1) as f64, correct)
    }

    fn target(sample: &PinchSample) -> Option<usize> {
        Some(sample.label)
    }
}

/// Zoom decision from the change in thumb-index distance over `d` frames.
pub fn baseline_decision(distance_now: f64, distance_past: f64, threshold: f64) -> ZoomAction {
    let delta = distance_now - distance_past;
    if delta > threshold {
        ZoomAction::ZoomIn
    } else if delta < -threshold {
        ZoomAction::ZoomOut
    } else {
        ZoomAction::NoZoom
    }
}

/// Streaming fingertip-distance baseline.
#[derive(Debug, Clone)]
pub struct PinchBaseline {
    d: usize,
    threshold: f64,
    history: VecDeque<f64>,
}

impl PinchBaseline {
    pub fn new(d: usize, threshold: f64) -> Result<Self> {
        if d == 0 || !(threshold >= 0.0) {
            return Err(Error::param("baseline needs d > 0 and a non-negative threshold"));
        }
        Ok(Self {
            d,
            threshold,
            history: VecDeque::with_capacity(d + 1),
        })
    }

    /// Feeds one frame's fingertips; `NoZoom` until `d` earlier frames exist.
    pub fn step(&mut self, thumb: (f64, f64), index: (f64, f64)) -> ZoomAction {
        let dist = (thumb.0 - index.0).hypot(thumb.1 - index.1);
        self.history.push_back(dist);
        if self.history.len() > self.d + 1 {
            self.history.pop_front();
        }
        if self.history.len() <= self.d {
            return ZoomAction::NoZoom;
        }
        baseline_decision(dist, self.history[0], self.threshold)
    }
}
