//! Merge-model caption head: an image branch and an LSTM text branch fused
//! by addition, greedy decoding, and rewrite rules that drop leading hand
//! mentions.

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use crate::backbone::FeatureVector;
use crate::classifier::INIT_BOUND;
use crate::error::{Error, Result};
use crate::nn::{self, ParamRef, ParamStore};
use crate::train::Trainable;

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
pub const UNK: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "startseq", "endseq", "<unk>"];

/// Lowercase, punctuation stripped, whitespace split.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn with_tokens(extra: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED.iter().map(|s| s.to_string()).chain(extra) {
            if v.index.insert(t.clone(), v.tokens.len()).is_some() {
                return Err(Error::format(format!("duplicate vocabulary token `{t}`")));
            }
            v.tokens.push(t);
        }
        Ok(v)
    }

    /// Every token of the corpus in order of first appearance.
    pub fn build<S: AsRef<str>>(corpus: &[S]) -> Self {
        let mut seen = std::collections::HashSet::new();
        let words: Vec<String> = corpus
            .iter()
            .flat_map(|s| tokenize(s.as_ref()))
            .filter(|w| !RESERVED.contains(&w.as_str()) && seen.insert(w.clone()))
            .collect();
        Self::with_tokens(words).expect("tokens deduplicated")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, i: usize) -> Option<&str> {
        self.tokens.get(i).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.index_of(t)).collect()
    }

    /// `startseq w1 .. wn endseq`.
    pub fn encode_caption(&self, text: &str) -> Vec<usize> {
        let mut out = vec![START];
        out.extend(self.encode(text));
        out.push(END);
        out
    }

    /// One non-reserved token per line; line `n` (from 0) is index `n + 4`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens[RESERVED.len()..] {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::with_tokens(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text()).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_text(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaptionDims {
    pub vocab: usize,
    pub feature_dim: usize,
    pub embedding: usize,
    /// Width of the image branch, the LSTM and both merge layers.
    pub units: usize,
}

impl CaptionDims {
    pub fn new(vocab: usize, feature_dim: usize) -> Self {
        Self {
            vocab,
            feature_dim,
            embedding: 256,
            units: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionModel {
    dims: CaptionDims,
    params: ParamStore,
    img_w: ParamRef,
    img_b: ParamRef,
    emb: ParamRef,
    wx: ParamRef,
    wh: ParamRef,
    lstm_b: ParamRef,
    fc1_w: ParamRef,
    fc1_b: ParamRef,
    fc2_w: ParamRef,
    fc2_b: ParamRef,
    out_w: ParamRef,
    out_b: ParamRef,
}

/// LSTM state and per-step values kept for backpropagation through time.
#[derive(Debug, Clone, Default)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

struct LstmStep {
    token: usize,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Gate activations `[i, f, g, o]`, each `units` long.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// One step of a standard LSTM cell with gate order input, forget,
/// candidate, output. `wx` is `(4u, e)`, `wh` is `(4u, u)`.
pub fn lstm_cell(wx: &[f64], wh: &[f64], b: &[f64], x: &[f64], state: &LstmState) -> (LstmState, Vec<f64>) {
    let u = state.h.len();
    let mut a = nn::dense(wx, b, x);
    for (r, ar) in a.iter_mut().enumerate() {
        *ar += wh[r * u..(r + 1) * u].iter().zip(&state.h).map(|(w, h)| w * h).sum::<f64>();
    }
    let mut gates = vec![0.0; 4 * u];
    let mut next = LstmState {
        h: vec![0.0; u],
        c: vec![0.0; u],
    };
    for j in 0..u {
        let i = nn::sigmoid(a[j]);
        let f = nn::sigmoid(a[u + j]);
        let g = a[2 * u + j].tanh();
        let o = nn::sigmoid(a[3 * u + j]);
        gates[j] = i;
        gates[u + j] = f;
        gates[2 * u + j] = g;
        gates[3 * u + j] = o;
        next.c[j] = f * state.c[j] + i * g;
        next.h[j] = o * next.c[j].tanh();
    }
    (next, gates)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionSample {
    pub features: Vec<f64>,
    pub prefix: Vec<usize>,
    pub target: usize,
}

/// Expands each encoded caption into (prefix, next token) pairs.
pub fn caption_samples(features: &[f64], encoded: &[usize]) -> Vec<CaptionSample> {
    (1..encoded.len())
        .map(|i| CaptionSample {
            features: features.to_vec(),
            prefix: encoded[..i].to_vec(),
            target: encoded[i],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caption {
    pub tokens: Vec<String>,
    pub text: String,
}

impl CaptionModel {
    pub fn new(dims: CaptionDims, seed: u64) -> Result<Self> {
        let CaptionDims { vocab, feature_dim, embedding: e, units: u } = dims;
        if vocab <= RESERVED.len() || feature_dim == 0 || e == 0 || u == 0 {
            return Err(Error::param(format!("caption dimensions {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let img_w = p.add_uniform("img.W", vec![u, feature_dim], INIT_BOUND, &mut rng);
        let img_b = p.add_const("img.b", vec![u], 0.0, true);
        let emb = p.add_uniform("emb", vec![vocab, e], INIT_BOUND, &mut rng);
        let wx = p.add_uniform("lstm.Wx", vec![4 * u, e], INIT_BOUND, &mut rng);
        let wh = p.add_uniform("lstm.Wh", vec![4 * u, u], INIT_BOUND, &mut rng);
        let mut bias = vec![0.0; 4 * u];
        bias[u..2 * u].fill(1.0);
        let lstm_b = p.add("lstm.b", vec![4 * u], bias, true);
        let fc1_w = p.add_uniform("fc1.W", vec![u, u], INIT_BOUND, &mut rng);
        let fc1_b = p.add_const("fc1.b", vec![u], 0.0, true);
        let fc2_w = p.add_uniform("fc2.W", vec![u, u], INIT_BOUND, &mut rng);
        let fc2_b = p.add_const("fc2.b", vec![u], 0.0, true);
        let out_w = p.add_uniform("out.W", vec![vocab, u], INIT_BOUND, &mut rng);
        let out_b = p.add_const("out.b", vec![vocab], 0.0, true);
        Ok(Self {
            dims,
            params: p,
            img_w,
            img_b,
            emb,
            wx,
            wh,
            lstm_b,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
            out_w,
            out_b,
        })
    }

    pub fn dims(&self) -> CaptionDims {
        self.dims
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.params.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::format("caption weights hold non-finite values"));
        }
        Ok(())
    }

    fn embedding(&self, token: usize) -> &[f64] {
        let e = self.dims.embedding;
        &self.params.get(self.emb)[token * e..(token + 1) * e]
    }

    fn initial_state(&self) -> LstmState {
        LstmState {
            h: vec![0.0; self.dims.units],
            c: vec![0.0; self.dims.units],
        }
    }

    fn advance(&self, state: &LstmState, token: usize) -> (LstmState, Vec<f64>) {
        let p = &self.params;
        lstm_cell(p.get(self.wx), p.get(self.wh), p.get(self.lstm_b), self.embedding(token), state)
    }

    fn image_branch(&self, features: &[f64]) -> Vec<f64> {
        let mut img = nn::dense(self.params.get(self.img_w), self.params.get(self.img_b), features);
        nn::relu_inplace(&mut img);
        img
    }

    /// Merge layers and output distribution, plus the two hidden activations.
    fn head(&self, img: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let merged: Vec<f64> = img.iter().zip(h).map(|(a, b)| a + b).collect();
        let mut d1 = nn::dense(self.params.get(self.fc1_w), self.params.get(self.fc1_b), &merged);
        nn::relu_inplace(&mut d1);
        let mut d2 = nn::dense(self.params.get(self.fc2_w), self.params.get(self.fc2_b), &d1);
        nn::relu_inplace(&mut d2);
        let probs = nn::softmax(&nn::dense(self.params.get(self.out_w), self.params.get(self.out_b), &d2));
        (merged, d1, d2, probs)
    }

    fn check(&self, features: &[f64], prefix: &[usize]) -> Result<()> {
        if features.len() != self.dims.feature_dim {
            return Err(Error::shape(format!(
                "caption head expects {} features, got {}",
                self.dims.feature_dim,
                features.len()
            )));
        }
        if prefix.is_empty() {
            return Err(Error::Empty("caption prefix".into()));
        }
        Ok(())
    }

    fn clamp_token(&self, t: usize) -> usize {
        if t < self.dims.vocab {
            t
        } else {
            UNK
        }
    }

    /// Next-token distribution for a prefix (which should begin with
    /// `startseq`). Out-of-vocabulary indices read as unknown.
    pub fn caption_step(&self, features: &[f64], prefix: &[usize]) -> Result<Vec<f64>> {
        self.check(features, prefix)?;
        let mut state = self.initial_state();
        for &t in prefix {
            state = self.advance(&state, self.clamp_token(t)).0;
        }
        Ok(self.head(&self.image_branch(features), &state.h).3)
    }

    /// Greedy decoding from `startseq` until `endseq` or `max_len` words.
    pub fn decode(&self, features: &FeatureVector, vocab: &Vocabulary, max_len: usize) -> Result<Caption> {
        let features = features.to_f64();
        self.check(&features, &[START])?;
        let img = self.image_branch(&features);
        let mut state = self.advance(&self.initial_state(), START).0;
        let mut tokens = Vec::new();
        while tokens.len() < max_len {
            let probs = self.head(&img, &state.h).3;
            let next = nn::argmax(&probs);
            if next == END {
                break;
            }
            if next != START && next != PAD {
                tokens.push(vocab.token(next).unwrap_or(RESERVED[UNK]).to_string());
            }
            state = self.advance(&state, next).0;
        }
        let text = capitalize(&tokens.join(" "));
        Ok(Caption { tokens, text })
    }

    /// Forward and backward for one sample, adding `scale`-weighted
    /// gradients into `grad`.
    fn accumulate(&self, s: &CaptionSample, scale: f64, grad: &mut [f64]) -> f64 {
        let u = self.dims.units;
        let e = self.dims.embedding;
        let p = &self.params;

        let img = self.image_branch(&s.features);
        let mut state = self.initial_state();
        let mut steps = Vec::with_capacity(s.prefix.len());
        for &t in &s.prefix {
            let token = self.clamp_token(t);
            let (next, gates) = self.advance(&state, token);
            steps.push(LstmStep {
                token,
                h_prev: std::mem::take(&mut state.h),
                c_prev: std::mem::take(&mut state.c),
                gates,
                tanh_c: next.c.iter().map(|v| v.tanh()).collect(),
            });
            state = next;
        }
        let (merged, d1, d2, probs) = self.head(&img, &state.h);
        let loss = nn::cross_entropy(&probs, s.target).expect("target in vocabulary");
        let dlogits = nn::softmax_xent_grad(&probs, s.target, scale);

        let mut local = vec![0.0; grad.len()];
        let dense_back = |w: ParamRef, b: ParamRef, x: &[f64], dy: &[f64], local: &mut [f64]| {
            let (gw, gb) = crate::classifier::split_pair(local, w.range(), b.range());
            nn::dense_backward(p.get(w), x, dy, gw, gb)
        };
        let mut dd2 = dense_back(self.out_w, self.out_b, &d2, &dlogits, &mut local);
        nn::relu_backward(&d2, &mut dd2);
        let mut dd1 = dense_back(self.fc2_w, self.fc2_b, &d1, &dd2, &mut local);
        nn::relu_backward(&d1, &mut dd1);
        let dmerged = dense_back(self.fc1_w, self.fc1_b, &merged, &dd1, &mut local);
        let mut dimg = dmerged.clone();
        nn::relu_backward(&img, &mut dimg);
        dense_back(self.img_w, self.img_b, &s.features, &dimg, &mut local);

        // backpropagation through time
        let (wx, wh) = (p.get(self.wx), p.get(self.wh));
        let mut dh = dmerged;
        let mut dc = vec![0.0; u];
        let mut da = vec![0.0; 4 * u];
        for step in steps.iter().rev() {
            let g = &step.gates;
            for j in 0..u {
                let (i, f, cand, o) = (g[j], g[u + j], g[2 * u + j], g[3 * u + j]);
                let tc = step.tanh_c[j];
                let dcj = dc[j] + dh[j] * o * (1.0 - tc * tc);
                da[j] = dcj * cand * i * (1.0 - i);
                da[u + j] = dcj * step.c_prev[j] * f * (1.0 - f);
                da[2 * u + j] = dcj * i * (1.0 - cand * cand);
                da[3 * u + j] = dh[j] * tc * o * (1.0 - o);
                dc[j] = dcj * f;
            }
            let x = self.embedding(step.token);
            let mut dx = vec![0.0; e];
            let mut dh_prev = vec![0.0; u];
            {
                let gwx = &mut local[self.wx.range()];
                for r in 0..4 * u {
                    let d = da[r];
                    if d == 0.0 {
                        continue;
                    }
                    for k in 0..e {
                        gwx[r * e + k] += d * x[k];
                        dx[k] += d * wx[r * e + k];
                    }
                }
            }
            {
                let gwh = &mut local[self.wh.range()];
                for r in 0..4 * u {
                    let d = da[r];
                    if d == 0.0 {
                        continue;
                    }
                    for k in 0..u {
                        gwh[r * u + k] += d * step.h_prev[k];
                        dh_prev[k] += d * wh[r * u + k];
                    }
                }
            }
            for (gb, d) in local[self.lstm_b.range()].iter_mut().zip(&da) {
                *gb += d;
            }
            let erange = self.emb.range();
            for (gv, d) in local[erange][step.token * e..(step.token + 1) * e].iter_mut().zip(&dx) {
                *gv += d;
            }
            dh = dh_prev;
        }
        for (g, l) in grad.iter_mut().zip(local) {
            *g += l;
        }
        loss
    }
}

impl Trainable for CaptionModel {
    type Sample = CaptionSample;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn loss_and_grad(&mut self, batch: &[&CaptionSample], grad: &mut [f64], _training: bool) -> f64 {
        let scale = 1.0 / batch.len() as f64;
        batch.iter().map(|s| self.accumulate(s, scale, grad)).sum::<f64>() * scale
    }

    fn evaluate(&self, samples: &[&CaptionSample]) -> (f64, usize) {
        let mut loss = 0.0;
        let mut correct = 0;
        for s in samples {
            let probs = self.caption_step(&s.features, &s.prefix).expect("sample matches model");
            loss += nn::cross_entropy(&probs, s.target).expect("target in vocabulary");
            correct += (nn::argmax(&probs) == s.target) as usize;
        }
        (loss / samples.len().max(1) as f64, correct)
    }

    fn target(sample: &CaptionSample) -> Option<usize> {
        Some(sample.target)
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn rules() -> &'static [Regex] {
    static RULES: OnceLock<Vec<Regex>> = OnceLock::new();
    RULES.get_or_init(|| {
        [
            r"(?i)^\s*(a|the)\s+(hand|finger)\s+(is\s+)?pointing\s+(to|at)\s+",
            r"(?i)^\s*(a|the)\s+(hand|finger)\s+and\s+",
        ]
        .iter()
        .map(|r| Regex::new(r).expect("valid rule"))
        .collect()
    })
}

/// Drops leading hand or finger phrases and re-capitalizes. Rules are
/// reapplied until none matches, so the result is a fixed point.
pub fn postprocess(text: &str) -> String {
    let mut current = text.trim().to_string();
    loop {
        let mut next = current.clone();
        for r in rules() {
            next = r.replace(&next, "").into_owned();
        }
        if next == current {
            break;
        }
        current = next;
    }
    capitalize(current.trim())
}
