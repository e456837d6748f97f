//! Small dense-math toolkit for the trainable heads.
//!
//! Head parameters live in one flat `f64` vector so the optimizer, the
//! finite-difference checker and weight persistence can treat every head the
//! same way. Values are exported to `f32` tensors only at the file boundary.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRef {
    offset: usize,
    len: usize,
}

impl ParamRef {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub slot: ParamRef,
    /// Non-trainable entries (running statistics) are skipped by optimizers.
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    specs: Vec<ParamSpec>,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, dims: Vec<usize>, init: Vec<f64>, trainable: bool) -> ParamRef {
        let len: usize = dims.iter().product();
        assert_eq!(len, init.len(), "parameter {name} init length");
        let slot = ParamRef {
            offset: self.values.len(),
            len,
        };
        self.values.extend(init);
        self.specs.push(ParamSpec {
            name: name.to_string(),
            dims,
            slot,
            trainable,
        });
        slot
    }

    pub fn add_uniform(&mut self, name: &str, dims: Vec<usize>, bound: f64, rng: &mut impl Rng) -> ParamRef {
        let len = dims.iter().product();
        let init = (0..len).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, dims, init, true)
    }

    pub fn add_const(&mut self, name: &str, dims: Vec<usize>, value: f64, trainable: bool) -> ParamRef {
        let len = dims.iter().product();
        self.add(name, dims, vec![value; len], trainable)
    }

    pub fn get(&self, p: ParamRef) -> &[f64] {
        &self.values[p.range()]
    }

    pub fn get_mut(&mut self, p: ParamRef) -> &mut [f64] {
        &mut self.values[p.range()]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    /// `true` for each scalar that an optimizer may update.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.values.len()];
        for s in &self.specs {
            mask[s.slot.range()].fill(s.trainable);
        }
        mask
    }

    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        self.specs
            .iter()
            .map(|s| {
                let data = self.values[s.slot.range()].iter().map(|&v| v as f32).collect();
                (s.name.clone(), Tensor::new(s.dims.clone(), data).expect("spec dims"))
            })
            .collect()
    }

    /// Overwrite values from named tensors; every parameter must be present
    /// with matching dims.
    pub fn load_tensors<'a>(&mut self, mut lookup: impl FnMut(&str) -> Option<&'a Tensor>) -> Result<()> {
        for s in &self.specs {
            let t = lookup(&s.name).ok_or_else(|| Error::MissingWeights(s.name.clone()))?;
            if t.dims() != s.dims.as_slice() {
                return Err(Error::shape(format!(
                    "parameter {} expects {:?}, file has {:?}",
                    s.name,
                    s.dims,
                    t.dims()
                )));
            }
            for (dst, &src) in self.values[s.slot.range()].iter_mut().zip(t.data()) {
                *dst = src as f64;
            }
        }
        Ok(())
    }
}

/// `y = W x + b` with `W` stored `(out, in)` row-major.
pub fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| {
            let row = &w[o * n_in..(o + 1) * n_in];
            bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

/// Accumulates `dW += dy x^T`, `db += dy` and returns `dx = W^T dy`.
pub fn dense_backward(w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let n_in = x.len();
    let mut dx = vec![0.0; n_in];
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[o] += g;
        let row = &w[o * n_in..(o + 1) * n_in];
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            drow[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
    dx
}

pub fn relu_inplace(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

/// Zeroes `grad` wherever the forward output was not positive.
pub fn relu_backward(out: &[f64], grad: &mut [f64]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln p[target]` with `p` clamped below at `1e-12`.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    let p = probs
        .get(target)
        .ok_or_else(|| Error::param(format!("target {target} out of range for {} classes", probs.len())))?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Gradient of softmax + cross-entropy w.r.t. the logits, scaled by `scale`.
pub fn softmax_xent_grad(probs: &[f64], target: usize, scale: f64) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| scale * (p - if i == target { 1.0 } else { 0.0 }))
        .collect()
}
