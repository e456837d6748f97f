//! Head weights on disk: one `.atn` file per tensor plus a JSON manifest
//! naming each tensor and carrying the head's dimensions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::atn;
use crate::caption::{CaptionDims, CaptionModel};
use crate::classifier::DenseSoftmaxHead;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::pinch::{PinchDims, PinchHead};
use crate::tensor::Tensor;
use crate::train::Trainable;

pub const MANIFEST_NAME: &str = "weights.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub kind: String,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

fn file_name(tensor: &str) -> String {
    let safe: String = tensor
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.atn")
}

/// Writes every tensor of `store` into `dir` and returns the manifest path.
pub fn save_store(dir: impl AsRef<Path>, kind: &str, meta: serde_json::Value, store: &ParamStore) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::new();
    for (name, t) in store.to_tensors() {
        let file = file_name(&name);
        atn::save_tensor(&t, dir.join(&file))?;
        tensors.push(TensorEntry {
            name,
            file,
            dims: t.dims().to_vec(),
        });
    }
    let manifest = WeightsManifest {
        kind: kind.to_string(),
        meta,
        tensors,
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedWeights {
    pub manifest: WeightsManifest,
    pub tensors: BTreeMap<String, Tensor>,
}

/// Accepts the manifest path or the directory holding it.
pub fn load(path: impl AsRef<Path>) -> Result<LoadedWeights> {
    let path = path.as_ref();
    let manifest_path = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: WeightsManifest = serde_json::from_str(&text)?;
    let mut tensors = BTreeMap::new();
    for e in &manifest.tensors {
        let t = atn::load_tensor(dir.join(&e.file))?;
        if t.dims() != e.dims.as_slice() {
            return Err(Error::format(format!(
                "tensor {} listed as {:?} but file holds {:?}",
                e.name,
                e.dims,
                t.dims()
            )));
        }
        tensors.insert(e.name.clone(), t);
    }
    Ok(LoadedWeights { manifest, tensors })
}

fn meta_usize(meta: &serde_json::Value, key: &str) -> Result<usize> {
    meta.get(key)
        .and_then(serde_json::Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| Error::format(format!("weights manifest lacks `{key}`")))
}

/// A head that can be written to and rebuilt from a weights directory.
pub trait Persist: Trainable + Sized {
    const KIND: &'static str;

    fn meta(&self) -> serde_json::Value;

    /// An uninitialized head of the dimensions recorded in `meta`.
    fn skeleton(meta: &serde_json::Value) -> Result<Self>;

    fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        save_store(dir, Self::KIND, self.meta(), self.params())
    }

    fn load(path: impl AsRef<Path>) -> Result<Self> {
        let w = load(path)?;
        if w.manifest.kind != Self::KIND {
            return Err(Error::format(format!(
                "expected {} weights, found {}",
                Self::KIND,
                w.manifest.kind
            )));
        }
        let mut head = Self::skeleton(&w.manifest.meta)?;
        head.params_mut().load_tensors(|name| w.tensors.get(name))?;
        Ok(head)
    }
}

impl Persist for DenseSoftmaxHead {
    const KIND: &'static str = "classifier";

    fn meta(&self) -> serde_json::Value {
        json!({ "n_labels": self.n_labels(), "feature_dim": self.feature_dim() })
    }

    fn skeleton(meta: &serde_json::Value) -> Result<Self> {
        Ok(DenseSoftmaxHead::zeros(meta_usize(meta, "n_labels")?, meta_usize(meta, "feature_dim")?))
    }
}

impl Persist for PinchHead {
    const KIND: &'static str = "pinch";

    fn meta(&self) -> serde_json::Value {
        let d = self.dims();
        json!({
            "channels": d.channels, "height": d.height, "width": d.width,
            "filters": d.filters, "hidden": d.hidden,
        })
    }

    fn skeleton(meta: &serde_json::Value) -> Result<Self> {
        let head = PinchHead::new(
            PinchDims {
                channels: meta_usize(meta, "channels")?,
                height: meta_usize(meta, "height")?,
                width: meta_usize(meta, "width")?,
                filters: meta_usize(meta, "filters")?,
                hidden: meta_usize(meta, "hidden")?,
            },
            0,
        )?;
        Ok(head)
    }

    fn load(path: impl AsRef<Path>) -> Result<Self> {
        let w = load(path)?;
        if w.manifest.kind != Self::KIND {
            return Err(Error::format(format!("expected pinch weights, found {}", w.manifest.kind)));
        }
        let mut head = Self::skeleton(&w.manifest.meta)?;
        head.params_mut().load_tensors(|name| w.tensors.get(name))?;
        head.check_finite()?;
        Ok(head)
    }
}

impl Persist for CaptionModel {
    const KIND: &'static str = "caption";

    fn meta(&self) -> serde_json::Value {
        let d = self.dims();
        json!({
            "vocab": d.vocab, "feature_dim": d.feature_dim,
            "embedding": d.embedding, "units": d.units,
        })
    }

    fn skeleton(meta: &serde_json::Value) -> Result<Self> {
        CaptionModel::new(
            CaptionDims {
                vocab: meta_usize(meta, "vocab")?,
                feature_dim: meta_usize(meta, "feature_dim")?,
                embedding: meta_usize(meta, "embedding")?,
                units: meta_usize(meta, "units")?,
            },
            0,
        )
    }
}
