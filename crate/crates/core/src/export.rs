//! Reader and writer for activation-export manifests.
//!
//! An export directory holds one `.atn` file per (image, layer) and a
//! JSON-lines manifest, one object per file:
//!
//! ```text
//! {"image":"img/0001.png","layer":"conv3","file":"0001_conv3.atn","dims":[64,7,7]}
//! {"image":"img/0001.png","layer":"gap","file":"0001_gap.atn","dims":[64],"kind":"pooled"}
//! ```
//!
//! Activation tensors are `[filters, height, width]`, pooled vectors `[n]`.
//! `input_size` (`[width, height]`, default 224x224) is the image extent the
//! maps were computed from. File paths are relative to the manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::atn;
use crate::backbone::{ActivationStack, FeatureVector, ForwardOutput};
use crate::error::{Error, Result};

pub const DEFAULT_INPUT_SIZE: (usize, usize) = (224, 224);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    #[default]
    Activation,
    Pooled,
}

fn is_default_kind(k: &EntryKind) -> bool {
    *k == EntryKind::Activation
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportEntry {
    pub image: String,
    pub layer: String,
    pub file: String,
    pub dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "is_default_kind")]
    pub kind: EntryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_size: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExportManifest {
    pub entries: Vec<ExportEntry>,
    /// Directory file paths resolve against.
    pub base: PathBuf,
}

impl ExportManifest {
    pub fn parse(text: &str, base: impl Into<PathBuf>) -> Result<Self> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| {
                serde_json::from_str::<ExportEntry>(l)
                    .map_err(|e| Error::format(format!("export manifest line {}: {e}", n + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            entries,
            base: base.into(),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().map(Path::to_path_buf).unwrap_or_default())
    }

    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_json_lines()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Distinct image identifiers in first-seen order.
    pub fn images(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !seen.contains(&e.image.as_str()) {
                seen.push(&e.image);
            }
        }
        seen
    }

    pub fn find(&self, image: &str, layer: &str) -> Option<&ExportEntry> {
        self.entries.iter().find(|e| e.image == image && e.layer == layer)
    }

    fn load_checked(&self, entry: &ExportEntry) -> Result<crate::tensor::Tensor> {
        let t = atn::load_tensor(self.base.join(&entry.file))?;
        if t.dims() != entry.dims.as_slice() {
            return Err(Error::shape(format!(
                "{}: manifest dims {:?}, file dims {:?}",
                entry.file,
                entry.dims,
                t.dims()
            )));
        }
        Ok(t)
    }

    pub fn load_stack(&self, entry: &ExportEntry) -> Result<ActivationStack> {
        if entry.kind != EntryKind::Activation {
            return Err(Error::format(format!("{} is not an activation entry", entry.file)));
        }
        let t = self.load_checked(entry)?;
        ActivationStack::new(&entry.layer, t, entry.input_size.unwrap_or(DEFAULT_INPUT_SIZE))
    }

    pub fn load_features(&self, entry: &ExportEntry) -> Result<FeatureVector> {
        if entry.kind != EntryKind::Pooled {
            return Err(Error::format(format!("{} is not a pooled entry", entry.file)));
        }
        let t = self.load_checked(entry)?;
        if t.ndim() != 1 {
            return Err(Error::shape(format!("pooled vector must be 1-D, got {:?}", t.dims())));
        }
        Ok(FeatureVector::new(t.into_data()))
    }

    /// Writes every stack and the pooled features of one forward pass into
    /// `base`, appending the entries.
    pub fn add_forward(&mut self, image: &str, stem: &str, out: &ForwardOutput) -> Result<()> {
        std::fs::create_dir_all(&self.base).map_err(|e| Error::io(&self.base, e))?;
        for s in &out.stacks {
            let file = format!("{stem}_{}.atn", s.layer_name());
            atn::save_tensor(s.maps(), self.base.join(&file))?;
            self.entries.push(ExportEntry {
                image: image.to_string(),
                layer: s.layer_name().to_string(),
                file,
                dims: s.maps().dims().to_vec(),
                kind: EntryKind::Activation,
                input_size: Some(s.source_extent()),
            });
        }
        let f = &out.features;
        let t = crate::tensor::Tensor::new(vec![f.len()], f.as_slice().to_vec())?;
        let file = format!("{stem}_gap.atn");
        atn::save_tensor(&t, self.base.join(&file))?;
        self.entries.push(ExportEntry {
            image: image.to_string(),
            layer: "gap".into(),
            file,
            dims: vec![f.len()],
            kind: EntryKind::Pooled,
            input_size: None,
        });
        Ok(())
    }
}
