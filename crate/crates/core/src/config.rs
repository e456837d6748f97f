//! `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are fixed (see
//! [`KEYS`]); unknown or repeated keys are errors. Relative paths resolve
//! against the directory holding the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::backbone::{Backbone, NoisyBackbone, SyntheticBackbone, SyntheticConfig};
use crate::caption::{CaptionModel, Vocabulary};
use crate::classifier::DenseSoftmaxHead;
use crate::engine::{Heads, Session, SessionConfig};
use crate::error::{Error, Result};
use crate::filter_selection::{FSParams, FilterSet, Selection};
use crate::labels::{HeadBinding, LabelRegistry};
use crate::pinch::PinchHead;
use crate::train::TrainConfig;
use crate::weights::Persist;

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("backbone.extent", "input extent, `W` or `WxH` (default 224)"),
    ("backbone.widths", "random filters per stage, three comma-separated counts (default 16,32,64)"),
    ("backbone.planted_per_color", "planted detector copies per stimulus colour (default 4)"),
    ("backbone.seed", "backbone weight seed (default 0)"),
    ("backbone.noise", "uniform noise amplitude added to every activation (default 0)"),
    ("backbone.noise_seed", "noise seed (default 0)"),
    ("registry", "comma-separated `name:binding` list; bindings point, drag, caption, pinch, negative"),
    ("weights.classifier", "classifier weights directory"),
    ("weights.pinch", "pinch head weights directory"),
    ("weights.caption", "caption head weights directory"),
    ("weights.vocab", "caption vocabulary file (default <weights.caption>/vocab.txt)"),
    ("fset.point", "filter set file for point"),
    ("fset.drag", "filter set file for drag"),
    ("fs.layer", "filter selection layer (default conv3)"),
    ("fs.top_n", "keep the n best filters (default 4)"),
    ("fs.alpha", "keep filters scoring above alpha; overrides fs.top_n"),
    ("fs.beta", "binarization threshold (default 0.92)"),
    ("fs.kernel", "odd dilation kernel size (default 7)"),
    ("fs.min_area", "smallest blob kept, in pixels (default 1)"),
    ("engine.k", "temporal gate window (default 2)"),
    ("engine.d", "pinch frame distance (default 5)"),
    ("engine.max_caption_len", "caption length cap in tokens (default 20)"),
    ("engine.caption_every_n", "re-caption period during a held loupe gesture, 0 = once (default 0)"),
    ("train.max_epochs", "epoch limit (default 200)"),
    ("train.batch_size", "mini-batch size (default 32)"),
    ("train.patience", "early-stopping patience (default 10)"),
    ("train.rho", "Adadelta decay (default 0.95)"),
    ("train.epsilon", "Adadelta epsilon (default 1e-6)"),
    ("train.learning_rate", "step multiplier (default 1.0)"),
    ("train.augment", "true or false (default true)"),
    ("train.seed", "shuffle and init seed (default 0)"),
];

const PATH_KEYS: &[&str] = &[
    "weights.classifier",
    "weights.pinch",
    "weights.caption",
    "weights.vocab",
    "fset.point",
    "fset.drag",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    base: PathBuf,
}

fn known(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::param(format!("unknown config key `{key}`")))
    }
}

impl ConfigFile {
    /// Empty configuration; relative paths resolve against `base`.
    pub fn new(base: impl Into<PathBuf>) -> Self {
        Self {
            values: BTreeMap::new(),
            base: base.into(),
        }
    }

    pub fn parse(text: &str, base: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg = Self::new(base);
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("config line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            known(k)?;
            if cfg.values.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::param(format!("config key `{k}` repeated")));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    /// Overrides a value, as a command-line flag does.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        known(key)?;
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::param(format!("config key `{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Path value resolved against the file's directory.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        debug_assert!(PATH_KEYS.contains(&key));
        self.raw(key).map(|v| {
            let p = Path::new(v);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                self.base.join(p)
            }
        })
    }

    pub fn backbone_config(&self) -> Result<SyntheticConfig> {
        let d = SyntheticConfig::default();
        let extent = match self.raw("backbone.extent") {
            None => d.extent,
            Some(v) => parse_extent(v)?,
        };
        let widths = match self.raw("backbone.widths") {
            None => d.widths,
            Some(v) => {
                let w: Vec<usize> = v
                    .split(',')
                    .map(|x| x.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::param(format!("backbone.widths: cannot parse `{v}`")))?;
                w.try_into()
                    .map_err(|_| Error::param("backbone.widths needs three counts"))?
            }
        };
        Ok(SyntheticConfig {
            extent,
            widths,
            planted_per_color: self.get_or("backbone.planted_per_color", d.planted_per_color)?,
            seed: self.get_or("backbone.seed", d.seed)?,
        })
    }

    pub fn backbone(&self) -> Result<Box<dyn Backbone>> {
        let inner = SyntheticBackbone::new(self.backbone_config()?)?;
        let noise: f32 = self.get_or("backbone.noise", 0.0)?;
        if noise < 0.0 || !noise.is_finite() {
            return Err(Error::param("backbone.noise must be finite and non-negative"));
        }
        Ok(if noise > 0.0 {
            Box::new(NoisyBackbone::new(inner, noise, self.get_or("backbone.noise_seed", 0)?))
        } else {
            Box::new(inner)
        })
    }

    pub fn registry(&self) -> Result<LabelRegistry> {
        let Some(spec) = self.raw("registry") else {
            return Ok(LabelRegistry::standard());
        };
        let mut reg = LabelRegistry::empty();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (name, binding) = item
                .split_once(':')
                .ok_or_else(|| Error::param(format!("registry entry `{item}` is not `name:binding`")))?;
            let binding = match binding.trim() {
                "point" => HeadBinding::Point,
                "drag" => HeadBinding::Drag,
                "caption" => HeadBinding::Caption,
                "pinch" => HeadBinding::Pinch,
                "negative" => HeadBinding::Negative,
                other => return Err(Error::param(format!("unknown head binding `{other}`"))),
            };
            reg.register(name.trim(), binding)?;
        }
        Ok(reg)
    }

    pub fn fs_params(&self) -> Result<FSParams> {
        let mut p = FSParams::new(self.raw("fs.layer").unwrap_or("conv3"));
        if let Some(n) = self.get("fs.top_n")? {
            p.selection = Selection::TopN(n);
        }
        if let Some(a) = self.get("fs.alpha")? {
            p.selection = Selection::Alpha(a);
        }
        p.beta = self.get_or("fs.beta", p.beta)?;
        p.s = self.get_or("fs.kernel", p.s)?;
        p.min_area = self.get_or("fs.min_area", p.min_area)?;
        p.validate()?;
        Ok(p)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            max_epochs: self.get_or("train.max_epochs", d.max_epochs)?,
            batch_size: self.get_or("train.batch_size", d.batch_size)?,
            patience: self.get_or("train.patience", d.patience)?,
            rho: self.get_or("train.rho", d.rho)?,
            epsilon: self.get_or("train.epsilon", d.epsilon)?,
            learning_rate: self.get_or("train.learning_rate", d.learning_rate)?,
            augment: self.get_or("train.augment", d.augment)?,
            seed: self.get_or("train.seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn session_config(&self) -> Result<SessionConfig> {
        let d = SessionConfig::default();
        let cfg = SessionConfig {
            k: self.get_or("engine.k", d.k)?,
            d: self.get_or("engine.d", d.d)?,
            max_caption_len: self.get_or("engine.max_caption_len", d.max_caption_len)?,
            caption_every_n: self.get_or("engine.caption_every_n", d.caption_every_n)?,
            fs_params: self.fs_params()?,
            registry: self.registry()?,
        };
        if cfg.k == 0 || cfg.d == 0 {
            return Err(Error::param("engine.k and engine.d must be at least 1"));
        }
        Ok(cfg)
    }

    /// Loads every referenced head. Only the classifier is required.
    pub fn heads(&self, registry: &LabelRegistry) -> Result<Heads> {
        let classifier_path = self
            .path("weights.classifier")
            .ok_or_else(|| Error::MissingWeights("classifier (weights.classifier)".into()))?;
        let classifier = DenseSoftmaxHead::load(&classifier_path)?;
        let mut filter_sets = BTreeMap::new();
        for key in ["fset.point", "fset.drag"] {
            if let Some(p) = self.path(key) {
                let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                let fset = FilterSet::from_manifest(&text, registry)?;
                filter_sets.insert(fset.class_label, fset);
            }
        }
        let pinch = self.path("weights.pinch").map(PinchHead::load).transpose()?;
        let caption = match self.path("weights.caption") {
            None => None,
            Some(dir) => {
                let vocab_path = self.path("weights.vocab").unwrap_or_else(|| dir.join("vocab.txt"));
                Some((CaptionModel::load(&dir)?, Vocabulary::load(vocab_path)?))
            }
        };
        Ok(Heads {
            classifier,
            filter_sets,
            pinch,
            caption,
        })
    }

    pub fn session(&self) -> Result<Session<Box<dyn Backbone>>> {
        let config = self.session_config()?;
        let heads = self.heads(&config.registry)?;
        Session::new(self.backbone()?, heads, config)
    }
}

/// `224` or `320x240` (width first).
pub fn parse_extent(v: &str) -> Result<(usize, usize)> {
    let bad = || Error::param(format!("cannot parse extent `{v}`"));
    let (w, h) = match v.split_once(['x', 'X']) {
        Some((w, h)) => (w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?),
        None => {
            let n = v.trim().parse().map_err(|_| bad())?;
            (n, n)
        }
    };
    Ok((w, h))
}

/// Documentation block listing every key, suitable for `--help` output.
pub fn describe_keys() -> String {
    KEYS.iter().map(|(k, d)| format!("  {k:<28} {d}\n")).collect()
}
