//! Gesture vocabulary and head bindings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a [`LabelRegistry`]. Indices are stable: new labels append.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GestureLabel(u16);

impl GestureLabel {
    pub const POINT: Self = Self(0);
    pub const DRAG: Self = Self(1);
    pub const LOUPE: Self = Self(2);
    pub const PINCH: Self = Self(3);
    pub const OTHER: Self = Self(4);
    pub const NONE: Self = Self(5);

    pub fn from_index(i: usize) -> Self {
        Self(i as u16)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Which specialized head a label activates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadBinding {
    /// Fingertip localization plus object description (pointing).
    Point,
    /// Fingertip localization only.
    Drag,
    Caption,
    Pinch,
    /// No head, no response.
    Negative,
}

impl HeadBinding {
    pub fn is_negative(self) -> bool {
        self == HeadBinding::Negative
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelInfo {
    pub name: String,
    pub binding: HeadBinding,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRegistry {
    labels: Vec<LabelInfo>,
}

impl Default for LabelRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

impl LabelRegistry {
    /// point, drag, loupe, pinch, other, none, in that index order.
    pub fn standard() -> Self {
        let labels = [
            ("point", HeadBinding::Point),
            ("drag", HeadBinding::Drag),
            ("loupe", HeadBinding::Caption),
            ("pinch", HeadBinding::Pinch),
            ("other", HeadBinding::Negative),
            ("none", HeadBinding::Negative),
        ]
        .into_iter()
        .map(|(name, binding)| LabelInfo {
            name: name.to_string(),
            binding,
        })
        .collect();
        Self { labels }
    }

    pub fn empty() -> Self {
        Self { labels: Vec::new() }
    }

    /// First label bound to no head; the temporal gate folds every
    /// negative class into it.
    pub fn negative(&self) -> Option<GestureLabel> {
        self.labels
            .iter()
            .position(|l| l.binding.is_negative())
            .map(GestureLabel::from_index)
    }

    pub fn register(&mut self, name: &str, binding: HeadBinding) -> Result<GestureLabel> {
        let name = name.to_ascii_lowercase();
        if self.labels.iter().any(|l| l.name == name) {
            return Err(Error::param(format!("label `{name}` already registered")));
        }
        self.labels.push(LabelInfo { name, binding });
        Ok(GestureLabel::from_index(self.labels.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = GestureLabel> + '_ {
        (0..self.labels.len()).map(GestureLabel::from_index)
    }

    pub fn info(&self, label: GestureLabel) -> Result<&LabelInfo> {
        self.labels
            .get(label.index())
            .ok_or_else(|| Error::UnknownLabel(format!("#{}", label.index())))
    }

    pub fn name(&self, label: GestureLabel) -> Result<&str> {
        Ok(&self.info(label)?.name)
    }

    pub fn binding(&self, label: GestureLabel) -> Result<HeadBinding> {
        Ok(self.info(label)?.binding)
    }

    pub fn is_negative(&self, label: GestureLabel) -> Result<bool> {
        Ok(self.binding(label)?.is_negative())
    }

    pub fn by_name(&self, name: &str) -> Result<GestureLabel> {
        let lower = name.to_ascii_lowercase();
        self.labels
            .iter()
            .position(|l| l.name == lower)
            .map(GestureLabel::from_index)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_indices_and_negatives() {
        let r = LabelRegistry::standard();
        assert_eq!(r.by_name("Loupe").unwrap(), GestureLabel::LOUPE);
        assert!(r.is_negative(GestureLabel::OTHER).unwrap());
        assert!(r.is_negative(GestureLabel::NONE).unwrap());
        assert!(!r.is_negative(GestureLabel::PINCH).unwrap());
        assert!(r.by_name("wave").is_err());
    }

    #[test]
    fn registration_appends() {
        let mut r = LabelRegistry::standard();
        let wave = r.register("wave", HeadBinding::Negative).unwrap();
        assert_eq!(wave.index(), 6);
        assert_eq!(r.by_name("point").unwrap(), GestureLabel::POINT);
        assert!(r.register("WAVE", HeadBinding::Caption).is_err());
    }
}
