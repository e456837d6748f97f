//! Sample manifests, synthetic scene and pinch-sequence generation,
//! stratified splitting and geometric augmentation.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atn;
use crate::backbone::StimulusColor;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::labels::{GestureLabel, LabelRegistry};
use crate::pinch::ZoomAction;
use crate::tensor::Tensor;

pub const DEFAULT_EXTENT: usize = 224;
const BACKGROUND: f32 = 0.5;
const BACKGROUND_NOISE: f32 = 0.02;

/// What a stimulus stands for in a synthetic scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StimulusKind {
    Point,
    Drag,
    Loupe,
    PinchThumb,
    PinchIndex,
    Other,
}

impl StimulusKind {
    pub fn color(self) -> StimulusColor {
        match self {
            StimulusKind::Point => StimulusColor::Red,
            StimulusKind::Drag => StimulusColor::Green,
            StimulusKind::Loupe => StimulusColor::Blue,
            StimulusKind::PinchThumb | StimulusKind::Other => StimulusColor::Yellow,
            StimulusKind::PinchIndex => StimulusColor::Magenta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub kind: StimulusKind,
    pub x: u32,
    pub y: u32,
    pub size: u32,
}

impl Stimulus {
    pub fn bbox(&self) -> Result<BBox> {
        BBox::new(self.x, self.y, self.x + self.size, self.y + self.size)
    }
}

/// Desk objects drawn under the stimuli.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Mug,
    Book,
    Phone,
    Lamp,
    Bottle,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 5] = [
        ObjectKind::Mug,
        ObjectKind::Book,
        ObjectKind::Phone,
        ObjectKind::Lamp,
        ObjectKind::Bottle,
    ];

    /// Colours stay far from every stimulus colour so no planted detector
    /// fires on an object.
    pub fn rgb(self) -> [f32; 3] {
        match self {
            ObjectKind::Mug => [0.5, 0.3, 0.2],
            ObjectKind::Book => [0.1, 0.75, 0.75],
            ObjectKind::Phone => [0.95, 0.95, 0.95],
            ObjectKind::Lamp => [0.4, 0.5, 0.7],
            ObjectKind::Bottle => [0.05, 0.05, 0.05],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Mug => "mug",
            ObjectKind::Book => "book",
            ObjectKind::Phone => "phone",
            ObjectKind::Lamp => "lamp",
            ObjectKind::Bottle => "bottle",
        }
    }

    pub fn colour_word(self) -> &'static str {
        match self {
            ObjectKind::Mug => "brown",
            ObjectKind::Book => "cyan",
            ObjectKind::Phone => "white",
            ObjectKind::Lamp => "grey",
            ObjectKind::Bottle => "black",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub kind: ObjectKind,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    /// `(width, height)`.
    pub extent: (usize, usize),
    pub stimuli: Vec<Stimulus>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
}

impl SceneLayout {
    pub fn empty(extent: (usize, usize)) -> Self {
        Self {
            extent,
            stimuli: Vec::new(),
            objects: Vec::new(),
        }
    }

    /// Gesture shown by the stimuli: none for an empty layout, pinch for a
    /// thumb and index pair, otherwise the single kind present.
    pub fn gesture(&self) -> Result<GestureLabel> {
        let mut kinds: Vec<StimulusKind> = self.stimuli.iter().map(|s| s.kind).collect();
        kinds.sort_by_key(|k| *k as u8);
        kinds.dedup();
        Ok(match kinds.as_slice() {
            [] => GestureLabel::NONE,
            [StimulusKind::Point] => GestureLabel::POINT,
            [StimulusKind::Drag] => GestureLabel::DRAG,
            [StimulusKind::Loupe] => GestureLabel::LOUPE,
            [StimulusKind::Other] => GestureLabel::OTHER,
            [StimulusKind::PinchThumb, StimulusKind::PinchIndex] => GestureLabel::PINCH,
            other => return Err(Error::param(format!("stimuli {other:?} do not form one gesture"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrameSource {
    /// `.atn` tensor or binary PPM, relative to the manifest.
    File { path: String },
    Synthetic { seed: u64, layout: SceneLayout },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledObject {
    pub bbox: BBox,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub frame: FrameSource,
    /// Label name from the registry.
    pub gesture: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand_box: Option<BBox>,
    #[serde(default)]
    pub fingertip_boxes: Vec<BBox>,
    #[serde(default)]
    pub object_boxes: Vec<LabeledObject>,
    #[serde(default)]
    pub captions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zoom_label: Option<ZoomAction>,
    /// Thumb and index tip centres, for the distance baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pinch_tips: Option<[[f64; 2]; 2]>,
}

impl SampleRecord {
    pub fn label(&self, registry: &LabelRegistry) -> Result<GestureLabel> {
        registry.by_name(&self.gesture)
    }

    pub fn validate(&self, registry: &LabelRegistry, extent: (usize, usize)) -> Result<()> {
        let label = self.label(registry)?;
        let pointing = label == GestureLabel::POINT || label == GestureLabel::DRAG;
        if pointing == self.fingertip_boxes.is_empty() {
            return Err(Error::format(format!(
                "gesture `{}` with {} fingertip boxes",
                self.gesture,
                self.fingertip_boxes.len()
            )));
        }
        if (label == GestureLabel::PINCH) != self.zoom_label.is_some() {
            return Err(Error::format(format!("gesture `{}` and zoom label disagree", self.gesture)));
        }
        if self.captions.len() > 5 {
            return Err(Error::format("more than five captions"));
        }
        let (w, h) = (extent.0 as u32, extent.1 as u32);
        let boxes = self
            .hand_box
            .iter()
            .chain(&self.fingertip_boxes)
            .chain(self.object_boxes.iter().map(|o| &o.bbox));
        for b in boxes {
            if !b.within(w, h) {
                return Err(Error::format(format!("box {:?} outside {w}x{h}", b.as_array())));
            }
        }
        Ok(())
    }
}

fn fill_rect(frame: &mut Tensor, b: &BBox, rgb: [f32; 3]) {
    let w = frame.dims()[1];
    let data = frame.data_mut();
    for y in b.y0() as usize..b.y1() as usize {
        for x in b.x0() as usize..b.x1() as usize {
            data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&rgb);
        }
    }
}

/// Renders a layout over a lightly noisy grey desk and derives the record's
/// ground truth from it. Stimuli may not overlap each other.
pub fn generate_synthetic_scene(layout: &SceneLayout, seed: u64) -> Result<(Tensor, SampleRecord)> {
    let (w, h) = layout.extent;
    if w == 0 || h == 0 {
        return Err(Error::param("scene extent must be positive"));
    }
    let gesture = layout.gesture()?;
    let boxes = layout.stimuli.iter().map(Stimulus::bbox).collect::<Result<Vec<_>>>()?;
    for (i, a) in boxes.iter().enumerate() {
        if !a.within(w as u32, h as u32) {
            return Err(Error::param(format!("stimulus {:?} leaves the frame", a.as_array())));
        }
        for b in &boxes[i + 1..] {
            if a.intersection_area(b) > 0 {
                return Err(Error::param(format!(
                    "stimuli {:?} and {:?} overlap",
                    a.as_array(),
                    b.as_array()
                )));
            }
        }
    }
    for o in &layout.objects {
        if !o.bbox.within(w as u32, h as u32) {
            return Err(Error::param(format!("object {:?} leaves the frame", o.bbox.as_array())));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..w * h * 3)
        .map(|_| BACKGROUND + rng.gen_range(-BACKGROUND_NOISE..=BACKGROUND_NOISE))
        .collect();
    let mut frame = Tensor::new(vec![h, w, 3], data)?;
    for o in &layout.objects {
        fill_rect(&mut frame, &o.bbox, o.kind.rgb());
    }
    for (s, b) in layout.stimuli.iter().zip(&boxes) {
        fill_rect(&mut frame, b, s.kind.color().rgb());
    }

    let fingertip_boxes = if gesture == GestureLabel::POINT || gesture == GestureLabel::DRAG {
        boxes.clone()
    } else {
        Vec::new()
    };
    let hand_box = boxes.iter().copied().reduce(|a, b| a.union_hull(&b));
    let object_boxes: Vec<LabeledObject> = layout
        .objects
        .iter()
        .map(|o| LabeledObject {
            bbox: o.bbox,
            category: o.kind.name().to_string(),
        })
        .collect();
    let captions = match (gesture == GestureLabel::LOUPE, layout.objects.first()) {
        (true, Some(o)) => vec![
            format!("a hand is pointing to a {} {} on a desk", o.kind.colour_word(), o.kind.name()),
            format!("a {} {} on a desk", o.kind.colour_word(), o.kind.name()),
        ],
        _ => Vec::new(),
    };
    let pinch_tips = if gesture == GestureLabel::PINCH {
        let centre = |k: StimulusKind| {
            let s = layout.stimuli.iter().find(|s| s.kind == k).expect("pinch pair present");
            let half = s.size as f64 / 2.0;
            [s.x as f64 + half, s.y as f64 + half]
        };
        Some([centre(StimulusKind::PinchThumb), centre(StimulusKind::PinchIndex)])
    } else {
        None
    };
    let record = SampleRecord {
        frame: FrameSource::Synthetic {
            seed,
            layout: layout.clone(),
        },
        gesture: LabelRegistry::standard().name(gesture)?.to_string(),
        hand_box,
        fingertip_boxes,
        object_boxes,
        captions,
        sequence_id: None,
        frame_index: None,
        zoom_label: (gesture == GestureLabel::PINCH).then_some(ZoomAction::NoZoom),
        pinch_tips,
    };
    Ok((frame, record))
}

/// Stimulus side for a frame extent.
pub fn stimulus_size(extent: (usize, usize)) -> u32 {
    ((extent.0.min(extent.1) as f64 * 0.11).round() as u32).max(3)
}

/// Random single-gesture layout. Pinch layouts are static pairs; use
/// [`generate_pinch_sequence`] for motion.
pub fn random_layout(gesture: GestureLabel, extent: (usize, usize), rng: &mut impl Rng) -> Result<SceneLayout> {
    let (w, h) = (extent.0 as u32, extent.1 as u32);
    let size = stimulus_size(extent);
    let margin = (w.min(h) / 10).max(1);
    if w < 2 * margin + 3 * size || h < 2 * margin + 3 * size {
        return Err(Error::param(format!("extent {w}x{h} too small for synthetic scenes")));
    }
    let pos = |rng: &mut dyn rand::RngCore, lim: u32| rng.gen_range(margin..=lim - margin - size);
    let mut layout = SceneLayout::empty(extent);
    let kind = match gesture {
        GestureLabel::NONE => None,
        GestureLabel::POINT => Some(StimulusKind::Point),
        GestureLabel::DRAG => Some(StimulusKind::Drag),
        GestureLabel::LOUPE => Some(StimulusKind::Loupe),
        GestureLabel::OTHER => Some(StimulusKind::Other),
        GestureLabel::PINCH => {
            let x = rng.gen_range(margin..=w - margin - 3 * size);
            let y = pos(rng, h);
            layout.stimuli.push(Stimulus {
                kind: StimulusKind::PinchThumb,
                x,
                y,
                size,
            });
            layout.stimuli.push(Stimulus {
                kind: StimulusKind::PinchIndex,
                x: x + 2 * size,
                y,
                size,
            });
            None
        }
        other => return Err(Error::UnknownLabel(format!("{other:?}"))),
    };
    if let Some(kind) = kind {
        let (x, y) = (pos(rng, w), pos(rng, h));
        layout.stimuli.push(Stimulus { kind, x, y, size });
        if kind == StimulusKind::Loupe {
            // the object sits just below the fingertip, clipped to the frame
            let ox0 = x.saturating_sub(size / 2);
            let oy0 = (y + size).min(h - 2);
            let object = BBox::new(ox0, oy0, (x + size + size / 2).min(w), (oy0 + size).min(h))?;
            let okind = ObjectKind::ALL[rng.gen_range(0..ObjectKind::ALL.len())];
            layout.objects.push(ObjectSpec {
                kind: okind,
                bbox: object,
            });
        }
    }
    Ok(layout)
}

/// Parameters of a synthetic pinch sequence: two tips around a centre whose
/// distance changes by `speed` pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PinchSequenceSpec {
    pub extent: (usize, usize),
    pub frames: usize,
    pub action: ZoomAction,
    pub start_distance: f64,
    pub speed: f64,
    pub centre: (f64, f64),
    pub angle: f64,
    pub size: u32,
    pub sequence_id: u64,
    pub seed: u64,
}

impl PinchSequenceSpec {
    /// Random motion with a per-frame distance change between 2% and 3.5% of
    /// the extent (zero for `NoZoom`).
    pub fn random(action: ZoomAction, extent: (usize, usize), frames: usize, sequence_id: u64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let e = extent.0.min(extent.1) as f64;
        let size = stimulus_size(extent);
        let speed_mag = rng.gen_range(0.02..0.035) * e;
        let travel = speed_mag * frames.saturating_sub(1) as f64;
        let d_min = 1.6 * size as f64 + 1.0;
        let (start, speed) = match action {
            ZoomAction::ZoomIn => (d_min, speed_mag),
            ZoomAction::ZoomOut => (d_min + travel, -speed_mag),
            ZoomAction::NoZoom => (d_min + rng.gen_range(0.0..=travel), 0.0),
        };
        let d_max = d_min + travel;
        let reach = d_max / 2.0 + size as f64;
        let cx = rng.gen_range(reach..=(extent.0 as f64 - reach).max(reach));
        let cy = rng.gen_range(reach..=(extent.1 as f64 - reach).max(reach));
        Self {
            extent,
            frames,
            action,
            start_distance: start,
            speed,
            centre: (cx, cy),
            angle: rng.gen_range(-0.6..0.6),
            size,
            sequence_id,
            seed,
        }
    }
}

/// Renders every frame of a pinch sequence; all records carry the
/// sequence's zoom label.
pub fn generate_pinch_sequence(spec: &PinchSequenceSpec) -> Result<Vec<(Tensor, SampleRecord)>> {
    let half = spec.size as f64 / 2.0;
    let (ca, sa) = (spec.angle.cos(), spec.angle.sin());
    (0..spec.frames)
        .map(|t| {
            let dist = spec.start_distance + spec.speed * t as f64;
            let tip = |sign: f64| {
                let cx = spec.centre.0 + sign * ca * dist / 2.0;
                let cy = spec.centre.1 + sign * sa * dist / 2.0;
                ((cx - half).round().max(0.0) as u32, (cy - half).round().max(0.0) as u32)
            };
            let (tx, ty) = tip(-1.0);
            let (ix, iy) = tip(1.0);
            let layout = SceneLayout {
                extent: spec.extent,
                stimuli: vec![
                    Stimulus {
                        kind: StimulusKind::PinchThumb,
                        x: tx,
                        y: ty,
                        size: spec.size,
                    },
                    Stimulus {
                        kind: StimulusKind::PinchIndex,
                        x: ix,
                        y: iy,
                        size: spec.size,
                    },
                ],
                objects: Vec::new(),
            };
            let (frame, mut rec) = generate_synthetic_scene(&layout, spec.seed.wrapping_add(t as u64))?;
            rec.sequence_id = Some(spec.sequence_id);
            rec.frame_index = Some(t as u32);
            rec.zoom_label = Some(spec.action);
            Ok((frame, rec))
        })
        .collect()
}

/// `(current, past)` frame index pairs for pinch training: every frame with
/// a full lag, the lag drawn from `d - 1 ..= d + 1` when `vary` is set.
pub fn pinch_pairs(n_frames: usize, d: usize, vary: bool, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for t in 0..n_frames {
        let lag = if vary { rng.gen_range(d.saturating_sub(1).max(1)..=d + 1) } else { d };
        if t >= lag {
            out.push((t, t - lag));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split of record indices. Records sharing a sequence id move
/// together; the class of a sequence is that of its first record.
pub fn split(records: &[SampleRecord], spec: &SplitSpec) -> Result<Split> {
    let keys: Vec<(String, Option<u64>)> = records
        .iter()
        .map(|r| (r.gesture.clone(), r.sequence_id))
        .collect();
    split_keys(&keys, spec)
}

pub fn split_keys<C: Ord + Clone + std::fmt::Debug>(keys: &[(C, Option<u64>)], spec: &SplitSpec) -> Result<Split> {
    if keys.is_empty() {
        return Err(Error::Empty("records".into()));
    }
    let fr = [spec.train, spec.val, spec.test];
    if fr.iter().any(|f| !(*f >= 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!("split fractions {fr:?} must be non-negative and sum to 1")));
    }
    // units: whole sequences or single records, grouped by class
    let mut units: BTreeMap<C, Vec<Vec<usize>>> = BTreeMap::new();
    let mut seq_unit: BTreeMap<u64, (C, usize)> = BTreeMap::new();
    for (i, (class, seq)) in keys.iter().enumerate() {
        match seq {
            Some(id) => {
                if let Some((c, u)) = seq_unit.get(id) {
                    units.get_mut(c).expect("class exists")[*u].push(i);
                } else {
                    let list = units.entry(class.clone()).or_default();
                    seq_unit.insert(*id, (class.clone(), list.len()));
                    list.push(vec![i]);
                }
            }
            None => units.entry(class.clone()).or_default().push(vec![i]),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Split::default();
    let active = fr.iter().filter(|f| **f > 0.0).count();
    for (class, mut list) in units {
        list.shuffle(&mut rng);
        let n = list.len();
        if n < active {
            log::warn!("class {class:?} has {n} unit(s), fewer than the splits; all go to train");
            out.train.extend(list.into_iter().flatten());
            continue;
        }
        let n_val = (n as f64 * spec.val).round() as usize;
        let n_test = (n as f64 * spec.test).round() as usize;
        let n_val = if spec.val > 0.0 { n_val.max(1) } else { 0 };
        let n_test = if spec.test > 0.0 { n_test.max(1) } else { 0 };
        let n_train = n.saturating_sub(n_val + n_test);
        for (k, unit) in list.into_iter().enumerate() {
            let dest = if k < n_train {
                &mut out.train
            } else if k < n_train + n_val {
                &mut out.val
            } else {
                &mut out.test
            };
            dest.extend(unit);
        }
    }
    for part in [&mut out.train, &mut out.val, &mut out.test] {
        part.sort_unstable();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub copies: usize,
    pub flip_probability: f64,
    /// Fraction of the extent.
    pub shift: f64,
    /// Relative scale change.
    pub zoom: f64,
    pub rotation_deg: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            copies: 10,
            flip_probability: 0.5,
            shift: 0.1,
            zoom: 0.1,
            rotation_deg: 5.0,
        }
    }
}

/// A geometric transform about the frame centre, in continuous pixel
/// coordinates where pixel `(x, y)` covers `[x, x + 1) x [y, y + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    FlipHorizontal,
    Shift { dx: f64, dy: f64 },
    Zoom { factor: f64 },
    Rotate { degrees: f64 },
}

impl Transform {
    fn forward(&self, p: (f64, f64), extent: (usize, usize)) -> (f64, f64) {
        let (cx, cy) = (extent.0 as f64 / 2.0, extent.1 as f64 / 2.0);
        match *self {
            Transform::FlipHorizontal => (extent.0 as f64 - p.0, p.1),
            Transform::Shift { dx, dy } => (p.0 + dx, p.1 + dy),
            Transform::Zoom { factor } => (cx + (p.0 - cx) * factor, cy + (p.1 - cy) * factor),
            Transform::Rotate { degrees } => {
                let (s, c) = degrees.to_radians().sin_cos();
                let (x, y) = (p.0 - cx, p.1 - cy);
                (cx + c * x - s * y, cy + s * x + c * y)
            }
        }
    }

    fn inverse(&self) -> Transform {
        match *self {
            Transform::FlipHorizontal => Transform::FlipHorizontal,
            Transform::Shift { dx, dy } => Transform::Shift { dx: -dx, dy: -dy },
            Transform::Zoom { factor } => Transform::Zoom { factor: 1.0 / factor },
            Transform::Rotate { degrees } => Transform::Rotate { degrees: -degrees },
        }
    }

    /// One transform: a flip with probability `flip_probability`, otherwise
    /// shift, zoom or rotation with equal odds, magnitudes uniform in range.
    pub fn sample(spec: &AugmentSpec, extent: (usize, usize), rng: &mut impl Rng) -> Transform {
        if rng.gen_bool(spec.flip_probability.clamp(0.0, 1.0)) {
            return Transform::FlipHorizontal;
        }
        let sym = |rng: &mut dyn rand::RngCore, r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        match rng.gen_range(0..3) {
            0 => Transform::Shift {
                dx: sym(rng, spec.shift) * extent.0 as f64,
                dy: sym(rng, spec.shift) * extent.1 as f64,
            },
            1 => Transform::Zoom {
                factor: 1.0 + sym(rng, spec.zoom),
            },
            _ => Transform::Rotate {
                degrees: sym(rng, spec.rotation_deg),
            },
        }
    }

    /// Nearest-neighbour resampling; samples outside the source repeat the
    /// nearest edge pixel.
    pub fn apply_frame(&self, frame: &Tensor) -> Result<Tensor> {
        let dims = frame.dims();
        if dims.len() != 3 {
            return Err(Error::shape(format!("frame must be [h, w, c], got {dims:?}")));
        }
        let (h, w, ch) = (dims[0], dims[1], dims[2]);
        let inv = self.inverse();
        let src = frame.data();
        let mut out = vec![0.0f32; src.len()];
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = inv.forward((x as f64 + 0.5, y as f64 + 0.5), (w, h));
                let sx = (sx.floor().max(0.0) as usize).min(w - 1);
                let sy = (sy.floor().max(0.0) as usize).min(h - 1);
                let (o, i) = ((y * w + x) * ch, (sy * w + sx) * ch);
                out[o..o + ch].copy_from_slice(&src[i..i + ch]);
            }
        }
        Tensor::new(dims.to_vec(), out)
    }

    /// Axis-aligned hull of the mapped corners, clipped to the frame; `None`
    /// when less than a quarter of the original area survives.
    pub fn apply_box(&self, b: &BBox, extent: (usize, usize)) -> Option<BBox> {
        const SNAP: f64 = 1e-9;
        let corners = [
            (b.x0() as f64, b.y0() as f64),
            (b.x1() as f64, b.y0() as f64),
            (b.x0() as f64, b.y1() as f64),
            (b.x1() as f64, b.y1() as f64),
        ]
        .map(|p| self.forward(p, extent));
        let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| {
            corners.iter().map(sel).fold(init, f)
        };
        let x0 = (fold(f64::min, f64::INFINITY, |p| p.0) + SNAP).floor();
        let y0 = (fold(f64::min, f64::INFINITY, |p| p.1) + SNAP).floor();
        let x1 = (fold(f64::max, f64::NEG_INFINITY, |p| p.0) - SNAP).ceil();
        let y1 = (fold(f64::max, f64::NEG_INFINITY, |p| p.1) - SNAP).ceil();
        let clipped = BBox::clipped(x0 as i64, y0 as i64, x1 as i64, y1 as i64, extent.0 as u32, extent.1 as u32)?;
        (clipped.area() * 4 >= b.area()).then_some(clipped)
    }

    pub fn apply_record(&self, record: &SampleRecord, extent: (usize, usize)) -> SampleRecord {
        let mut r = record.clone();
        r.hand_box = record.hand_box.and_then(|b| self.apply_box(&b, extent));
        r.fingertip_boxes = record
            .fingertip_boxes
            .iter()
            .filter_map(|b| self.apply_box(b, extent))
            .collect();
        r.object_boxes = record
            .object_boxes
            .iter()
            .filter_map(|o| {
                self.apply_box(&o.bbox, extent).map(|bbox| LabeledObject {
                    bbox,
                    category: o.category.clone(),
                })
            })
            .collect();
        r.pinch_tips = record.pinch_tips.map(|tips| {
            tips.map(|[x, y]| {
                let (a, b) = self.forward((x, y), extent);
                [a, b]
            })
        });
        r
    }
}

fn frame_extent(frame: &Tensor) -> Result<(usize, usize)> {
    match frame.dims() {
        [h, w, _] => Ok((*w, *h)),
        d => Err(Error::shape(format!("frame must be [h, w, c], got {d:?}"))),
    }
}

/// Draws a transform whose result keeps every fingertip box, retrying a few
/// times before falling back to the identity shift.
fn sample_keeping_tips(
    spec: &AugmentSpec,
    extent: (usize, usize),
    records: &[&SampleRecord],
    rng: &mut impl Rng,
) -> Transform {
    for _ in 0..16 {
        let t = Transform::sample(spec, extent, rng);
        let keeps = records
            .iter()
            .all(|r| r.fingertip_boxes.iter().all(|b| t.apply_box(b, extent).is_some()));
        if keeps {
            return t;
        }
    }
    Transform::Shift { dx: 0.0, dy: 0.0 }
}

/// `spec.copies` augmented copies, each under one random transform.
pub fn augment(frame: &Tensor, record: &SampleRecord, spec: &AugmentSpec, seed: u64) -> Result<Vec<(Tensor, SampleRecord)>> {
    let extent = frame_extent(frame)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..spec.copies)
        .map(|_| {
            let t = sample_keeping_tips(spec, extent, &[record], &mut rng);
            Ok((t.apply_frame(frame)?, t.apply_record(record, extent)))
        })
        .collect()
}

pub type FramePair = ((Tensor, SampleRecord), (Tensor, SampleRecord));

/// Augments a (current, past) pinch pair with one shared transform per copy.
pub fn augment_pair(
    current: (&Tensor, &SampleRecord),
    past: (&Tensor, &SampleRecord),
    spec: &AugmentSpec,
    seed: u64,
) -> Result<Vec<FramePair>> {
    let extent = frame_extent(current.0)?;
    if frame_extent(past.0)? != extent {
        return Err(Error::shape("pinch pair frames differ in size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..spec.copies)
        .map(|_| {
            let t = sample_keeping_tips(spec, extent, &[current.1, past.1], &mut rng);
            Ok((
                (t.apply_frame(current.0)?, t.apply_record(current.1, extent)),
                (t.apply_frame(past.0)?, t.apply_record(past.1, extent)),
            ))
        })
        .collect()
}

/// Reads a JSON-lines manifest; blank lines are skipped.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in records {
        serde_json::to_writer(&mut file, r)?;
        file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    file.flush().map_err(|e| Error::io(path, e))
}

/// Loads or regenerates the frame of a record. File paths resolve against
/// `base` (the manifest's directory).
pub fn load_frame(record: &SampleRecord, base: &Path) -> Result<Tensor> {
    match &record.frame {
        FrameSource::Synthetic { seed, layout } => Ok(generate_synthetic_scene(layout, *seed)?.0),
        FrameSource::File { path } => {
            let full: PathBuf = base.join(path);
            match full.extension().and_then(|e| e.to_str()) {
                Some("ppm") => read_ppm(&full),
                _ => atn::load_tensor(&full),
            }
        }
    }
}

/// Binary PPM (P6, maxval 255) into an `[h, w, 3]` tensor in `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("truncated PPM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::format("PPM header"))?);
    }
    if fields[0] != "P6" {
        return Err(Error::BadMagic);
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format(format!("PPM field `{s}`")));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(Error::format(format!("PPM maxval {max} unsupported")));
    }
    pos += 1;
    let n = w * h * 3;
    let body = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::format("truncated PPM payload"))?;
    Tensor::new(vec![h, w, 3], body.iter().map(|&b| b as f32 / 255.0).collect())
}

pub fn encode_ppm(frame: &Tensor) -> Result<Vec<u8>> {
    let (w, h) = frame_extent(frame)?;
    if frame.dims()[2] != 3 {
        return Err(Error::shape("PPM frames need three channels"));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(frame.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn write_ppm(path: impl AsRef<Path>, frame: &Tensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(frame)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn point_layout() -> SceneLayout {
        SceneLayout {
            extent: (224, 224),
            stimuli: vec![Stimulus {
                kind: StimulusKind::Point,
                x: 100,
                y: 80,
                size: 24,
            }],
            objects: vec![],
        }
    }

    #[test]
    fn point_scene_ground_truth() {
        let (frame, rec) = generate_synthetic_scene(&point_layout(), 7).unwrap();
        assert_eq!(frame.dims(), &[224, 224, 3]);
        assert_eq!(rec.fingertip_boxes, vec![BBox::new(100, 80, 124, 104).unwrap()]);
        assert_eq!(rec.gesture, "point");
        rec.validate(&LabelRegistry::standard(), (224, 224)).unwrap();
        let (again, _) = generate_synthetic_scene(&point_layout(), 7).unwrap();
        assert_eq!(frame, again);
    }

    #[test]
    fn empty_layout_is_none() {
        let (_, rec) = generate_synthetic_scene(&SceneLayout::empty((64, 64)), 1).unwrap();
        assert_eq!(rec.gesture, "none");
        assert!(rec.fingertip_boxes.is_empty() && rec.hand_box.is_none());
    }

    #[test]
    fn overlapping_stimuli_rejected() {
        let mut l = point_layout();
        l.stimuli.push(Stimulus {
            kind: StimulusKind::Point,
            x: 110,
            y: 90,
            size: 24,
        });
        assert!(generate_synthetic_scene(&l, 0).is_err());
        let mut mixed = point_layout();
        mixed.stimuli.push(Stimulus {
            kind: StimulusKind::Drag,
            x: 10,
            y: 10,
            size: 8,
        });
        assert!(generate_synthetic_scene(&mixed, 0).is_err());
    }

    #[test]
    fn random_layouts_are_valid() {
        let reg = LabelRegistry::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for g in 0..6 {
            for _ in 0..20 {
                let l = random_layout(GestureLabel::from_index(g), (96, 96), &mut rng).unwrap();
                let (_, rec) = generate_synthetic_scene(&l, 0).unwrap();
                assert_eq!(rec.label(&reg).unwrap().index(), g);
                rec.validate(&reg, (96, 96)).unwrap();
            }
        }
    }

    #[test]
    fn pinch_sequences_move_as_labelled() {
        for (i, action) in ZoomAction::ALL.into_iter().enumerate() {
            let spec = PinchSequenceSpec::random(action, (64, 64), 10, i as u64, 11 + i as u64);
            let seq = generate_pinch_sequence(&spec).unwrap();
            assert_eq!(seq.len(), 10);
            let dist = |r: &SampleRecord| {
                let [a, b] = r.pinch_tips.unwrap();
                (a[0] - b[0]).hypot(a[1] - b[1])
            };
            let delta = dist(&seq[9].1) - dist(&seq[4].1);
            match action {
                ZoomAction::ZoomIn => assert!(delta > 3.0, "{delta}"),
                ZoomAction::ZoomOut => assert!(delta < -3.0, "{delta}"),
                ZoomAction::NoZoom => assert!(delta.abs() <= 3.0, "{delta}"),
            }
            for (_, r) in &seq {
                assert_eq!(r.zoom_label, Some(action));
                assert_eq!(r.sequence_id, Some(i as u64));
                r.validate(&LabelRegistry::standard(), (64, 64)).unwrap();
            }
        }
    }

    #[test]
    fn pair_lags() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(pinch_pairs(7, 5, false, &mut rng), vec![(5, 0), (6, 1)]);
        for (t, p) in pinch_pairs(40, 5, true, &mut rng) {
            assert!((4..=6).contains(&(t - p)));
        }
    }

    fn keyed(n_per_class: usize, classes: usize) -> Vec<(usize, Option<u64>)> {
        (0..classes).flat_map(|c| (0..n_per_class).map(move |_| (c, None))).collect()
    }

    #[test]
    fn stratified_counts() {
        let keys = keyed(10, 10);
        let s = split_keys(&keys, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        for c in 0..10 {
            let count = |v: &[usize]| v.iter().filter(|&&i| keys[i].0 == c).count();
            assert_eq!((count(&s.train), count(&s.val), count(&s.test)), (8, 1, 1));
        }
        assert_eq!(s, split_keys(&keys, &SplitSpec::default()).unwrap());
    }

    #[test]
    fn sequences_stay_together_and_small_classes_train() {
        let mut keys: Vec<(usize, Option<u64>)> = Vec::new();
        for seq in 0..10u64 {
            for _ in 0..6 {
                keys.push((3, Some(seq)));
            }
        }
        keys.push((1, None));
        let s = split_keys(&keys, &SplitSpec::default()).unwrap();
        for part in [&s.train, &s.val, &s.test] {
            for &i in part.iter() {
                let seq = keys[i].1;
                let together = keys.iter().enumerate().filter(|(_, k)| k.1 == seq && seq.is_some());
                for (j, _) in together {
                    assert!(part.contains(&j));
                }
            }
        }
        assert!(s.train.contains(&60));
        assert!(split_keys::<usize>(&[], &SplitSpec::default()).is_err());
    }

    #[test]
    fn flip_example_and_identity_shift() {
        let b = BBox::new(10, 20, 30, 40).unwrap();
        assert_eq!(
            Transform::FlipHorizontal.apply_box(&b, (224, 224)),
            Some(BBox::new(194, 20, 214, 40).unwrap())
        );
        let (frame, rec) = generate_synthetic_scene(&point_layout(), 2).unwrap();
        let id = Transform::Shift { dx: 0.0, dy: 0.0 };
        assert_eq!(id.apply_frame(&frame).unwrap(), frame);
        assert_eq!(id.apply_record(&rec, (224, 224)), rec);
        let copies = augment(&frame, &rec, &AugmentSpec::default(), 5).unwrap();
        assert_eq!(copies.len(), 10);
    }

    #[test]
    fn flipped_frame_moves_stimulus() {
        let (frame, rec) = generate_synthetic_scene(&point_layout(), 2).unwrap();
        let t = Transform::FlipHorizontal;
        let f = t.apply_frame(&frame).unwrap();
        let r = t.apply_record(&rec, (224, 224));
        let b = r.fingertip_boxes[0];
        let px = |x: u32, y: u32| &f.data()[((y as usize) * 224 + x as usize) * 3..][..3];
        assert_eq!(px(b.x0(), b.y0()), &StimulusColor::Red.rgb());
        assert_eq!(px(b.x1() - 1, b.y1() - 1), &StimulusColor::Red.rgb());
        assert_eq!(t.apply_frame(&f).unwrap(), frame);
    }

    #[test]
    fn manifest_and_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (frame, rec) = generate_synthetic_scene(&point_layout(), 2).unwrap();
        let path = dir.path().join("m.jsonl");
        write_manifest(&path, &[rec.clone(), rec.clone()]).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, vec![rec.clone(), rec.clone()]);
        assert_eq!(load_frame(&back[0], dir.path()).unwrap(), frame);

        let ppm = dir.path().join("f.ppm");
        write_ppm(&ppm, &frame).unwrap();
        let loaded = read_ppm(&ppm).unwrap();
        assert_eq!(loaded.dims(), frame.dims());
        for (a, b) in loaded.data().iter().zip(frame.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        assert!(matches!(decode_ppm(b"P3\n1 1\n255\n"), Err(Error::BadMagic)));
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00").is_err());
    }

    proptest! {
        #[test]
        fn augmented_boxes_stay_valid(seed in 0u64..500, x in 0u32..200, y in 0u32..200, s in 4u32..24) {
            let b = BBox::new(x, y, (x + s).min(224), (y + s).min(224)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = Transform::sample(&AugmentSpec::default(), (224, 224), &mut rng);
            if let Some(out) = t.apply_box(&b, (224, 224)) {
                prop_assert!(out.within(224, 224));
            }
            let twice = Transform::FlipHorizontal.apply_box(&Transform::FlipHorizontal.apply_box(&b, (224, 224)).unwrap(), (224, 224));
            prop_assert_eq!(twice, Some(b));
        }
    }
}
