//! Per-class filter selection and fingertip localization from averaged
//! activation maps.
//!
//! Every map goes through the same pipeline: min-max rescale to `[0, 1]`,
//! bilinear resize to the frame, threshold `> beta`, square dilation of size
//! `s`, then 8-connected blobs. Selection scores each filter by the mean,
//! over the class images, of its blobs' best IoU with the ground truth;
//! localization averages the rescaled maps of the kept filters and runs the
//! remaining steps on the average. Nothing here needs gradients.

use std::fmt::Write as _;

use crate::backbone::{ActivationStack, Backbone};
use crate::error::{Error, Result};
use crate::geometry::{match_iou, BBox};
use crate::labels::{GestureLabel, LabelRegistry};
use crate::metrics::{detection_f1, DetectionRecord, Prf1};
use crate::morphology::{dilate, labelled_blobs, resize_plane, BinaryMask};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    /// Keep filters whose mean IoU exceeds the threshold.
    Alpha(f64),
    /// Keep the `n` best-scoring filters.
    TopN(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FSParams {
    pub layer_name: String,
    pub selection: Selection,
    pub beta: f64,
    pub s: usize,
    pub min_area: usize,
}

impl FSParams {
    pub fn new(layer_name: impl Into<String>) -> Self {
        Self {
            layer_name: layer_name.into(),
            selection: Selection::TopN(4),
            beta: 0.92,
            s: 7,
            min_area: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::param(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if self.s == 0 || self.s % 2 == 0 {
            return Err(Error::param(format!("s must be odd and positive, got {}", self.s)));
        }
        match self.selection {
            Selection::Alpha(a) if !(0.0..=1.0).contains(&a) => {
                Err(Error::param(format!("alpha must lie in [0, 1], got {a}")))
            }
            Selection::TopN(0) => Err(Error::param("top_n must be positive")),
            _ => Ok(()),
        }
    }
}

/// Min-max rescale to `[0, 1]`; a constant map becomes all zeros.
pub fn rescale(map: &[f32]) -> Vec<f64> {
    let (lo, hi) = map
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; map.len()];
    }
    map.iter().map(|&v| (v as f64 - lo) / span).collect()
}

/// Threshold, dilate and blob a `[0, 1]` map already at frame resolution.
fn boxes_at_extent(heat: &[f64], extent: (usize, usize), beta: f64, s: usize, min_area: usize) -> Result<Vec<BBox>> {
    let mask = BinaryMask::from_threshold(heat, extent.0, extent.1, beta)?;
    let mask = dilate(&mask, s)?;
    Ok(labelled_blobs(&mask, min_area).into_iter().map(|b| b.bbox).collect())
}

fn check_extent(extent: (usize, usize)) -> Result<()> {
    if extent.0 == 0 || extent.1 == 0 {
        return Err(Error::param(format!("extent {}x{}", extent.0, extent.1)));
    }
    Ok(())
}

/// Prediction set of a single activation map.
pub fn filter_predictions(
    map: &Tensor,
    extent: (usize, usize),
    beta: f64,
    s: usize,
    min_area: usize,
) -> Result<Vec<BBox>> {
    let (h, w) = map.plane_dims()?;
    check_extent(extent)?;
    if !map.is_finite() {
        return Err(Error::param("activation map holds non-finite values"));
    }
    plane_predictions(map.data(), (w, h), extent, beta, s, min_area)
}

fn plane_predictions(
    plane: &[f32],
    map_extent: (usize, usize),
    extent: (usize, usize),
    beta: f64,
    s: usize,
    min_area: usize,
) -> Result<Vec<BBox>> {
    let r = rescale(plane);
    let up = resize_plane(&r, map_extent.0, map_extent.1, extent.0, extent.1);
    boxes_at_extent(&up, extent, beta, s, min_area)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSet {
    pub class_label: GestureLabel,
    pub layer_name: String,
    /// `(filter index, mean IoU)`, best first.
    pub entries: Vec<(usize, f64)>,
}

impl FilterSet {
    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Text manifest:
    ///
    /// ```text
    /// class point
    /// layer conv3
    /// 12 1.000000
    /// 40 0.871234
    /// ```
    pub fn to_manifest(&self, registry: &LabelRegistry) -> Result<String> {
        let mut out = String::new();
        let _ = writeln!(out, "class {}", registry.name(self.class_label)?);
        let _ = writeln!(out, "layer {}", self.layer_name);
        for (i, score) in &self.entries {
            let _ = writeln!(out, "{i} {score:.6}");
        }
        Ok(out)
    }

    pub fn from_manifest(text: &str, registry: &LabelRegistry) -> Result<Self> {
        let mut class_label = None;
        let mut layer_name = None;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::format(format!("filter set line {}: `{line}`", n + 1));
            let (head, rest) = line.split_once(char::is_whitespace).ok_or_else(bad)?;
            let rest = rest.trim();
            match head {
                "class" => class_label = Some(registry.by_name(rest)?),
                "layer" => layer_name = Some(rest.to_string()),
                idx => {
                    let idx: usize = idx.parse().map_err(|_| bad())?;
                    let score: f64 = rest.parse().map_err(|_| bad())?;
                    if !(0.0..=1.0).contains(&score) {
                        return Err(bad());
                    }
                    entries.push((idx, score));
                }
            }
        }
        let set = FilterSet {
            class_label: class_label.ok_or_else(|| Error::format("filter set has no class line"))?,
            layer_name: layer_name.ok_or_else(|| Error::format("filter set has no layer line"))?,
            entries,
        };
        let mut seen = std::collections::HashSet::new();
        if !set.entries.iter().all(|(i, _)| seen.insert(*i)) {
            return Err(Error::format("filter set repeats an index"));
        }
        Ok(set)
    }
}

/// One class image: its frame and the class's ground-truth boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub frame: Tensor,
    pub truths: Vec<BBox>,
}

/// Mean IoU score of every filter of the layer over the given images.
pub fn score_filters(stacks: &[ActivationStack], truths: &[Vec<BBox>], params: &FSParams) -> Result<Vec<f64>> {
    params.validate()?;
    if stacks.is_empty() {
        return Err(Error::Empty("class image set".into()));
    }
    if stacks.len() != truths.len() {
        return Err(Error::shape(format!(
            "{} activation stacks for {} truth lists",
            stacks.len(),
            truths.len()
        )));
    }
    let n_filters = stacks[0].n_filters();
    let mut sums = vec![0.0; n_filters];
    for (stack, truth) in stacks.iter().zip(truths) {
        if stack.n_filters() != n_filters {
            return Err(Error::shape("filter count differs between images"));
        }
        if truth.is_empty() {
            return Err(Error::NoGroundTruth);
        }
        for (f, sum) in sums.iter_mut().enumerate() {
            let preds = plane_predictions(
                stack.filter(f),
                stack.map_extent(),
                stack.source_extent(),
                params.beta,
                params.s,
                params.min_area,
            )?;
            *sum += match_iou(&preds, truth)?;
        }
    }
    let n = stacks.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// Applies the selection rule to per-filter scores. Ties keep the lower
/// index.
pub fn select_from_scores(scores: &[f64], selection: Selection) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    match selection {
        Selection::TopN(n) => ranked.truncate(n),
        Selection::Alpha(a) => ranked.retain(|e| e.1 > a),
    }
    ranked
}

pub fn select_filters_from_stacks(
    class_label: GestureLabel,
    stacks: &[ActivationStack],
    truths: &[Vec<BBox>],
    params: &FSParams,
) -> Result<FilterSet> {
    let scores = score_filters(stacks, truths, params)?;
    Ok(FilterSet {
        class_label,
        layer_name: params.layer_name.clone(),
        entries: select_from_scores(&scores, params.selection),
    })
}

fn layer_stack<B: Backbone + ?Sized>(backbone: &B, frame: &Tensor, layer: &str) -> Result<ActivationStack> {
    let out = backbone.forward(frame, &[layer])?;
    out.stack(layer)
        .cloned()
        .ok_or_else(|| Error::UnknownLayer(layer.to_string()))
}

pub fn select_filters<B: Backbone + ?Sized>(
    backbone: &B,
    class_label: GestureLabel,
    images: &[LabeledFrame],
    params: &FSParams,
) -> Result<FilterSet> {
    params.validate()?;
    if images.is_empty() {
        return Err(Error::Empty("class image set".into()));
    }
    if !backbone.layer_names().iter().any(|l| *l == params.layer_name) {
        return Err(Error::UnknownLayer(params.layer_name.clone()));
    }
    let stacks = images
        .iter()
        .map(|img| layer_stack(backbone, &img.frame, &params.layer_name))
        .collect::<Result<Vec<_>>>()?;
    let truths: Vec<Vec<BBox>> = images.iter().map(|i| i.truths.clone()).collect();
    select_filters_from_stacks(class_label, &stacks, &truths, params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub boxes: Vec<BBox>,
    /// Mean heat inside each box, used to rank boxes.
    pub scores: Vec<f64>,
    /// Averaged rescaled activation at map resolution, `[h', w']`.
    pub heat: Tensor,
}

/// Mean of the rescaled maps of the given filters, at map resolution.
pub fn averaged_heat(stack: &ActivationStack, filters: &[usize]) -> Result<Vec<f64>> {
    if filters.is_empty() {
        return Err(Error::NoFilters);
    }
    let (w, h) = stack.map_extent();
    let mut heat = vec![0.0; w * h];
    for &f in filters {
        if f >= stack.n_filters() {
            return Err(Error::param(format!(
                "filter {f} out of range for {} filters",
                stack.n_filters()
            )));
        }
        for (acc, v) in heat.iter_mut().zip(rescale(stack.filter(f))) {
            *acc += v;
        }
    }
    let k = filters.len() as f64;
    heat.iter_mut().for_each(|v| *v /= k);
    Ok(heat)
}

/// Localization on an already computed activation stack.
pub fn localize_stack(stack: &ActivationStack, fset: &FilterSet, params: &FSParams) -> Result<LocalizationResult> {
    params.validate()?;
    if stack.layer_name() != fset.layer_name {
        return Err(Error::UnknownLayer(fset.layer_name.clone()));
    }
    let heat = averaged_heat(stack, &fset.indices())?;
    let (w, h) = stack.map_extent();
    let extent = stack.source_extent();
    let up = resize_plane(&heat, w, h, extent.0, extent.1);
    let boxes = boxes_at_extent(&up, extent, params.beta, params.s, params.min_area)?;
    let scores = boxes
        .iter()
        .map(|b| {
            let mut sum = 0.0;
            for y in b.y0() as usize..b.y1() as usize {
                sum += up[y * extent.0 + b.x0() as usize..y * extent.0 + b.x1() as usize]
                    .iter()
                    .sum::<f64>();
            }
            sum / b.area() as f64
        })
        .collect();
    Ok(LocalizationResult {
        boxes,
        scores,
        heat: Tensor::new(vec![h, w], heat.iter().map(|&v| v as f32).collect())?,
    })
}

pub fn localize<B: Backbone + ?Sized>(
    backbone: &B,
    frame: &Tensor,
    fset: &FilterSet,
    params: &FSParams,
) -> Result<LocalizationResult> {
    if fset.is_empty() {
        return Err(Error::NoFilters);
    }
    let stack = layer_stack(backbone, frame, &fset.layer_name)?;
    localize_stack(&stack, fset, params)
}

/// One point of a parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub layer_name: String,
    pub top_n: usize,
    pub beta: f64,
    pub s: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub filters: Vec<usize>,
    pub score: Prf1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Row with the highest F1 (first on ties).
    pub best: usize,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,top_n,beta,s,precision,recall,f1,filters,best\n");
        for (i, r) in self.rows.iter().enumerate() {
            let filters: Vec<String> = r.filters.iter().map(ToString::to_string).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6},{},{}",
                r.point.layer_name,
                r.point.top_n,
                r.point.beta,
                r.point.s,
                r.score.precision,
                r.score.recall,
                r.score.f1,
                filters.join(" "),
                (i == self.best) as u8
            );
        }
        out
    }
}

/// Cartesian grid of sweep points.
pub fn grid(layers: &[&str], top_ns: &[usize], betas: &[f64], sizes: &[usize]) -> Vec<SweepPoint> {
    let mut out = Vec::new();
    for l in layers {
        for &n in top_ns {
            for &beta in betas {
                for &s in sizes {
                    out.push(SweepPoint {
                        layer_name: l.to_string(),
                        top_n: n,
                        beta,
                        s,
                    });
                }
            }
        }
    }
    out
}

/// Selects filters on `select_set` and scores localization on `eval_set`
/// with detection F1 at IoU threshold `lambda`, for every grid point.
pub fn sweep<B: Backbone + ?Sized>(
    backbone: &B,
    class_label: GestureLabel,
    select_set: &[LabeledFrame],
    eval_set: &[LabeledFrame],
    points: &[SweepPoint],
    min_area: usize,
    lambda: f64,
) -> Result<SweepTable> {
    if points.is_empty() {
        return Err(Error::Empty("sweep grid".into()));
    }
    if select_set.is_empty() || eval_set.is_empty() {
        return Err(Error::Empty("sweep image set".into()));
    }
    let mut layers: Vec<&str> = points.iter().map(|p| p.layer_name.as_str()).collect();
    layers.sort_unstable();
    layers.dedup();
    let forward_all = |set: &[LabeledFrame]| -> Result<Vec<crate::backbone::ForwardOutput>> {
        set.iter().map(|i| backbone.forward(&i.frame, &layers)).collect()
    };
    let sel_out = forward_all(select_set)?;
    let eval_out = forward_all(eval_set)?;
    let sel_truths: Vec<Vec<BBox>> = select_set.iter().map(|i| i.truths.clone()).collect();
    let pick = |outs: &[crate::backbone::ForwardOutput], layer: &str| -> Result<Vec<ActivationStack>> {
        outs.iter()
            .map(|o| o.stack(layer).cloned().ok_or_else(|| Error::UnknownLayer(layer.to_string())))
            .collect()
    };

    let mut rows = Vec::with_capacity(points.len());
    for p in points {
        let params = FSParams {
            layer_name: p.layer_name.clone(),
            selection: Selection::TopN(p.top_n),
            beta: p.beta,
            s: p.s,
            min_area,
        };
        let sel = pick(&sel_out, &p.layer_name)?;
        let fset = select_filters_from_stacks(class_label, &sel, &sel_truths, &params)?;
        let mut records = Vec::with_capacity(eval_set.len());
        for (stack, img) in pick(&eval_out, &p.layer_name)?.iter().zip(eval_set) {
            let loc = localize_stack(stack, &fset, &params)?;
            records.push(DetectionRecord::unscored(&loc.boxes, &img.truths));
        }
        rows.push(SweepRow {
            point: p.clone(),
            filters: fset.indices(),
            score: detection_f1(&records, lambda),
        });
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.score.f1 > rows[best].score.f1 {
            best = i;
        }
    }
    Ok(SweepTable { rows, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(w: usize, h: usize, hot: &[(usize, usize)]) -> Tensor {
        let mut t = Tensor::zeros(vec![h, w]).unwrap();
        for &(x, y) in hot {
            t.data_mut()[y * w + x] = 1.0;
        }
        t
    }

    #[test]
    fn constant_map_has_no_predictions() {
        let t = Tensor::filled(vec![4, 4], 3.0).unwrap();
        assert!(filter_predictions(&t, (16, 16), 0.5, 3, 1).unwrap().is_empty());
    }

    #[test]
    fn hot_block_maps_to_upsampled_bounds() {
        // 4x4 map, hot 2x2 block at (1..3, 1..3), upsampled to 7x7: source
        // coordinate of output i is i/2, so outputs 2..=4 read 1.0 exactly
        // and 1, 5 read 0.5
        let t = plane(4, 4, &[(1, 1), (2, 1), (1, 2), (2, 2)]);
        let boxes = filter_predictions(&t, (7, 7), 0.6, 1, 1).unwrap();
        assert_eq!(boxes, vec![BBox::new(2, 2, 5, 5).unwrap()]);
        let wide = filter_predictions(&t, (7, 7), 0.4, 1, 1).unwrap();
        assert_eq!(wide, vec![BBox::new(1, 1, 6, 6).unwrap()]);
    }

    #[test]
    fn zero_beta_covers_positive_pixels() {
        let t = plane(4, 4, &[(0, 0), (3, 3)]);
        let boxes = filter_predictions(&t, (4, 4), 0.0, 1, 1).unwrap();
        let covered: u64 = boxes.iter().map(|b| b.area()).sum();
        assert_eq!(covered, 2);
    }

    #[test]
    fn params_validation() {
        let mut p = FSParams::new("conv3");
        p.validate().unwrap();
        p.s = 4;
        assert!(p.validate().is_err());
        p.s = 3;
        p.beta = 1.5;
        assert!(p.validate().is_err());
        p.beta = 0.5;
        p.selection = Selection::TopN(0);
        assert!(p.validate().is_err());
    }

    #[test]
    fn selection_rules() {
        let scores = [0.2, 0.9, 0.9, 0.0, 0.5];
        assert_eq!(select_from_scores(&scores, Selection::TopN(2)), vec![(1, 0.9), (2, 0.9)]);
        assert_eq!(select_from_scores(&scores, Selection::TopN(10)).len(), 5);
        assert_eq!(
            select_from_scores(&scores, Selection::Alpha(0.4)),
            vec![(1, 0.9), (2, 0.9), (4, 0.5)]
        );
        assert!(select_from_scores(&scores, Selection::Alpha(0.95)).is_empty());
    }

    #[test]
    fn manifest_round_trip() {
        let reg = LabelRegistry::standard();
        let set = FilterSet {
            class_label: GestureLabel::POINT,
            layer_name: "conv3".into(),
            entries: vec![(12, 1.0), (3, 0.8712344)],
        };
        let text = set.to_manifest(&reg).unwrap();
        assert!(text.contains("3 0.871234"));
        let back = FilterSet::from_manifest(&text, &reg).unwrap();
        assert_eq!(back.indices(), vec![12, 3]);
        assert_eq!(back.entries[1].1, 0.871234);
        assert!(FilterSet::from_manifest("class point\n1 0.5\n", &reg).is_err());
        assert!(FilterSet::from_manifest("class point\nlayer c\n1 0.5\n1 0.4\n", &reg).is_err());
    }

    #[test]
    fn empty_filter_set_rejected() {
        let stack = ActivationStack::new("conv3", Tensor::zeros(vec![1, 4, 4]).unwrap(), (8, 8)).unwrap();
        let fset = FilterSet {
            class_label: GestureLabel::POINT,
            layer_name: "conv3".into(),
            entries: vec![],
        };
        let err = localize_stack(&stack, &fset, &FSParams::new("conv3")).unwrap_err();
        assert_eq!(err.to_string(), "no filters selected");
    }

    #[test]
    fn duplicate_filters_same_as_one() {
        let mut maps = Tensor::zeros(vec![2, 4, 4]).unwrap();
        maps.data_mut()[5] = 2.0;
        let stack = ActivationStack::new("l", maps, (16, 16)).unwrap();
        let mut params = FSParams::new("l");
        params.s = 3;
        params.beta = 0.5;
        let one = FilterSet {
            class_label: GestureLabel::POINT,
            layer_name: "l".into(),
            entries: vec![(0, 1.0)],
        };
        let twice = FilterSet {
            entries: vec![(0, 1.0), (0, 1.0)],
            ..one.clone()
        };
        assert_eq!(
            localize_stack(&stack, &one, &params).unwrap(),
            localize_stack(&stack, &twice, &params).unwrap()
        );
    }
}
