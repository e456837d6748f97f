//! Shared fixtures and brute-force oracles for the integration tests. The
//! oracles are deliberately naive loops written from the definitions, not
//! from the library code.
#![allow(dead_code)]

use gesture_core::backbone::{ActivationStack, SyntheticBackbone, SyntheticConfig};
use gesture_core::dataset::{generate_synthetic_scene, random_layout, SampleRecord};
use gesture_core::geometry::BBox;
use gesture_core::labels::GestureLabel;
use gesture_core::metrics::{DetectionRecord, ModelPoint};
use gesture_core::tensor::Tensor;
use gesture_core::train::Trainable;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn backbone(extent: usize, widths: [usize; 3], planted: usize, seed: u64) -> SyntheticBackbone {
    SyntheticBackbone::new(SyntheticConfig {
        extent: (extent, extent),
        widths,
        planted_per_color: planted,
        seed,
    })
    .unwrap()
}

/// `n` random scenes of one gesture.
pub fn scenes(label: GestureLabel, n: usize, extent: usize, seed: u64) -> Vec<(Tensor, SampleRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let layout = random_layout(label, (extent, extent), &mut rng).unwrap();
            generate_synthetic_scene(&layout, seed.wrapping_mul(1000).wrapping_add(i as u64)).unwrap()
        })
        .collect()
}

// ---- filter selection, looped ----

pub fn brute_rescale(v: &[f32]) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        let x = x as f64;
        if x < lo {
            lo = x;
        }
        if x > hi {
            hi = x;
        }
    }
    let mut out = Vec::new();
    for &x in v {
        out.push(if hi > lo { (x as f64 - lo) / (hi - lo) } else { 0.0 });
    }
    out
}

/// Corner-aligned bilinear upsampling, one output pixel at a time.
pub fn brute_resize(src: &[f64], w: usize, h: usize, ow: usize, oh: usize) -> Vec<f64> {
    if w == ow && h == oh {
        return src.to_vec();
    }
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        if n_in == 1 || n_out == 1 {
            return (0, 0, 0.0);
        }
        let p = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let a = (p.floor() as usize).min(n_in - 1);
        let b = if a + 1 < n_in { a + 1 } else { n_in - 1 };
        (a, b, p - a as f64)
    };
    let mut out = vec![0.0; ow * oh];
    for oy in 0..oh {
        for ox in 0..ow {
            let (y0, y1, fy) = coord(oy, h, oh);
            let (x0, x1, fx) = coord(ox, w, ow);
            let at = |x: usize, y: usize| src[y * w + x];
            let top = at(x0, y0) + (at(x1, y0) - at(x0, y0)) * fx;
            let bottom = at(x0, y1) + (at(x1, y1) - at(x0, y1)) * fx;
            out[oy * ow + ox] = top + (bottom - top) * fy;
        }
    }
    out
}

/// Threshold then dilate by scanning each pixel's full square neighbourhood.
pub fn brute_mask(heat: &[f64], w: usize, h: usize, beta: f64, s: usize) -> Vec<bool> {
    let r = (s / 2) as i64;
    let mut out = vec![false; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut any = false;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 && heat[(ny * w as i64 + nx) as usize] > beta {
                        any = true;
                    }
                }
            }
            out[(y * w as i64 + x) as usize] = any;
        }
    }
    out
}

/// 8-connected components by repeated label relaxation until stable.
pub fn brute_components(mask: &[bool], w: usize, h: usize, min_area: usize) -> Vec<BBox> {
    let mut label: Vec<usize> = (0..w * h).collect();
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                if !mask[y * w + x] {
                    continue;
                }
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let n = ny as usize * w + nx as usize;
                        if mask[n] && label[n] < label[y * w + x] {
                            label[y * w + x] = label[n];
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut out = Vec::new();
    for root in 0..w * h {
        if !mask[root] || label[root] != root {
            continue;
        }
        let (mut x0, mut y0, mut x1, mut y1, mut n) = (usize::MAX, usize::MAX, 0, 0, 0);
        for p in 0..w * h {
            if mask[p] && label[p] == root {
                let (x, y) = (p % w, p / w);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                n += 1;
            }
        }
        if n >= min_area.max(1) {
            out.push(BBox::new(x0 as u32, y0 as u32, x1 as u32 + 1, y1 as u32 + 1).unwrap());
        }
    }
    out
}

pub fn brute_iou(a: &BBox, b: &BBox) -> f64 {
    let mut inter = 0u64;
    for y in a.y0().max(b.y0())..a.y1().min(b.y1()) {
        for _ in a.x0().max(b.x0())..a.x1().min(b.x1()) {
            let _ = y;
            inter += 1;
        }
    }
    if inter == 0 {
        return 0.0;
    }
    inter as f64 / (a.area() + b.area() - inter) as f64
}

pub fn brute_filter_boxes(plane: &[f32], mw: usize, mh: usize, w: usize, h: usize, beta: f64, s: usize, min_area: usize) -> Vec<BBox> {
    let up = brute_resize(&brute_rescale(plane), mw, mh, w, h);
    brute_components(&brute_mask(&up, w, h, beta, s), w, h, min_area)
}

/// Mean over images of the mean-over-predictions best IoU, per filter.
pub fn brute_scores(stacks: &[ActivationStack], truths: &[Vec<BBox>], beta: f64, s: usize, min_area: usize) -> Vec<f64> {
    let nf = stacks[0].n_filters();
    let mut out = Vec::new();
    for f in 0..nf {
        let mut total = 0.0;
        for (stack, truth) in stacks.iter().zip(truths) {
            let (mw, mh) = stack.map_extent();
            let (w, h) = stack.source_extent();
            let preds = brute_filter_boxes(stack.filter(f), mw, mh, w, h, beta, s, min_area);
            let mut sum = 0.0;
            for p in &preds {
                let mut best = 0.0;
                for t in truth {
                    let v = brute_iou(p, t);
                    if v > best {
                        best = v;
                    }
                }
                sum += best;
            }
            total += if preds.is_empty() { 0.0 } else { sum / preds.len() as f64 };
        }
        out.push(total / stacks.len() as f64);
    }
    out
}

// ---- detection metrics ----

/// TP flags per prediction (input order) under greedy confidence-ordered
/// matching with the VOC rules.
pub fn brute_hits(r: &DetectionRecord, lambda: f64) -> Vec<bool> {
    let n = r.predictions.len();
    let mut done = vec![false; n];
    let mut hit = vec![false; n];
    let mut claimed = vec![false; r.truths.len()];
    for _ in 0..n {
        let mut pick = None;
        for i in 0..n {
            if !done[i] && pick.map_or(true, |p: usize| r.predictions[i].confidence > r.predictions[p].confidence) {
                pick = Some(i);
            }
        }
        let i = pick.unwrap();
        done[i] = true;
        let mut best = (usize::MAX, 0.0);
        for (j, t) in r.truths.iter().enumerate() {
            let v = brute_iou(&r.predictions[i].bbox, t);
            if v > best.1 {
                best = (j, v);
            }
        }
        if best.1 > 0.0 && best.1 >= lambda && !claimed[best.0] {
            claimed[best.0] = true;
            hit[i] = true;
        }
    }
    hit
}

/// AP as the area under the interpolated precision-recall curve, integrated
/// with the midpoint rule on `steps` sub-intervals per recall increment.
/// Assumes distinct confidences across all records.
pub fn brute_ap(records: &[DetectionRecord], lambda: f64, steps: usize) -> f64 {
    let n_truth: usize = records.iter().map(|r| r.truths.len()).sum();
    let mut all: Vec<(f64, bool)> = Vec::new();
    for r in records {
        for (p, h) in r.predictions.iter().zip(brute_hits(r, lambda)) {
            all.push((p.confidence, h));
        }
    }
    // (recall, precision) after each cutoff
    let mut curve = Vec::new();
    for cut in &all {
        let (mut tp, mut k) = (0, 0);
        for other in &all {
            if other.0 >= cut.0 {
                k += 1;
                if other.1 {
                    tp += 1;
                }
            }
        }
        curve.push((tp as f64 / n_truth as f64, tp as f64 / k as f64));
    }
    let cells = n_truth * steps;
    let mut area = 0.0;
    for c in 0..cells {
        let r = (c as f64 + 0.5) / cells as f64;
        let mut p = 0.0f64;
        for &(rr, pp) in &curve {
            if rr >= r {
                p = p.max(pp);
            }
        }
        area += p / cells as f64;
    }
    area
}

// ---- pareto ----

pub fn brute_front(points: &[ModelPoint]) -> Vec<bool> {
    points
        .iter()
        .map(|b| {
            !points.iter().any(|a| {
                a.f1 >= b.f1 && a.params <= b.params && (a.f1 > b.f1 || a.params < b.params)
            })
        })
        .collect()
}

// ---- gradients ----

/// Largest relative error `|a - n| / max(|a| + |n|, floor)` between the
/// analytic gradient and central differences of the training-mode loss.
pub fn gradient_error<M: Trainable>(model: &mut M, batch: &[&M::Sample], h: f64, floor: f64) -> f64 {
    let n = model.params().len();
    let mask = model.params().trainable_mask();
    let mut analytic = vec![0.0; n];
    model.loss_and_grad(batch, &mut analytic, true);
    let mut scratch = vec![0.0; n];
    let mut worst = 0.0f64;
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let orig = model.params().values()[i];
        model.params_mut().values_mut()[i] = orig + h;
        let up = model.loss_and_grad(batch, &mut scratch, true);
        model.params_mut().values_mut()[i] = orig - h;
        let down = model.loss_and_grad(batch, &mut scratch, true);
        model.params_mut().values_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(floor);
        if std::env::var("FD_DEBUG").is_ok() && rel > 1e-6 {
            eprintln!("  param {i} ({}): analytic {a:e} numeric {numeric:e} rel {rel:e}", spec_name(model.params(), i));
        }
        worst = worst.max(rel);
    }
    worst
}

// ---- toy models for gradient checks ----

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-6;

fn uniform(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand::Rng;
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn classifier_gradient_error(seed: u64) -> f64 {
    use gesture_core::classifier::{ClassSample, DenseSoftmaxHead};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = DenseSoftmaxHead::new(4, 6, seed);
    // larger weights than the default init so the softmax is not flat
    for v in head.params_mut().values_mut() {
        *v *= 20.0;
    }
    let samples: Vec<ClassSample> = (0..5)
        .map(|i| ClassSample {
            features: uniform(6, &mut rng),
            label: i % 4,
        })
        .collect();
    let batch: Vec<&ClassSample> = samples.iter().collect();
    gradient_error(&mut head, &batch, FD_STEP, FD_FLOOR)
}

pub fn pinch_gradient_error(seed: u64) -> f64 {
    use gesture_core::pinch::{PinchDims, PinchHead, PinchSample};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = PinchDims {
        channels: 2,
        height: 4,
        width: 4,
        filters: 3,
        hidden: 5,
    };
    let mut head = PinchHead::new(dims, seed).unwrap();
    for v in head.params_mut().values_mut() {
        *v *= 10.0;
    }
    let samples: Vec<PinchSample> = (0..4)
        .map(|i| PinchSample {
            input: uniform(dims.in_channels() * dims.height * dims.width, &mut rng),
            label: i % 3,
        })
        .collect();
    let batch: Vec<&PinchSample> = samples.iter().collect();
    gradient_error(&mut head, &batch, FD_STEP, FD_FLOOR)
}

pub fn caption_gradient_error(seed: u64) -> f64 {
    use gesture_core::caption::{CaptionDims, CaptionModel, CaptionSample};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = CaptionDims {
        vocab: 7,
        feature_dim: 4,
        embedding: 3,
        units: 4,
    };
    let mut model = CaptionModel::new(dims, seed).unwrap();
    for v in model.params_mut().values_mut() {
        *v *= 10.0;
    }
    let samples: Vec<CaptionSample> = (0..3)
        .map(|i| CaptionSample {
            features: uniform(4, &mut rng),
            prefix: [1usize, 4, 5, 6][..=i].to_vec(),
            target: [4usize, 5, 6, 2][i],
        })
        .collect();
    let batch: Vec<&CaptionSample> = samples.iter().collect();
    gradient_error(&mut model, &batch, FD_STEP, FD_FLOOR)
}

fn spec_name(store: &gesture_core::nn::ParamStore, i: usize) -> String {
    for s in store.specs() {
        if s.slot.range().contains(&i) {
            return s.name.clone();
        }
    }
    String::new()
}

// ---- scenarios shared by the integration tests and the acceptance run ----

pub mod scenario {
    use super::*;
    use gesture_core::backbone::{Backbone, NoisyBackbone, StimulusColor};
    use gesture_core::filter_selection::{localize, score_filters, select_filters, FSParams, FilterSet, LabeledFrame};
    use gesture_core::metrics::{average_precision, detection_f1, ScoredBox};
    use rand::Rng;

    pub const FS_EXTENT: usize = 96;
    pub const FS_PLANTED: usize = 4;

    pub fn fs_backbone() -> SyntheticBackbone {
        backbone(FS_EXTENT, [8, 8, 8], FS_PLANTED, 3)
    }

    pub fn labeled(label: GestureLabel, n: usize, seed: u64) -> Vec<LabeledFrame> {
        scenes(label, n, FS_EXTENT, seed)
            .into_iter()
            .map(|(frame, r)| LabeledFrame {
                frame,
                truths: r.fingertip_boxes,
            })
            .collect()
    }

    /// Largest gap between library filter scores and the looped oracle over
    /// `n` scenes, across two layers and a few parameter settings.
    pub fn fs_oracle_max_diff(n: usize) -> f64 {
        let bb = fs_backbone();
        let mut worst = 0.0f64;
        for (label, seed) in [(GestureLabel::POINT, 11), (GestureLabel::DRAG, 12)] {
            let images = labeled(label, n, seed);
            for (layer, beta, s) in [("conv2", 0.92, 7), ("conv3", 0.6, 5), ("conv2", 0.4, 3)] {
                let stacks: Vec<_> = images
                    .iter()
                    .map(|i| bb.forward(&i.frame, &[layer]).unwrap().stacks.remove(0))
                    .collect();
                let truths: Vec<_> = images.iter().map(|i| i.truths.clone()).collect();
                let mut p = FSParams::new(layer);
                p.beta = beta;
                p.s = s;
                let fast = score_filters(&stacks, &truths, &p).unwrap();
                let slow = brute_scores(&stacks, &truths, beta, s, p.min_area);
                for (a, b) in fast.iter().zip(&slow) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        worst
    }

    pub fn fs_params() -> FSParams {
        FSParams::new("conv2")
    }

    pub fn point_filter_set(bb: &SyntheticBackbone) -> FilterSet {
        select_filters(bb, GestureLabel::POINT, &labeled(GestureLabel::POINT, 20, 1), &fs_params()).unwrap()
    }

    pub fn localization_f1<B: Backbone>(bb: &B, fset: &FilterSet, eval: &[LabeledFrame]) -> f64 {
        let records: Vec<DetectionRecord> = eval
            .iter()
            .map(|i| {
                let r = localize(bb, &i.frame, fset, &fs_params()).unwrap();
                DetectionRecord {
                    predictions: r
                        .boxes
                        .iter()
                        .zip(&r.scores)
                        .map(|(&bbox, &confidence)| ScoredBox { bbox, confidence })
                        .collect(),
                    truths: i.truths.clone(),
                }
            })
            .collect();
        detection_f1(&records, 0.5).f1
    }

    pub const NOISE_LEVELS: [f32; 6] = [0.0, 0.1, 0.2, 0.3, 0.5, 0.8];

    /// Held-out F1 for each noise amplitude, plus whether selection picked
    /// exactly the planted red detectors.
    pub fn localization_under_noise() -> (Vec<f64>, bool) {
        let bb = fs_backbone();
        let fset = point_filter_set(&bb);
        let mut picked = fset.indices();
        picked.sort_unstable();
        let planted = bb.planted_filters("conv2", StimulusColor::Red).unwrap();
        let eval = labeled(GestureLabel::POINT, 30, 2);
        let f1s = NOISE_LEVELS
            .iter()
            .map(|&amp| localization_f1(&NoisyBackbone::new(&bb, amp, 7), &fset, &eval))
            .collect();
        (f1s, picked == planted)
    }

    pub fn random_box(rng: &mut ChaCha8Rng, extent: u32) -> BBox {
        let x0 = rng.gen_range(0..extent - 2);
        let y0 = rng.gen_range(0..extent - 2);
        let x1 = rng.gen_range(x0 + 1..=extent);
        let y1 = rng.gen_range(y0 + 1..=extent);
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    /// Small random detection instance with distinct confidences: up to 10
    /// predictions over 1-3 images, some of them jittered copies of truths.
    pub fn random_detection(rng: &mut ChaCha8Rng) -> Vec<DetectionRecord> {
        let images = rng.gen_range(1..=3);
        let n_preds = rng.gen_range(0..=10usize);
        let mut conf: Vec<f64> = (0..n_preds).map(|i| (i as f64 + rng.gen_range(0.05..0.95)) / n_preds as f64).collect();
        // shuffle so confidence order and image order differ
        for i in (1..conf.len()).rev() {
            let j = rng.gen_range(0..=i);
            conf.swap(i, j);
        }
        let mut records: Vec<DetectionRecord> = (0..images)
            .map(|_| DetectionRecord {
                predictions: vec![],
                truths: (0..rng.gen_range(0..=3)).map(|_| random_box(rng, 20)).collect(),
            })
            .collect();
        if records.iter().all(|r| r.truths.is_empty()) {
            records[0].truths.push(random_box(rng, 20));
        }
        for c in conf {
            let r = rng.gen_range(0..images);
            let bbox = if !records[r].truths.is_empty() && rng.gen_bool(0.6) {
                let t = records[r].truths[rng.gen_range(0..records[r].truths.len())];
                let dx = rng.gen_range(0..=2);
                BBox::new(t.x0() + dx, t.y0(), t.x1() + dx, t.y1() + rng.gen_range(0..=2)).unwrap()
            } else {
                random_box(rng, 20)
            };
            records[r].predictions.push(ScoredBox { bbox, confidence: c });
        }
        records
    }

    /// Largest |AP - oracle| over `n` random instances.
    pub fn ap_oracle_max_diff(n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..n {
            let recs = random_detection(&mut rng);
            for lambda in [0.3, 0.5] {
                let n_truth: usize = recs.iter().map(|r| r.truths.len()).sum();
                let steps = 10_000usize.div_ceil(n_truth);
                let fast = average_precision(&recs, lambda).unwrap();
                let slow = brute_ap(&recs, lambda, steps);
                worst = worst.max((fast - slow).abs());
            }
        }
        worst
    }

    pub fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<ModelPoint> {
        // coarse grids so ties and duplicates occur
        (0..n)
            .map(|i| {
                ModelPoint::new(
                    format!("m{i}"),
                    rng.gen_range(0..20) as f64 * 5.0,
                    rng.gen_range(1..30) as f64,
                )
                .unwrap()
            })
            .collect()
    }

    /// Number of random instances where the library front differs from the
    /// pairwise brute force.
    pub fn pareto_mismatches(n: usize, seed: u64) -> usize {
        use gesture_core::metrics::{pareto_flags, pareto_front};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bad = 0;
        for _ in 0..n {
            let size = rng.gen_range(1..=100);
            let pts = random_points(&mut rng, size);
            let brute = brute_front(&pts);
            let mut expected: Vec<&ModelPoint> = pts.iter().zip(&brute).filter(|p| *p.1).map(|p| p.0).collect();
            expected.sort_by(|a, b| a.params.total_cmp(&b.params));
            let front = pareto_front(&pts);
            let mut got_names: Vec<&str> = front.iter().map(|p| p.name.as_str()).collect();
            let mut exp_names: Vec<&str> = expected.iter().map(|p| p.name.as_str()).collect();
            let sorted = front.windows(2).all(|w| w[0].params <= w[1].params);
            got_names.sort_unstable();
            exp_names.sort_unstable();
            if pareto_flags(&pts) != brute || got_names != exp_names || !sorted {
                bad += 1;
            }
        }
        bad
    }
}

pub mod training {
    use super::*;
    use gesture_core::backbone::Backbone;
    use gesture_core::caption::{caption_samples, CaptionDims, CaptionModel, Vocabulary};
    use gesture_core::classifier::{ClassSample, DenseSoftmaxHead};
    use gesture_core::dataset::{generate_pinch_sequence, PinchSequenceSpec};
    use gesture_core::metrics::tokenize;
    use gesture_core::pinch::{PinchDims, PinchHead, PinchSample, ZoomAction, DEFAULT_D};
    use gesture_core::train::{train, TrainConfig, TrainReport};
    use rand::Rng;

    /// Two Gaussian-free clusters on either side of a random hyperplane.
    pub fn separable(n: usize, dim: usize, classes: usize, seed: u64) -> Vec<ClassSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centres: Vec<Vec<f64>> = (0..classes)
            .map(|c| (0..dim).map(|d| if d % classes == c { 3.0 } else { 0.0 }).collect())
            .collect();
        (0..n)
            .map(|i| {
                let label = i % classes;
                ClassSample {
                    features: centres[label].iter().map(|&c| c + rng.gen_range(-0.5..0.5)).collect(),
                    label,
                }
            })
            .collect()
    }

    pub fn classifier_train_accuracy() -> f64 {
        let data = separable(120, 12, 6, 1);
        let mut head = DenseSoftmaxHead::new(6, 12, 2);
        train(&mut head, &data, &data[..20], &TrainConfig::default()).unwrap();
        let refs: Vec<_> = data.iter().collect();
        head.evaluate(&refs).1 as f64 / data.len() as f64
    }

    pub const CORPUS: [&str; 3] = [
        "a red cup on the desk",
        "a green book next to a lamp",
        "the blue phone is on a book",
    ];

    /// Trains on three captions and returns how many decode verbatim.
    pub fn caption_overfit() -> usize {
        let vocab = Vocabulary::build(&CORPUS);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let feats: Vec<Vec<f64>> = (0..3).map(|_| (0..8).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let mut samples = Vec::new();
        for (f, c) in feats.iter().zip(CORPUS) {
            samples.extend(caption_samples(f, &vocab.encode_caption(c)));
        }
        let dims = CaptionDims {
            vocab: vocab.len(),
            feature_dim: 8,
            embedding: 16,
            units: 32,
        };
        let mut model = CaptionModel::new(dims, 4).unwrap();
        let cfg = TrainConfig {
            max_epochs: 400,
            batch_size: 8,
            patience: 400,
            ..TrainConfig::default()
        };
        train(&mut model, &samples, &[], &cfg).unwrap();
        feats
            .iter()
            .zip(CORPUS)
            .filter(|(f, c)| {
                let fv = gesture_core::FeatureVector::new(f.iter().map(|&v| v as f32).collect());
                model.decode(&fv, &vocab, 20).unwrap().tokens == tokenize(c)
            })
            .count()
    }

    pub const PINCH_EXTENT: usize = 96;

    fn pinch_set(bb: &SyntheticBackbone, per_action: usize, seed: u64) -> Vec<PinchSample> {
        let mut out = Vec::new();
        for (a, action) in ZoomAction::ALL.into_iter().enumerate() {
            for k in 0..per_action {
                let id = seed * 1000 + (a * per_action + k) as u64;
                let spec = PinchSequenceSpec::random(action, (PINCH_EXTENT, PINCH_EXTENT), 10, id, id);
                let stacks: Vec<_> = generate_pinch_sequence(&spec)
                    .unwrap()
                    .into_iter()
                    .map(|(frame, _)| bb.forward(&frame, &["conv3"]).unwrap().stacks.remove(0))
                    .collect();
                for t in DEFAULT_D..stacks.len() {
                    out.push(PinchSample::new(&stacks[t], &stacks[t - DEFAULT_D], action).unwrap());
                }
            }
        }
        out
    }

    /// Held-out accuracy of a pinch head trained on synthetic sequences.
    pub fn pinch_accuracy() -> (f64, TrainReport) {
        let bb = backbone(PINCH_EXTENT, [2, 4, 4], 1, 5);
        let train_set = pinch_set(&bb, 40, 1);
        let val_set = pinch_set(&bb, 4, 2);
        let test_set = pinch_set(&bb, 10, 3);
        let probe = bb.forward(&scenes(GestureLabel::PINCH, 1, PINCH_EXTENT, 0)[0].0, &["conv3"]).unwrap();
        let mut dims = PinchDims::for_stack(&probe.stacks[0]);
        dims.filters = 8;
        dims.hidden = 16;
        let mut head = PinchHead::new(dims, 6).unwrap();
        let cfg = TrainConfig::default();
        let report = train(&mut head, &train_set, &val_set, &cfg).unwrap();
        let refs: Vec<_> = test_set.iter().collect();
        (head.evaluate(&refs).1 as f64 / test_set.len() as f64, report)
    }

    /// `(stopped_epoch, best_epoch, patience)` on data whose loss cannot move.
    pub fn constant_loss_stop() -> (usize, usize, usize) {
        let data: Vec<ClassSample> = (0..8)
            .map(|i| ClassSample {
                features: vec![0.0; 3],
                label: i % 2,
            })
            .collect();
        let mut head = DenseSoftmaxHead::new(2, 3, 5);
        let cfg = TrainConfig {
            batch_size: 64,
            ..TrainConfig::default()
        };
        let r = train(&mut head, &data, &data, &cfg).unwrap();
        (r.stopped_epoch, r.best_epoch, cfg.patience)
    }
}

pub mod engine {
    use super::*;
    use gesture_core::backbone::Backbone;
    use gesture_core::caption::{CaptionDims, CaptionModel, Vocabulary};
    use gesture_core::classifier::{ClassSample, DenseSoftmaxHead};
    use gesture_core::engine::{Heads, Session, SessionConfig};
    use gesture_core::pinch::{PinchDims, PinchHead};
    use gesture_core::train::{train, TrainConfig};
    use std::collections::BTreeMap;

    pub const ALL: [GestureLabel; 6] = [
        GestureLabel::POINT,
        GestureLabel::DRAG,
        GestureLabel::LOUPE,
        GestureLabel::PINCH,
        GestureLabel::OTHER,
        GestureLabel::NONE,
    ];

    /// Routing classifier trained on pooled features of synthetic scenes.
    pub fn trained_classifier(bb: &SyntheticBackbone) -> DenseSoftmaxHead {
        let mut data = Vec::new();
        for (i, &label) in ALL.iter().enumerate() {
            for (frame, _) in scenes(label, 12, scenario::FS_EXTENT, 100 + i as u64) {
                data.push(ClassSample {
                    features: bb.forward(&frame, &[]).unwrap().features.to_f64(),
                    label: label.index(),
                });
            }
        }
        let dim = data[0].features.len();
        let mut head = DenseSoftmaxHead::new(ALL.len(), dim, 1);
        let cfg = TrainConfig {
            max_epochs: 300,
            batch_size: 16,
            patience: 300,
            ..TrainConfig::default()
        };
        train(&mut head, &data, &[], &cfg).unwrap();
        head
    }

    pub fn heads(bb: &SyntheticBackbone) -> Heads {
        let mut filter_sets = BTreeMap::new();
        filter_sets.insert(GestureLabel::POINT, scenario::point_filter_set(bb));
        filter_sets.insert(
            GestureLabel::DRAG,
            gesture_core::filter_selection::select_filters(
                bb,
                GestureLabel::DRAG,
                &scenario::labeled(GestureLabel::DRAG, 10, 5),
                &scenario::fs_params(),
            )
            .unwrap(),
        );
        let probe = bb.forward(&scenes(GestureLabel::NONE, 1, scenario::FS_EXTENT, 0)[0].0, &["conv3"]).unwrap();
        let mut pdims = PinchDims::for_stack(&probe.stacks[0]);
        pdims.filters = 4;
        pdims.hidden = 8;
        let vocab = Vocabulary::build(&["a red cup on the desk", "a book next to a lamp"]);
        let cdims = CaptionDims {
            vocab: vocab.len(),
            feature_dim: probe.features.len(),
            embedding: 8,
            units: 8,
        };
        Heads {
            classifier: trained_classifier(bb),
            filter_sets,
            pinch: Some(PinchHead::new(pdims, 2).unwrap()),
            caption: Some((CaptionModel::new(cdims, 3).unwrap(), vocab)),
        }
    }

    pub fn session(bb: SyntheticBackbone, heads: Heads) -> Session<SyntheticBackbone> {
        let config = SessionConfig {
            fs_params: scenario::fs_params(),
            ..SessionConfig::default()
        };
        Session::new(bb, heads, config).unwrap()
    }

    /// Frames in gesture runs of 3-12 frames; returns frames and their labels.
    pub fn stream(n: usize, seed: u64) -> Vec<(Tensor, GestureLabel)> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        let mut run = 0u64;
        while out.len() < n {
            let label = ALL[rng.gen_range(0..ALL.len())];
            let len = rng.gen_range(3..=12).min(n - out.len());
            for (frame, _) in scenes(label, len, scenario::FS_EXTENT, seed * 100_000 + run) {
                out.push((frame, label));
            }
            run += 1;
        }
        out
    }

    pub struct EfficiencyOutcome {
        pub frames: usize,
        pub min_backbone_per_frame: u64,
        pub max_backbone_per_frame: u64,
        pub max_heads_per_frame: u64,
        pub heads_on_unrouted_frames: u64,
        pub replay_identical: bool,
        pub json_lines: String,
    }

    /// Runs the stream frame by frame, checking counter deltas, then replays
    /// it through a fresh session.
    pub fn efficiency(n: usize) -> EfficiencyOutcome {
        let bb = scenario::fs_backbone();
        let heads = heads(&bb);
        let frames = stream(n, 9);
        let mut s = session(bb.clone(), heads.clone());
        let (mut min_bb, mut max_bb, mut max_heads, mut unrouted) = (u64::MAX, 0, 0, 0);
        let mut preds = Vec::new();
        for (frame, _) in &frames {
            let before = s.counters();
            let p = s.process_frame(frame).unwrap();
            let after = s.counters();
            let dbb = after.backbone_forwards - before.backbone_forwards;
            min_bb = min_bb.min(dbb);
            max_bb = max_bb.max(dbb);
            let dh = after.head_calls() - before.head_calls();
            max_heads = max_heads.max(dh);
            let routed = p
                .validated_label
                .as_deref()
                .is_some_and(|l| l != "none" && l != "other");
            if !routed {
                unrouted += dh;
            }
            preds.push(p);
        }
        let first = gesture_core::engine::to_json_lines(&preds).unwrap();
        let mut replay = session(bb, heads);
        let (again, _) = replay.process_stream(frames.iter().map(|f| Ok(f.0.clone()))).unwrap();
        let second = gesture_core::engine::to_json_lines(&again).unwrap();
        EfficiencyOutcome {
            frames: frames.len(),
            min_backbone_per_frame: min_bb,
            max_backbone_per_frame: max_bb,
            max_heads_per_frame: max_heads,
            heads_on_unrouted_frames: unrouted,
            replay_identical: first == second,
            json_lines: first,
        }
    }
}

pub mod formats {
    use super::*;
    use gesture_core::atn;
    use gesture_core::dataset::{read_manifest, write_manifest};
    use gesture_core::export::ExportManifest;
    use gesture_core::reference::{ReferenceTable, REFERENCE_CSV};
    use sha2::{Digest, Sha256};

    pub const REFERENCE_SHA256: &str = "5925aafb79427a9ecef517a54b23b68d118607ed45a0fef0440c3b1dc47c5bff";

    pub fn bit_exact(a: &Tensor, b: &Tensor) -> bool {
        a.dims() == b.dims()
            && a.data().len() == b.data().len()
            && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    /// Random tensors, including NaN payloads, infinities and signed zeros.
    pub fn atn_round_trips(n: usize, seed: u64) -> bool {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir = tempfile::tempdir().unwrap();
        (0..n).all(|i| {
            let ndim = rng.gen_range(1..=4);
            let dims: Vec<usize> = (0..ndim).map(|_| rng.gen_range(1..=6)).collect();
            let len = dims.iter().product();
            let data = (0..len)
                .map(|_| match rng.gen_range(0..8) {
                    0 => f32::from_bits(rng.gen()),
                    1 => -0.0,
                    2 => f32::INFINITY,
                    _ => rng.gen_range(-1e3..1e3),
                })
                .collect();
            let t = Tensor::new(dims, data).unwrap();
            let path = dir.path().join(format!("{i}.atn"));
            atn::save_tensor(&t, &path).unwrap();
            bit_exact(&t, &atn::load_tensor(&path).unwrap()) && atn::encode(&t) == std::fs::read(&path).unwrap()
        })
    }

    pub fn csv_rows(text: &str) -> Option<(csv::StringRecord, Vec<csv::StringRecord>)> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().ok()?.clone();
        let rows = r.records().collect::<Result<Vec<_>, _>>().ok()?;
        rows.iter().all(|row| row.len() == header.len()).then_some((header, rows))
    }

    pub fn sample_manifest_round_trips() -> bool {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut recs: Vec<_> = ALL_LABELS
            .iter()
            .flat_map(|&l| scenes(l, 2, 64, 11))
            .map(|s| s.1)
            .collect();
        recs[0].captions = vec!["a red cup".into()];
        write_manifest(&path, &recs).unwrap();
        read_manifest(&path).unwrap() == recs
    }

    pub fn export_manifest_round_trips() -> bool {
        let dir = tempfile::tempdir().unwrap();
        let bb = backbone(32, [4, 4, 4], 1, 1);
        let frame = scenes(GestureLabel::POINT, 1, 32, 2).remove(0).0;
        let out = gesture_core::Backbone::forward(&bb, &frame, &["conv1", "conv3"]).unwrap();
        let mut m = ExportManifest { base: dir.path().into(), ..Default::default() };
        m.add_forward("img0.png", "img0", &out).unwrap();
        let path = dir.path().join("manifest.jsonl");
        m.write(&path).unwrap();
        let back = ExportManifest::read(&path).unwrap();
        let stack = back.load_stack(back.find("img0.png", "conv3").unwrap()).unwrap();
        back.entries == m.entries && bit_exact(stack.maps(), out.stack("conv3").unwrap().maps())
    }

    pub fn outputs_reparse() -> bool {
        let table = gesture_core::filter_selection::SweepTable {
            rows: vec![],
            best: 0,
        };
        let timing = gesture_core::engine::TimingReport::default();
        let ok_sweep = csv_rows(&table.to_csv()).is_some_and(|(h, _)| h.len() == 9);
        let ok_timing = csv_rows(&timing.to_csv()).is_some_and(|(_, rows)| rows.len() == 4);
        let reference = ReferenceTable::parse(REFERENCE_CSV).is_ok() && csv_rows(REFERENCE_CSV).is_some();
        ok_sweep && ok_timing && reference && sample_manifest_round_trips() && export_manifest_round_trips()
    }

    pub fn reference_checksum() -> String {
        format!("{:x}", Sha256::digest(REFERENCE_CSV.as_bytes()))
    }

    const ALL_LABELS: [GestureLabel; 4] = [GestureLabel::POINT, GestureLabel::DRAG, GestureLabel::LOUPE, GestureLabel::NONE];
}

pub mod temporal {
    use gesture_core::temporal::{evaluate_k, gate_stream};

    pub const NEGATIVE: usize = 5;
    pub const UNSET: usize = 9;

    /// Negative lead-in, then three gestures of ten frames, each with two
    /// isolated single-frame errors away from the transitions.
    pub fn isolated_error_stream() -> Vec<(usize, usize)> {
        let mut truth = vec![NEGATIVE; 3];
        for g in 0..3 {
            truth.extend([g; 10]);
        }
        let mut raw = truth.clone();
        for seg in 0..3 {
            for off in [3, 6] {
                let i = 3 + 10 * seg + off;
                raw[i] = (raw[i] + 1) % 3;
            }
        }
        raw.into_iter().zip(truth).collect()
    }

    /// Macro-F1 at k = 1 and k = 2 on the isolated-error stream.
    pub fn k1_k2_f1() -> (f64, f64) {
        let f = evaluate_k(&isolated_error_stream(), [1, 2], NEGATIVE).unwrap();
        (f[0].1, f[1].1)
    }

    pub const HAND_RAW: [usize; 14] = [5, 5, 0, 0, 1, 0, 0, 0, 2, 2, 2, 0, 2, 2];
    /// Worked by hand for k = 2: a label takes over on its second
    /// consecutive frame, single-frame deviations never surface.
    pub const HAND_K2: [usize; 14] = [UNSET, 5, 5, 0, 0, 0, 0, 0, 0, 2, 2, 2, 2, 2];

    pub fn hand_simulated_matches() -> bool {
        gate_stream(&HAND_RAW, 2, UNSET).unwrap() == HAND_K2 && gate_stream(&HAND_RAW, 1, UNSET).unwrap() == HAND_RAW
    }
}
