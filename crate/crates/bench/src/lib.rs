//! Fixtures shared by the pipeline benchmarks.

use std::collections::BTreeMap;

use gesture_core::dataset::{generate_synthetic_scene, random_layout, SampleRecord};
use gesture_core::filter_selection::{select_filters, LabeledFrame};
use gesture_core::metrics::DetectionRecord;
use gesture_core::{
    Backbone, DenseSoftmaxHead, FSParams, FilterSet, GestureLabel, Heads, Session, SessionConfig, SyntheticBackbone,
    SyntheticConfig, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LAYER: &str = "conv2";

pub struct Fixture {
    pub backbone: SyntheticBackbone,
    pub params: FSParams,
    pub fset: FilterSet,
    pub frames: Vec<(Tensor, SampleRecord)>,
}

pub fn scenes(label: GestureLabel, n: usize, extent: usize, seed: u64) -> Vec<(Tensor, SampleRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let layout = random_layout(label, (extent, extent), &mut rng).expect("layout");
            generate_synthetic_scene(&layout, seed * 1000 + i as u64).expect("scene")
        })
        .collect()
}

impl Fixture {
    /// Backbone at `extent` pixels with a point filter set chosen on 20 scenes.
    pub fn new(extent: usize) -> Self {
        let backbone = SyntheticBackbone::new(SyntheticConfig {
            extent: (extent, extent),
            widths: [16, 32, 64],
            planted_per_color: 4,
            seed: 3,
        })
        .expect("backbone");
        let params = FSParams::new(LAYER);
        let train: Vec<LabeledFrame> = scenes(GestureLabel::POINT, 20, extent, 1)
            .into_iter()
            .map(|(frame, r)| LabeledFrame { frame, truths: r.fingertip_boxes })
            .collect();
        let fset = select_filters(&backbone, GestureLabel::POINT, &train, &params).expect("filter selection");
        let frames = scenes(GestureLabel::POINT, 8, extent, 2);
        Self { backbone, params, fset, frames }
    }

    /// Engine session with an untrained classifier and the point filter set.
    pub fn session(&self) -> Session<SyntheticBackbone> {
        let dim = self.backbone.forward(&self.frames[0].0, &[]).expect("forward").features.len();
        let mut filter_sets = BTreeMap::new();
        filter_sets.insert(GestureLabel::POINT, self.fset.clone());
        let heads = Heads {
            classifier: DenseSoftmaxHead::new(6, dim, 1),
            filter_sets,
            pinch: None,
            caption: None,
        };
        let config = SessionConfig { fs_params: self.params.clone(), ..SessionConfig::default() };
        Session::new(self.backbone.clone(), heads, config).expect("session")
    }
}

/// Random scored detections around `n` images with two truths each.
pub fn detection_records(n: usize, seed: u64) -> Vec<DetectionRecord> {
    use gesture_core::metrics::ScoredBox;
    use gesture_core::BBox;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bbox = |rng: &mut ChaCha8Rng| {
        let (x, y) = (rng.gen_range(0..200u32), rng.gen_range(0..200u32));
        BBox::new(x, y, x + rng.gen_range(5..30), y + rng.gen_range(5..30)).expect("box")
    };
    (0..n)
        .map(|_| {
            let truths: Vec<BBox> = (0..2).map(|_| bbox(&mut rng)).collect();
            let predictions = (0..rng.gen_range(0..5))
                .map(|_| ScoredBox { bbox: bbox(&mut rng), confidence: rng.gen() })
                .collect();
            DetectionRecord { predictions, truths }
        })
        .collect()
}
