mod common;

use common::{engine, scenario, scenes};
use gesture_core::engine::{from_json_lines, to_json_lines, Payload};
use gesture_core::labels::GestureLabel;
use gesture_core::{Error, Tensor};
use std::sync::OnceLock;

fn fixture() -> &'static (gesture_core::SyntheticBackbone, gesture_core::engine::Heads) {
    static F: OnceLock<(gesture_core::SyntheticBackbone, gesture_core::engine::Heads)> = OnceLock::new();
    F.get_or_init(|| {
        let bb = scenario::fs_backbone();
        let heads = engine::heads(&bb);
        (bb, heads)
    })
}

fn session() -> gesture_core::Session<gesture_core::SyntheticBackbone> {
    let (bb, heads) = fixture();
    engine::session(bb.clone(), heads.clone())
}

fn frames(label: GestureLabel, n: usize, seed: u64) -> Vec<Tensor> {
    scenes(label, n, scenario::FS_EXTENT, seed).into_iter().map(|f| f.0).collect()
}

#[test]
fn classifier_routes_held_out_scenes() {
    let (bb, heads) = fixture();
    for &label in &engine::ALL {
        for f in frames(label, 5, 777) {
            let feats = gesture_core::Backbone::forward(bb, &f, &[]).unwrap().features;
            assert_eq!(heads.classifier.classify(&feats).unwrap().label, label);
        }
    }
}

#[test]
fn k_point_frames_then_boxes() {
    let mut s = session();
    let fr = frames(GestureLabel::POINT, 3, 31);
    let p0 = s.process_frame(&fr[0]).unwrap();
    assert_eq!(p0.validated_label, None);
    assert_eq!(p0.payload, Payload::NoResponse);
    let p1 = s.process_frame(&fr[1]).unwrap();
    assert_eq!(p1.validated_label.as_deref(), Some("point"));
    match &p1.payload {
        Payload::FingertipBoxes { boxes } => assert_eq!(boxes.len(), 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn none_frames_get_no_response_and_no_heads() {
    let mut s = session();
    for f in frames(GestureLabel::NONE, 4, 32).iter().chain(&frames(GestureLabel::OTHER, 4, 33)) {
        let p = s.process_frame(f).unwrap();
        assert_eq!(p.payload, Payload::NoResponse);
    }
    let c = s.counters();
    assert_eq!(c.backbone_forwards, 8);
    assert_eq!(c.head_calls(), 0);
}

#[test]
fn caption_once_per_validation() {
    let mut s = session();
    let fr = frames(GestureLabel::LOUPE, 6, 34);
    let preds: Vec<_> = fr.iter().map(|f| s.process_frame(f).unwrap()).collect();
    assert_eq!(s.counters().caption_calls, 1);
    let texts: Vec<_> = preds[1..]
        .iter()
        .map(|p| match &p.payload {
            Payload::Caption { text } => text.clone(),
            other => panic!("{other:?}"),
        })
        .collect();
    assert!(texts.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn caption_every_n_recaptions() {
    let (bb, heads) = fixture();
    let config = gesture_core::SessionConfig {
        fs_params: scenario::fs_params(),
        caption_every_n: 2,
        ..Default::default()
    };
    let mut s = gesture_core::Session::new(bb.clone(), heads.clone(), config).unwrap();
    for f in frames(GestureLabel::LOUPE, 6, 35) {
        s.process_frame(&f).unwrap();
    }
    // validated on frame 2 of 6: captions at run positions 0, 2, 4
    assert_eq!(s.counters().caption_calls, 3);
}

#[test]
fn pinch_routes_to_zoom() {
    let mut s = session();
    let mut last = None;
    for f in frames(GestureLabel::PINCH, 3, 36) {
        last = Some(s.process_frame(&f).unwrap());
    }
    assert!(matches!(last.unwrap().payload, Payload::Zoom { .. }));
    assert_eq!(s.counters().pinch_calls, 2);
}

#[test]
fn missing_head_is_an_error() {
    let (bb, heads) = fixture();
    let mut heads = heads.clone();
    heads.pinch = None;
    let mut s = engine::session(bb.clone(), heads);
    let fr = frames(GestureLabel::PINCH, 2, 37);
    s.process_frame(&fr[0]).unwrap();
    assert!(matches!(s.process_frame(&fr[1]), Err(Error::MissingWeights(_))));
}

#[test]
fn stream_errors_carry_frame_index() {
    let mut s = session();
    let good = frames(GestureLabel::NONE, 2, 38);
    let bad = Tensor::zeros(vec![4, 4, 3]).unwrap();
    let src = vec![Ok(good[0].clone()), Ok(good[1].clone()), Ok(bad)];
    match s.process_stream(src) {
        Err(Error::Frame { index, .. }) => assert_eq!(index, 2),
        other => panic!("{other:?}"),
    }
    let src = vec![Ok(good[0].clone()), Err(Error::Format("decode".into()))];
    assert!(matches!(session().process_stream(src), Err(Error::Frame { index: 1, .. })));
}

#[test]
fn empty_stream_and_timing_accounting() {
    let mut s = session();
    let (out, t) = s.process_stream(Vec::<gesture_core::Result<Tensor>>::new()).unwrap();
    assert!(out.is_empty());
    assert_eq!(t.frames, 0);
    let fr = engine::stream(30, 4);
    let (out, t) = s.process_stream(fr.into_iter().map(|f| Ok(f.0))).unwrap();
    assert_eq!(out.len(), 30);
    assert_eq!(t.frames, 30);
    assert!(t.backbone + t.classify + t.head <= t.total);
    assert_eq!(t.to_csv().lines().count(), 5);
}

#[test]
fn efficiency_and_replay_over_a_long_stream() {
    let o = engine::efficiency(300);
    assert_eq!((o.min_backbone_per_frame, o.max_backbone_per_frame), (1, 1));
    assert!(o.max_heads_per_frame <= 1);
    assert_eq!(o.heads_on_unrouted_frames, 0);
    assert!(o.replay_identical);
    let back = from_json_lines(&o.json_lines).unwrap();
    assert_eq!(back.len(), o.frames);
    assert_eq!(to_json_lines(&back).unwrap(), o.json_lines);
}
