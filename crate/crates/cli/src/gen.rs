use std::path::{Path, PathBuf};

use clap::Args;
use gesture_core::atn;
use gesture_core::config::parse_extent;
use gesture_core::dataset::{
    generate_pinch_sequence, generate_synthetic_scene, random_layout, write_manifest, write_ppm, FrameSource,
    PinchSequenceSpec, SampleRecord,
};
use gesture_core::labels::{GestureLabel, LabelRegistry};
use gesture_core::pinch::ZoomAction;
use gesture_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::context::{create_dir, usage, Context, Failure};
use crate::FrameFormat;

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory; receives `manifest.jsonl` and `frames/`.
    #[arg(long)]
    out: PathBuf,
    /// Static scenes, cycling through `--labels`.
    #[arg(long)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Frame extent, `W` or `WxH`. Defaults to `backbone.extent`.
    #[arg(long)]
    extent: Option<String>,
    #[arg(long, value_enum, default_value_t = FrameFormat::Atn)]
    format: FrameFormat,
    /// Comma-separated gesture names for the static scenes.
    #[arg(long, default_value = "point,drag,loupe,other,none")]
    labels: String,
    /// Pinch sequences, cycling through zoom in, zoom out and no zoom.
    #[arg(long, default_value_t = 0)]
    pinch_sequences: usize,
    #[arg(long, default_value_t = 10)]
    pinch_frames: usize,
}

fn save(out: &Path, name: &str, frame: &Tensor, format: FrameFormat) -> Result<String, Failure> {
    let rel = match format {
        FrameFormat::Atn => format!("frames/{name}.atn"),
        FrameFormat::Ppm => format!("frames/{name}.ppm"),
    };
    let path = out.join(&rel);
    match format {
        FrameFormat::Atn => atn::save_tensor(frame, &path)?,
        FrameFormat::Ppm => write_ppm(&path, frame)?,
    }
    Ok(rel)
}

pub fn run(ctx: &mut Context, a: GenArgs) -> Result<(), Failure> {
    let extent = match &a.extent {
        Some(e) => parse_extent(e).map_err(|e| usage(e.to_string()))?,
        None => ctx.typed(|c| c.backbone_config())?.extent,
    };
    let standard = LabelRegistry::standard();
    let labels: Vec<GestureLabel> = a
        .labels
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| standard.by_name(s).map_err(|e| usage(e.to_string())))
        .collect::<Result<_, _>>()?;
    if labels.contains(&GestureLabel::PINCH) {
        return Err(usage("pinch data comes from --pinch-sequences"));
    }
    if labels.is_empty() && a.scenes > 0 {
        return Err(usage("--labels is empty"));
    }
    if a.pinch_sequences > 0 && a.pinch_frames < 2 {
        return Err(usage("--pinch-frames must be at least 2"));
    }
    create_dir(&a.out.join("frames"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut records: Vec<SampleRecord> = Vec::with_capacity(a.scenes + a.pinch_sequences * a.pinch_frames);
    for i in 0..a.scenes {
        let label = labels[i % labels.len()];
        let layout = random_layout(label, extent, &mut rng)?;
        let (frame, mut rec) = generate_synthetic_scene(&layout, rng.gen())?;
        rec.frame = FrameSource::File {
            path: save(&a.out, &format!("{i:06}"), &frame, a.format)?,
        };
        records.push(rec);
    }
    for s in 0..a.pinch_sequences {
        let action = ZoomAction::ALL[s % ZoomAction::ALL.len()];
        let spec = PinchSequenceSpec::random(action, extent, a.pinch_frames, s as u64 + 1, rng.gen());
        for (t, (frame, mut rec)) in generate_pinch_sequence(&spec)?.into_iter().enumerate() {
            rec.frame = FrameSource::File {
                path: save(&a.out, &format!("pinch{s:04}_{t:03}"), &frame, a.format)?,
            };
            records.push(rec);
        }
    }
    let manifest = a.out.join("manifest.jsonl");
    write_manifest(&manifest, &records)?;
    log::info!("{} records written to {}", records.len(), manifest.display());
    Ok(())
}
