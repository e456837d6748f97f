use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use gesture_core::caption::{caption_samples, CaptionDims, CaptionSample, Vocabulary};
use gesture_core::classifier::ClassSample;
use gesture_core::dataset::{augment, augment_pair, pinch_pairs, split, AugmentSpec, SplitSpec};
use gesture_core::labels::LabelRegistry;
use gesture_core::pinch::{PinchDims, PinchSample};
use gesture_core::train::{two_phase, Trainable, TwoPhaseReport};
use gesture_core::{Backbone, CaptionModel, DenseSoftmaxHead, Error, Persist, PinchHead, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::context::{output, usage, write_all, write_file, Context, Failure, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadKind {
    Classify,
    Pinch,
    Caption,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    head: HeadKind,
    /// Training data; split into train and validation parts.
    #[arg(long)]
    manifest: PathBuf,
    /// Synthetic data for a pre-training phase before `--manifest`.
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// Weights directory to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Augmented copies per training frame when `train.augment` is on.
    #[arg(long, default_value_t = 2)]
    augment_copies: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pinch convolution filters.
    #[arg(long, default_value_t = 64)]
    filters: usize,
    /// Pinch hidden units.
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    /// Caption word embedding width.
    #[arg(long, default_value_t = 256)]
    embedding: usize,
    /// Caption branch and LSTM width.
    #[arg(long, default_value_t = 256)]
    units: usize,
}

struct Prepared<S> {
    train: Vec<S>,
    val: Vec<S>,
}

struct Job<'a> {
    backbone: &'a dyn Backbone,
    registry: &'a LabelRegistry,
    config: &'a TrainConfig,
    augment: Option<AugmentSpec>,
    val_fraction: f64,
    d: usize,
}

impl Job<'_> {
    fn split(&self, m: &Manifest) -> Result<(Vec<usize>, Vec<usize>), Failure> {
        let s = split(
            &m.records,
            &SplitSpec {
                train: 1.0 - self.val_fraction,
                val: self.val_fraction,
                test: 0.0,
                seed: self.config.seed,
            },
        )?;
        Ok((s.train, s.val))
    }

    fn features(&self, frame: &gesture_core::Tensor) -> Result<Vec<f64>, Failure> {
        Ok(self.backbone.forward(frame, &[])?.features.to_f64())
    }

    fn classify(&self, m: &Manifest) -> Result<Prepared<ClassSample>, Failure> {
        let (tr, va) = self.split(m)?;
        let mut out = Prepared { train: Vec::new(), val: Vec::new() };
        for (indices, training) in [(tr, true), (va, false)] {
            for i in indices {
                let label = m.records[i].label(self.registry)?.index();
                let frame = m.frame(i)?;
                let dest = if training { &mut out.train } else { &mut out.val };
                dest.push(ClassSample { features: self.features(&frame)?, label });
                if let (true, Some(spec)) = (training, &self.augment) {
                    for (f, _) in augment(&frame, &m.records[i], spec, self.config.seed ^ i as u64)? {
                        dest.push(ClassSample { features: self.features(&f)?, label });
                    }
                }
            }
        }
        Ok(out)
    }

    fn pinch(&self, m: &Manifest) -> Result<Prepared<PinchSample>, Failure> {
        let layer = self.backbone.last_layer();
        let (tr, va) = self.split(m)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut out = Prepared { train: Vec::new(), val: Vec::new() };
        for (indices, training) in [(tr, true), (va, false)] {
            // sequence id -> (frame index, record index)
            let mut seqs: BTreeMap<u64, Vec<(u32, usize)>> = BTreeMap::new();
            for i in indices {
                let r = &m.records[i];
                if let (Some(id), Some(_)) = (r.sequence_id, r.zoom_label) {
                    seqs.entry(id).or_default().push((r.frame_index.unwrap_or(0), i));
                }
            }
            for frames in seqs.values_mut() {
                frames.sort_unstable();
                let action = m.records[frames[0].1].zoom_label.expect("filtered above");
                let loaded = frames.iter().map(|&(_, i)| m.frame(i)).collect::<Result<Vec<_>, _>>()?;
                let stack = |f: &gesture_core::Tensor| -> Result<_, Failure> {
                    let o = self.backbone.forward(f, &[&layer])?;
                    Ok(o.stack(&layer).cloned().ok_or_else(|| Error::UnknownLayer(layer.clone()))?)
                };
                let stacks = loaded.iter().map(stack).collect::<Result<Vec<_>, _>>()?;
                let dest = if training { &mut out.train } else { &mut out.val };
                for (cur, past) in pinch_pairs(frames.len(), self.d, training, &mut rng) {
                    dest.push(PinchSample::new(&stacks[cur], &stacks[past], action)?);
                    if let (true, Some(spec)) = (training, &self.augment) {
                        let (rc, rp) = (&m.records[frames[cur].1], &m.records[frames[past].1]);
                        let seed = self.config.seed ^ ((frames[cur].1 as u64) << 20 | frames[past].1 as u64);
                        for ((fc, _), (fp, _)) in augment_pair((&loaded[cur], rc), (&loaded[past], rp), spec, seed)? {
                            dest.push(PinchSample::new(&stack(&fc)?, &stack(&fp)?, action)?);
                        }
                    }
                }
            }
        }
        if out.train.is_empty() {
            return Err(Error::Empty("pinch sequences long enough for the frame distance".into()).into());
        }
        Ok(out)
    }

    fn captions(&self, m: &Manifest, vocab: &Vocabulary) -> Result<Prepared<CaptionSample>, Failure> {
        let (tr, va) = self.split(m)?;
        let mut out = Prepared { train: Vec::new(), val: Vec::new() };
        for (indices, training) in [(tr, true), (va, false)] {
            for i in indices {
                let r = &m.records[i];
                if r.captions.is_empty() {
                    continue;
                }
                let features = self.features(&m.frame(i)?)?;
                let dest = if training { &mut out.train } else { &mut out.val };
                for c in &r.captions {
                    dest.extend(caption_samples(&features, &vocab.encode_caption(c)));
                }
            }
        }
        if out.train.is_empty() {
            return Err(Error::Empty("captioned training records".into()).into());
        }
        Ok(out)
    }
}

fn fit<M: Trainable>(
    model: &mut M,
    synthetic: Option<Prepared<M::Sample>>,
    real: Prepared<M::Sample>,
    config: &TrainConfig,
) -> Result<TwoPhaseReport, Failure> {
    let syn = synthetic.as_ref().map(|p| (p.train.as_slice(), p.val.as_slice()));
    Ok(two_phase(model, syn, (&real.train, &real.val), config)?)
}

pub fn run(ctx: &mut Context, a: TrainArgs) -> Result<(), Failure> {
    if !(0.0..1.0).contains(&a.val_fraction) {
        return Err(usage("--val-fraction must lie in [0, 1)"));
    }
    ctx.set_opt("train.max_epochs", a.epochs)?;
    ctx.set_opt("train.batch_size", a.batch_size)?;
    ctx.set_opt("train.patience", a.patience)?;
    ctx.set_opt("train.seed", a.seed)?;
    let config = ctx.typed(|c| c.train_config())?;
    let registry = ctx.typed(|c| c.registry())?;
    let session = ctx.typed(|c| c.session_config())?;
    let backbone = ctx.typed(|c| c.backbone())?;
    let job = Job {
        backbone: &*backbone,
        registry: &registry,
        config: &config,
        augment: (config.augment && a.augment_copies > 0).then(|| AugmentSpec {
            copies: a.augment_copies,
            ..AugmentSpec::default()
        }),
        val_fraction: a.val_fraction,
        d: session.d,
    };
    let real = Manifest::read(&a.manifest)?;
    let synthetic = a.synthetic.as_deref().map(Manifest::read).transpose()?;

    let report = match a.head {
        HeadKind::Classify => {
            let data = job.classify(&real)?;
            let syn = synthetic.as_ref().map(|m| job.classify(m)).transpose()?;
            let dim = data.train[0].features.len();
            let mut head = DenseSoftmaxHead::new(registry.len(), dim, config.seed);
            let report = fit(&mut head, syn, data, &config)?;
            head.save(&a.out)?;
            report
        }
        HeadKind::Pinch => {
            let data = job.pinch(&real)?;
            let syn = synthetic.as_ref().map(|m| job.pinch(m)).transpose()?;
            let probe = backbone.forward(&real.frame(0)?, &[&backbone.last_layer()])?;
            let mut dims = PinchDims::for_stack(&probe.stacks[0]);
            dims.filters = a.filters;
            dims.hidden = a.hidden;
            let mut head = PinchHead::new(dims, config.seed)?;
            let report = fit(&mut head, syn, data, &config)?;
            head.save(&a.out)?;
            report
        }
        HeadKind::Caption => {
            let corpus: Vec<&str> = real
                .records
                .iter()
                .chain(synthetic.iter().flat_map(|m| &m.records))
                .flat_map(|r| r.captions.iter().map(String::as_str))
                .collect();
            let vocab = Vocabulary::build(&corpus);
            let data = job.captions(&real, &vocab)?;
            let syn = synthetic.as_ref().map(|m| job.captions(m, &vocab)).transpose()?;
            let dims = CaptionDims {
                vocab: vocab.len(),
                feature_dim: data.train[0].features.len(),
                embedding: a.embedding,
                units: a.units,
            };
            let mut model = CaptionModel::new(dims, config.seed)?;
            let report = fit(&mut model, syn, data, &config)?;
            model.save(&a.out)?;
            vocab.save(a.out.join("vocab.txt"))?;
            report
        }
    };
    write_file(&a.out.join("report.csv"), &report.real.to_csv())?;
    if let Some(s) = &report.synthetic {
        write_file(&a.out.join("report_synthetic.csv"), &s.to_csv())?;
    }
    let best = report.real.best();
    let summary = json!({
        "head": format!("{:?}", a.head).to_lowercase(),
        "out": a.out.display().to_string(),
        "epochs": report.real.stopped_epoch,
        "best_epoch": report.real.best_epoch,
        "train_accuracy": best.train_accuracy,
        "val_accuracy": best.val_accuracy,
        "val_loss": best.val_loss,
    });
    write_all(&mut *output(None)?, &format!("{summary}\n"))
}
