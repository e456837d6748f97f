use std::path::{Path, PathBuf};

use clap::Args;
use gesture_core::dataset::{split, SplitSpec};
use gesture_core::filter_selection::{grid, localize as localize_frame, select_filters, sweep as run_sweep, FilterSet, LabeledFrame};
use gesture_core::labels::LabelRegistry;
use gesture_core::{Backbone, Error};
use serde_json::json;

use crate::context::{output, read_frame, usage, write_all, write_file, Context, Failure, Manifest};
use crate::FsFlags;

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Gesture whose fingertip boxes are the targets.
    #[arg(long = "class")]
    class: String,
    #[arg(long)]
    layer: Option<String>,
    /// Keep the n best filters.
    #[arg(long, conflicts_with = "alpha")]
    top_n: Option<usize>,
    /// Keep every filter scoring above this mean IoU.
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    fs: FsFlags,
    /// Filter set file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    fset: PathBuf,
    /// Frame files (`.atn` or `.ppm`). Repeatable.
    #[arg(long = "frame", required_unless_present = "manifest")]
    frames: Vec<PathBuf>,
    /// Localize every record of a manifest instead.
    #[arg(long, conflicts_with = "frames")]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    fs: FsFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Grid file: `layer`, `top_n`, `beta`, `kernel` lists, optional `class`,
    /// `min_area`, `lambda`, `select_fraction`, `seed`.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Overrides the grid file's `class`.
    #[arg(long = "class")]
    class: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| {
        Failure::Data(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

/// Frames of one class with their fingertip boxes.
fn class_frames(m: &Manifest, class: &str, indices: impl IntoIterator<Item = usize>) -> Result<Vec<LabeledFrame>, Failure> {
    indices
        .into_iter()
        .filter(|&i| m.records[i].gesture == class)
        .map(|i| {
            Ok(LabeledFrame {
                frame: m.frame(i)?,
                truths: m.records[i].fingertip_boxes.clone(),
            })
        })
        .collect()
}

pub fn select(ctx: &mut Context, a: SelectArgs) -> Result<(), Failure> {
    ctx.set_opt("fs.layer", a.layer.as_deref())?;
    ctx.set_opt("fs.top_n", a.top_n)?;
    ctx.set_opt("fs.alpha", a.alpha)?;
    a.fs.apply(ctx)?;
    let params = ctx.typed(|c| c.fs_params())?;
    let registry = ctx.typed(|c| c.registry())?;
    let label = registry.by_name(&a.class).map_err(|e| usage(e.to_string()))?;
    let backbone = ctx.typed(|c| c.backbone())?;
    let m = Manifest::read(&a.manifest)?;
    let images = class_frames(&m, &a.class, 0..m.records.len())?;
    if images.is_empty() {
        return Err(Error::Empty(format!("no `{}` records in the manifest", a.class)).into());
    }
    let fset = select_filters(&backbone, label, &images, &params)?;
    write_file(&a.out, &fset.to_manifest(&registry)?)?;
    let summary = json!({
        "class": a.class,
        "layer": fset.layer_name,
        "images": images.len(),
        "filters": fset.indices(),
        "scores": fset.entries.iter().map(|e| e.1).collect::<Vec<_>>(),
    });
    write_all(&mut *output(None)?, &format!("{summary}\n"))
}

fn load_fset(path: &Path, registry: &LabelRegistry) -> Result<FilterSet, Failure> {
    Ok(FilterSet::from_manifest(&read_text(path)?, registry)?)
}

pub fn localize(ctx: &mut Context, a: LocalizeArgs) -> Result<(), Failure> {
    let registry = ctx.typed(|c| c.registry())?;
    let fset = load_fset(&a.fset, &registry)?;
    ctx.set("fs.layer", &fset.layer_name)?;
    a.fs.apply(ctx)?;
    let params = ctx.typed(|c| c.fs_params())?;
    let backbone = ctx.typed(|c| c.backbone())?;
    let manifest = a.manifest.as_deref().map(Manifest::read).transpose()?;
    let jobs: Vec<String> = match &manifest {
        Some(m) => (0..m.records.len()).map(|i| m.key(i)).collect(),
        None => a.frames.iter().map(|p| p.display().to_string()).collect(),
    };
    let mut text = String::new();
    for (i, key) in jobs.iter().enumerate() {
        let frame = match &manifest {
            Some(m) => m.frame(i)?,
            None => read_frame(&a.frames[i]).map_err(|e| Error::Frame {
                index: i,
                source: Box::new(e),
            })?,
        };
        let loc = localize_frame(&backbone, &frame, &fset, &params)?;
        let line = json!({ "frame": key, "boxes": loc.boxes, "confidences": loc.scores });
        text.push_str(&line.to_string());
        text.push('\n');
    }
    write_all(&mut *output(a.out.as_deref())?, &text)
}

#[derive(Debug, Default)]
struct GridFile {
    layers: Vec<String>,
    top_n: Vec<usize>,
    beta: Vec<f64>,
    kernel: Vec<usize>,
    class: Option<String>,
    min_area: usize,
    lambda: f64,
    select_fraction: f64,
    seed: u64,
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, Error> {
    v.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Format(format!("grid `{key}`: cannot parse `{}`", x.trim())))
        })
        .collect()
}

fn one<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, Error> {
    v.parse().map_err(|_| Error::Format(format!("grid `{key}`: cannot parse `{v}`")))
}

impl GridFile {
    fn parse(text: &str) -> Result<Self, Error> {
        let mut g = GridFile {
            min_area: 1,
            lambda: 0.5,
            select_fraction: 0.5,
            ..Default::default()
        };
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("grid line `{line}` is not key = value")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "layer" => g.layers = v.split(',').map(|s| s.trim().to_string()).collect(),
                "top_n" => g.top_n = list(k, v)?,
                "beta" => g.beta = list(k, v)?,
                "kernel" => g.kernel = list(k, v)?,
                "class" => g.class = Some(v.to_string()),
                "min_area" => g.min_area = one(k, v)?,
                "lambda" => g.lambda = one(k, v)?,
                "select_fraction" => g.select_fraction = one(k, v)?,
                "seed" => g.seed = one(k, v)?,
                _ => return Err(Error::Format(format!("unknown grid key `{k}`"))),
            }
        }
        for (name, empty) in [
            ("layer", g.layers.is_empty()),
            ("top_n", g.top_n.is_empty()),
            ("beta", g.beta.is_empty()),
            ("kernel", g.kernel.is_empty()),
        ] {
            if empty {
                return Err(Error::Format(format!("grid file lacks `{name}`")));
            }
        }
        if !(g.select_fraction > 0.0 && g.select_fraction < 1.0) {
            return Err(Error::Format("select_fraction must lie strictly between 0 and 1".into()));
        }
        Ok(g)
    }
}

pub fn sweep(ctx: &mut Context, a: SweepArgs) -> Result<(), Failure> {
    let g = GridFile::parse(&read_text(&a.grid)?)?;
    let class = a
        .class
        .or(g.class.clone())
        .ok_or_else(|| usage("no class: pass --class or set `class` in the grid file"))?;
    let registry = ctx.typed(|c| c.registry())?;
    let label = registry.by_name(&class).map_err(|e| usage(e.to_string()))?;
    let backbone = ctx.typed(|c| c.backbone())?;
    let known = backbone.layer_names();
    if let Some(l) = g.layers.iter().find(|l| !known.contains(l)) {
        return Err(Error::UnknownLayer(l.clone()).into());
    }
    let m = Manifest::read(&a.manifest)?;
    let split = split(
        &m.records,
        &SplitSpec {
            train: g.select_fraction,
            val: 0.0,
            test: 1.0 - g.select_fraction,
            seed: g.seed,
        },
    )?;
    let select_set = class_frames(&m, &class, split.train)?;
    let eval_set = class_frames(&m, &class, split.test)?;
    let layers: Vec<&str> = g.layers.iter().map(String::as_str).collect();
    let points = grid(&layers, &g.top_n, &g.beta, &g.kernel);
    let table = run_sweep(&backbone, label, &select_set, &eval_set, &points, g.min_area, g.lambda)?;
    write_all(&mut *output(a.out.as_deref())?, &table.to_csv())
}
