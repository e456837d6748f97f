use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use gesture_core::caption::tokenize;
use gesture_core::dataset::read_manifest;
use gesture_core::geometry::BBox;
use gesture_core::metrics::{
    average_precision, avg_iou, corpus_bleu, detection_f1, mean_ap, ConfusionTally, DetectionRecord,
    ScoredBox,
};
use gesture_core::pinch::ZoomAction;
use gesture_core::Error;
use serde_json::Value;

use crate::context::{output, usage, write_all, Context, Failure, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Classify,
    Detect,
    Caption,
    Pinch,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    task: Task,
    /// Predictions, one JSON object per line. Lines pair with truth records
    /// by their `frame` key when every line has one, otherwise by order.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth manifest.
    #[arg(long)]
    truth: PathBuf,
    /// Prediction field, dotted for nesting (`payload.text`). Defaults:
    /// `label`, `boxes`, `caption`, `action`.
    #[arg(long)]
    field: Option<String>,
    /// IoU threshold for detection.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_lines(path: &Path) -> Result<Vec<Value>, Failure> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(v);
    }
    Ok(out)
}

fn lookup<'a>(v: &'a Value, dotted: &str) -> Option<&'a Value> {
    dotted.split('.').try_fold(v, |v, k| v.get(k)).filter(|v| !v.is_null())
}

/// Prediction line for each truth record, in record order.
fn align<'a>(preds: &'a [Value], truth: &Manifest) -> Result<Vec<&'a Value>, Failure> {
    let keyed: Option<HashMap<&str, &Value>> = preds
        .iter()
        .map(|p| p.get("frame").and_then(Value::as_str).map(|k| (k, p)))
        .collect();
    match keyed {
        Some(map) if !preds.is_empty() => (0..truth.records.len())
            .map(|i| {
                let key = truth.key(i);
                map.get(key.as_str())
                    .copied()
                    .ok_or_else(|| Error::Format(format!("no prediction for frame `{key}`")).into())
            })
            .collect(),
        _ => {
            if preds.len() != truth.records.len() {
                return Err(Error::Format(format!(
                    "{} predictions for {} truth records",
                    preds.len(),
                    truth.records.len()
                ))
                .into());
            }
            Ok(preds.iter().collect())
        }
    }
}

fn bad(i: usize, what: &str) -> Failure {
    Error::Format(format!("prediction for record {i}: {what}")).into()
}

fn f6(out: &mut String, cells: &[f64]) {
    for c in cells {
        let _ = write!(out, ",{c:.6}");
    }
    out.push('\n');
}

fn classify(ctx: &Context, truth: &Manifest, preds: &[&Value], field: &str) -> Result<String, Failure> {
    let registry = ctx.typed(|c| c.registry())?;
    let negative = registry.negative();
    let mut tally = ConfusionTally::new(registry.len());
    for (i, p) in preds.iter().enumerate() {
        let t = truth.records[i].label(&registry)?.index();
        let predicted = match lookup(p, field) {
            Some(Value::String(s)) => registry.by_name(s)?,
            Some(_) => return Err(bad(i, &format!("`{field}` is not a string"))),
            None => negative.ok_or_else(|| bad(i, &format!("no `{field}` and no negative label")))?,
        };
        tally.record(predicted.index(), t);
    }
    let report = tally.report();
    let mut out = String::from("class,precision,recall,f1\n");
    for (label, s) in registry.labels().zip(&report.per_class) {
        out.push_str(registry.name(label)?);
        f6(&mut out, &[s.precision, s.recall, s.f1]);
    }
    out.push_str("macro");
    f6(&mut out, &[report.macro_precision, report.macro_recall, report.macro_f1]);
    Ok(out)
}

fn detect(truth: &Manifest, preds: &[&Value], field: &str, lambda: f64) -> Result<String, Failure> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(usage("--lambda must lie in [0, 1]"));
    }
    let mut by_class: BTreeMap<&str, Vec<DetectionRecord>> = BTreeMap::new();
    for (i, p) in preds.iter().enumerate() {
        let r = &truth.records[i];
        let boxes: Vec<BBox> = match lookup(p, field) {
            None => Vec::new(),
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| bad(i, &e.to_string()))?,
        };
        let record = match lookup(p, "confidences") {
            None => DetectionRecord::unscored(&boxes, &r.fingertip_boxes),
            Some(v) => {
                let conf: Vec<f64> = serde_json::from_value(v.clone()).map_err(|e| bad(i, &e.to_string()))?;
                if conf.len() != boxes.len() {
                    return Err(bad(i, "confidences and boxes differ in length"));
                }
                DetectionRecord {
                    predictions: boxes
                        .iter()
                        .zip(conf)
                        .map(|(&bbox, confidence)| ScoredBox { bbox, confidence })
                        .collect(),
                    truths: r.fingertip_boxes.clone(),
                }
            }
        };
        by_class.entry(r.gesture.as_str()).or_default().push(record);
    }
    // classes without any fingertip box are not detection targets
    by_class.retain(|_, recs| recs.iter().any(|r| !r.truths.is_empty()));
    if by_class.is_empty() {
        return Err(Error::NoGroundTruth.into());
    }
    let mut out = String::from("class,images,ap,avg_iou,precision,recall,f1\n");
    let mut aps = Vec::new();
    let mut all = Vec::new();
    for (class, recs) in &by_class {
        let ap = average_precision(recs, lambda)?;
        let s = detection_f1(recs, lambda);
        let _ = write!(out, "{class},{}", recs.len());
        f6(&mut out, &[ap, avg_iou(recs, lambda), s.precision, s.recall, s.f1]);
        aps.push(Some(ap));
        all.extend(recs.iter().cloned());
    }
    let s = detection_f1(&all, lambda);
    let _ = write!(out, "all,{}", all.len());
    f6(&mut out, &[mean_ap(&aps)?, avg_iou(&all, lambda), s.precision, s.recall, s.f1]);
    Ok(out)
}

fn caption(truth: &Manifest, preds: &[&Value], field: &str) -> Result<String, Failure> {
    let mut pairs = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        let r = &truth.records[i];
        if r.captions.is_empty() {
            continue;
        }
        let text = match lookup(p, field) {
            Some(Value::String(s)) => s.as_str(),
            Some(_) => return Err(bad(i, &format!("`{field}` is not a string"))),
            None => "",
        };
        pairs.push((tokenize(text), r.captions.iter().map(|c| tokenize(c)).collect::<Vec<_>>()));
    }
    if pairs.is_empty() {
        return Err(Error::NoGroundTruth.into());
    }
    let mut out = String::from("metric,value\n");
    for n in (1..=4).rev() {
        let _ = writeln!(out, "bleu{n},{:.6}", corpus_bleu(&pairs, n)?);
    }
    let _ = writeln!(out, "captions,{}", pairs.len());
    Ok(out)
}

fn pinch(truth: &Manifest, preds: &[&Value], field: &str) -> Result<String, Failure> {
    let mut tally = ConfusionTally::new(ZoomAction::ALL.len());
    let (mut n, mut correct) = (0usize, 0usize);
    for (i, p) in preds.iter().enumerate() {
        let Some(t) = truth.records[i].zoom_label else {
            continue;
        };
        let predicted: ZoomAction = match lookup(p, field) {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| bad(i, &e.to_string()))?,
            None => ZoomAction::NoZoom,
        };
        tally.record(predicted.index(), t.index());
        n += 1;
        correct += (predicted == t) as usize;
    }
    if n == 0 {
        return Err(Error::NoGroundTruth.into());
    }
    let report = tally.report();
    let mut out = String::from("class,precision,recall,f1\n");
    for (a, s) in ZoomAction::ALL.iter().zip(&report.per_class) {
        let name = serde_json::to_value(a).map_err(Error::from)?;
        out.push_str(name.as_str().unwrap_or_default());
        f6(&mut out, &[s.precision, s.recall, s.f1]);
    }
    out.push_str("macro");
    f6(&mut out, &[report.macro_precision, report.macro_recall, report.macro_f1]);
    let acc = correct as f64 / n as f64;
    out.push_str("accuracy");
    f6(&mut out, &[acc, acc, acc]);
    Ok(out)
}

pub fn run(ctx: &mut Context, a: EvaluateArgs) -> Result<(), Failure> {
    let truth = Manifest {
        records: read_manifest(&a.truth)?,
        base: PathBuf::new(),
    };
    let lines = read_lines(&a.pred)?;
    let preds = align(&lines, &truth)?;
    let default = match a.task {
        Task::Classify => "label",
        Task::Detect => "boxes",
        Task::Caption => "caption",
        Task::Pinch => "action",
    };
    let field = a.field.as_deref().unwrap_or(default);
    let table = match a.task {
        Task::Classify => classify(ctx, &truth, &preds, field)?,
        Task::Detect => detect(&truth, &preds, field, a.lambda)?,
        Task::Caption => caption(&truth, &preds, field)?,
        Task::Pinch => pinch(&truth, &preds, field)?,
    };
    write_all(&mut *output(a.out.as_deref())?, &table)
}
