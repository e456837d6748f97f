use std::path::{Path, PathBuf};

use clap::Args;
use gesture_core::metrics::{pareto_flags, ModelPoint};
use gesture_core::reference::ReferenceTable;
use gesture_core::Error;

use crate::context::{output, write_all, Failure};

#[derive(Debug, Args)]
pub struct ParetoArgs {
    /// CSV with columns `name,f1,params`. Defaults to the bundled model
    /// comparison (F1 in percent, parameters in millions).
    #[arg(long)]
    points: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(serde::Deserialize)]
struct Row {
    name: String,
    f1: f64,
    params: f64,
}

fn read_points(path: &Path) -> Result<Vec<ModelPoint>, Failure> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    r.deserialize::<Row>()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| Error::Format(format!("{} row {}: {e}", path.display(), i + 1)))?;
            Ok(ModelPoint::new(row.name, row.f1, row.params)?)
        })
        .collect()
}

pub fn run(a: ParetoArgs) -> Result<(), Failure> {
    let points = match &a.points {
        Some(p) => read_points(p)?,
        None => ReferenceTable::bundled().model_points()?,
    };
    if points.is_empty() {
        return Err(Error::Empty("model points".into()).into());
    }
    let flags = pareto_flags(&points);
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Failure::Data(Error::Format(e.to_string()));
    w.write_record(["name", "f1", "params", "non_dominated"]).map_err(csv_err)?;
    for (p, flag) in points.iter().zip(flags) {
        w.write_record([p.name.clone(), p.f1.to_string(), p.params.to_string(), flag.to_string()])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Data(Error::Format(e.to_string())))?;
    write_all(&mut *output(a.out.as_deref())?, &String::from_utf8_lossy(&bytes))
}
