use std::path::{Path, PathBuf};

use clap::Args;
use gesture_core::engine::to_json_lines;
use gesture_core::Error;

use crate::context::{output, read_frame, write_all, write_file, Context, Failure};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Directory of `.atn` / `.ppm` frames, replayed in file-name order.
    #[arg(long)]
    frames: PathBuf,
    /// Predictions as JSON lines; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-stage timing CSV.
    #[arg(long)]
    timing: Option<PathBuf>,
    /// Temporal gate window.
    #[arg(long)]
    k: Option<usize>,
}

pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let io = |e| {
        Failure::Data(Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?
        .into_iter()
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("atn" | "ppm")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn run(ctx: &mut Context, a: SimulateArgs) -> Result<(), Failure> {
    ctx.set_opt("engine.k", a.k)?;
    let mut session = ctx.typed(|c| c.session())?;
    let files = frame_files(&a.frames)?;
    let (predictions, timing) = session.process_stream(files.iter().map(|p| read_frame(p)))?;
    write_all(&mut *output(a.out.as_deref())?, &to_json_lines(&predictions)?)?;
    let c = session.counters();
    log::info!(
        "{} frames, {} backbone forwards, {} head calls",
        c.frames,
        c.backbone_forwards,
        c.head_calls()
    );
    if let Some(t) = &a.timing {
        write_file(t, &timing.to_csv())?;
    }
    Ok(())
}
