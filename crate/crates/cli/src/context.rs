use std::fmt::Display;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use gesture_core::config::ConfigFile;
use gesture_core::dataset::{load_frame, read_manifest, SampleRecord};
use gesture_core::{Error, Tensor};

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration: exit code 1.
    Usage(String),
    /// Unreadable or inconsistent data: exit code 2.
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

impl Failure {
    /// Writes one JSON line to stderr and returns the exit code.
    pub fn report(self) -> ExitCode {
        let (kind, code, message) = match self {
            Failure::Usage(m) => ("usage", 1, m),
            Failure::Data(e) => ("data", 2, e.to_string()),
        };
        let line = serde_json::json!({ "error": kind, "code": code, "message": message });
        eprintln!("{line}");
        ExitCode::from(code)
    }
}

pub struct Context {
    pub cfg: ConfigFile,
}

impl Context {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Failure> {
        let mut cfg = match path {
            Some(p) => ConfigFile::load(p).map_err(|e| match e {
                Error::Io { .. } => Failure::Data(e),
                other => usage(other.to_string()),
            })?,
            None => ConfigFile::new(std::env::current_dir().unwrap_or_default()),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| usage(format!("--set expects key=value, got `{o}`")))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| usage(e.to_string()))?;
        }
        Ok(Self { cfg })
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> Result<(), Failure> {
        self.cfg
            .set(key, &value.to_string())
            .map_err(|e| usage(e.to_string()))
    }

    pub fn set_opt<T: Display>(&mut self, key: &str, value: Option<T>) -> Result<(), Failure> {
        match value {
            Some(v) => self.set(key, v),
            None => Ok(()),
        }
    }

    /// Runs a typed config accessor, reporting bad values as usage errors.
    pub fn typed<T>(&self, f: impl FnOnce(&ConfigFile) -> gesture_core::Result<T>) -> Result<T, Failure> {
        f(&self.cfg).map_err(|e| match e {
            Error::Param(m) => usage(m),
            other => Failure::Data(other),
        })
    }
}

/// Records of a manifest and the directory its paths resolve against.
pub struct Manifest {
    pub records: Vec<SampleRecord>,
    pub base: PathBuf,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, Failure> {
        let records = read_manifest(path)?;
        if records.is_empty() {
            return Err(Error::Empty(format!("manifest {}", path.display())).into());
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { records, base })
    }

    pub fn frame(&self, i: usize) -> Result<Tensor, Failure> {
        load_frame(&self.records[i], &self.base).map_err(|e| {
            Failure::Data(Error::Frame {
                index: i,
                source: Box::new(e),
            })
        })
    }

    /// Stable key of a record: its frame path, or `#index` for inline frames.
    pub fn key(&self, i: usize) -> String {
        match &self.records[i].frame {
            gesture_core::dataset::FrameSource::File { path } => path.clone(),
            gesture_core::dataset::FrameSource::Synthetic { .. } => format!("#{i}"),
        }
    }
}

/// A frame file: `.ppm` or `.atn`.
pub fn read_frame(path: &Path) -> gesture_core::Result<Tensor> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => gesture_core::dataset::read_ppm(path),
        _ => gesture_core::atn::load_tensor(path),
    }
}

/// Stdout, or a file when a path is given.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            Box::new(BufWriter::new(f))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn write_all(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| {
            Failure::Data(Error::Io {
                path: PathBuf::from("<output>"),
                source: e,
            })
        })
}

pub fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| {
        Failure::Data(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

pub fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| {
        Failure::Data(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}
