//! Output directories, run manifests and serialisation helpers.

use crate::error::CliError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Creates `dir`, refusing a non-empty existing one unless `force` is set.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let non_empty = !dir.is_dir() || fs::read_dir(dir).map_err(|e| CliError::write(dir, e))?.next().is_some();
        if non_empty && !force {
            return Err(CliError::Collision(dir.to_path_buf()));
        }
        if !dir.is_dir() {
            return Err(CliError::Input(format!("{} is not a directory", dir.display())));
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))
}

/// Refuses to overwrite any existing `files` unless `force` is set.
pub fn check_files(files: &[PathBuf], force: bool) -> Result<(), CliError> {
    match files.iter().find(|f| f.exists()) {
        Some(f) if !force => Err(CliError::Collision(f.clone())),
        _ => Ok(()),
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::read(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        Ok(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

/// Record of one invocation, enough to re-run it.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub started_at: Option<String>,
    pub finished_at: Option<String>,
}

/// Wall-clock bookkeeping that is switched off by `--no-timestamps`.
#[derive(Clone, Copy, Debug)]
pub struct Clock {
    pub enabled: bool,
}

impl Clock {
    pub fn now(&self) -> Option<String> {
        self.enabled
            .then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true))
    }
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seed: Option<u64>, clock: Clock) -> Self {
        RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config).expect("config serialises"),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: clock.now(),
            finished_at: None,
        }
    }

    pub fn finish(mut self, path: &Path, clock: Clock) -> Result<(), CliError> {
        self.outputs.sort();
        self.finished_at = clock.now();
        write_json(path, &self)
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::write(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).expect("value serialises");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r).expect("row serialises");
        buf.push(b'\n');
    }
    write_bytes(path, &buf)
}

/// Writes a CSV with a fixed header; every row must have the same arity.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    w.write_record(header).map_err(err)?;
    for r in rows {
        debug_assert_eq!(r.len(), header.len());
        w.write_record(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::write(path, e.into_error()))?;
    write_bytes(path, &bytes)
}

/// Prints JSON to stdout, or writes it when `out` is set.
pub fn emit_json(out: Option<&Path>, value: &impl Serialize) -> Result<(), CliError> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            let s = serde_json::to_string_pretty(value).expect("value serialises");
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{s}").map_err(|e| CliError::write(Path::new("<stdout>"), e))
        }
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}
