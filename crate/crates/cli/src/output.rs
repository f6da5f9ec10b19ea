use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const MANIFEST: &str = "manifest.json";

/// Everything needed to rerun a command and check its inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub input_sha256: Option<String>,
    pub version: String,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: u64) -> Self {
        RunManifest {
            command: command.into(),
            argv: std::env::args().collect(),
            config: serde_json::to_value(config).expect("config serializes"),
            seed,
            input_sha256: None,
            version: env!("CARGO_PKG_VERSION").into(),
            outputs: Vec::new(),
            wall_time_secs: 0.0,
        }
    }

    pub fn finish(mut self, dir: &Path, name: &str, started: Instant) -> Result<(), Failure> {
        self.wall_time_secs = started.elapsed().as_secs_f64();
        write_json(&dir.join(name), &self)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, Failure> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)
        .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Validation(format!("malformed {}: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path)
        .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn out_dir(path: &str) -> Result<PathBuf, Failure> {
    let dir = PathBuf::from(path);
    fs::create_dir_all(&dir)
        .map_err(|e| Failure::Validation(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| Failure::Validation(format!("cannot write {}: {e}", path.display())))
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, Failure> {
    csv::Writer::from_path(path)
        .map_err(|e| Failure::Validation(format!("cannot write {}: {e}", path.display())))
}

pub fn csv_err(e: csv::Error) -> Failure {
    Failure::Validation(e.to_string())
}

/// Shortest round-trip decimal; empty for NaN.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}
