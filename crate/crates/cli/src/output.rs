//! CSV emission, atomic file writes and run manifests.

use crate::error::CliError;
use crate::scenario::Scenario;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

pub const MANIFEST: &str = "manifest.json";

/// Seventeen significant digits, enough for an exact round trip.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Comma-separated table built in memory.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut text = header.iter().map(|h| h.as_ref()).collect::<Vec<_>>().join(",");
        text.push('\n');
        Csv { text }
    }

    pub fn row(&mut self, values: &[f64]) {
        let cells: Vec<String> = values.iter().map(|v| num(*v)).collect();
        self.cells(&cells);
    }

    pub fn cells<S: AsRef<str>>(&mut self, cells: &[S]) {
        self.text.push_str(&cells.iter().map(|c| c.as_ref()).collect::<Vec<_>>().join(","));
        self.text.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the manifest.
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invariant {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Invariant {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Invariant {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    InvariantFailure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub scenario_hash: String,
    pub scenario: Scenario,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub status: RunStatus,
    pub invariants: Vec<Invariant>,
    pub artifacts: Vec<Artifact>,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Collects the files of one run in its output directory.
pub struct RunDir {
    pub dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl RunDir {
    pub fn new(dir: PathBuf) -> Self {
        RunDir {
            dir,
            artifacts: Vec::new(),
        }
    }

    pub fn write(&mut self, file: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(file);
        write_atomic(&path, bytes)?;
        log::debug!("wrote {} ({} bytes)", path.display(), bytes.len());
        self.artifacts.push(Artifact {
            file: file.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, file: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(file, &bytes)
    }

    pub fn finish(
        self,
        scenario: &Scenario,
        started_unix: f64,
        invariants: Vec<Invariant>,
    ) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            tool: "kl".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            scenario_hash: scenario.hash()?,
            scenario: scenario.clone(),
            started_unix,
            finished_unix: unix_now(),
            status: if invariants.iter().all(|i| i.passed) {
                RunStatus::Success
            } else {
                RunStatus::InvariantFailure
            },
            invariants,
            artifacts: self.artifacts,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&self.dir.join(MANIFEST), &bytes)?;
        Ok(manifest)
    }
}

/// Loads a manifest and checks every artifact against its checksum.
pub fn load_verified(path: &Path) -> Result<(RunManifest, PathBuf), CliError> {
    let manifest: RunManifest = serde_json::from_slice(&read(path)?)?;
    let dir = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    for a in &manifest.artifacts {
        let bytes = read(&dir.join(&a.file))?;
        if sha256_hex(&bytes) != a.sha256 {
            return Err(CliError::Checksum(a.file.clone()));
        }
    }
    Ok((manifest, dir))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip_exactly() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6f64.sqrt(), f64::MAX, 5e-324] {
            assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn csv_layout() {
        let mut c = Csv::new(&["a", "b"]);
        c.row(&[1.0, -0.5]);
        c.cells(&["x", ""]);
        let text = String::from_utf8(c.into_bytes()).unwrap();
        assert_eq!(text, "a,b\n1.0000000000000000e0,-5.0000000000000000e-1\nx,\n");
    }

    #[test]
    fn sha256_of_abc() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
