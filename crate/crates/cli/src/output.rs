//! Output directories written file by file through write-then-rename, with a
//! manifest describing the run.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Config file, when the command read one.
    pub config: Option<String>,
    /// Hex SHA-256 of the config file bytes, or of the canonical JSON of the
    /// arguments for flag-driven runs.
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    pub outputs: Vec<String>,
}

pub fn digest(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Write `bytes` to `path` through a sibling temporary file and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Failure(format!("{}: {e}", path.display()));
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io(e)
    })
}

/// Collects the files of one run and writes the manifest last.
pub struct OutDir {
    pub dir: PathBuf,
    manifest: RunManifest,
}

impl OutDir {
    pub fn new(dir: &Path, command: &str, config: Option<&Path>, config_digest: String, seeds: Vec<u64>) -> Self {
        OutDir {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                config: config.map(|p| p.display().to_string()),
                config_digest,
                seeds,
                version: env!("CARGO_PKG_VERSION").to_string(),
                started: now(),
                finished: 0.0,
                outputs: Vec::new(),
            },
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        atomic_write(&self.path(name), bytes)?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    /// Pretty JSON with a `manifest` key pointing back at the run manifest.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut v = serde_json::to_value(value).map_err(|e| CliError::Failure(e.to_string()))?;
        if let Value::Object(map) = &mut v {
            map.insert("manifest".into(), Value::String(MANIFEST.into()));
        }
        let mut text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Failure(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn finish(mut self) -> Result<RunManifest, CliError> {
        self.manifest.finished = now();
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::Failure(e.to_string()))?;
        text.push('\n');
        atomic_write(&self.path(MANIFEST), text.as_bytes())?;
        Ok(self.manifest)
    }
}
