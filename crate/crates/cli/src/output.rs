//! Atomic artifact writing and the run manifest.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub const MANIFEST: &str = "manifest.json";
pub const ERROR_FILE: &str = "error.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Everything needed to reproduce a run. Contains no timestamps or paths so
/// that identical runs produce identical manifests.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub rng_scheme: &'static str,
    pub seed: Option<u64>,
    pub config_sha256: Option<String>,
    pub config: Option<String>,
    pub arguments: serde_json::Value,
    pub outputs: Vec<OutputRecord>,
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Output directory of one run; files are recorded in write order.
pub struct OutputDir {
    dir: PathBuf,
    records: Vec<OutputRecord>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            records: Vec::new(),
        })
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
        self.records.push(OutputRecord {
            file: name.to_string(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    /// Renders through `render` into memory, then writes atomically.
    pub fn write_with<F>(&mut self, name: &str, render: F) -> Result<(), Failure>
    where
        F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
    {
        let mut buf = Vec::new();
        render(&mut buf).map_err(|e| Failure::runtime(format!("cannot render {name}: {e}")))?;
        self.write_bytes(name, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        self.write_with(name, |buf| {
            serde_json::to_writer_pretty(&mut *buf, value).map_err(io::Error::other)?;
            buf.push(b'\n');
            Ok(())
        })
    }

    /// Writes the manifest last and clears a stale error file.
    pub fn finish(self, mut manifest: Manifest) -> Result<(), Failure> {
        manifest.outputs = self.records;
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Failure::runtime(e.to_string()))?;
        bytes.push(b'\n');
        let path = self.dir.join(MANIFEST);
        write_atomic(&path, &bytes).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
        let stale = self.dir.join(ERROR_FILE);
        if stale.exists() {
            fs::remove_file(&stale).map_err(|e| Failure::runtime(format!("cannot remove {}: {e}", stale.display())))?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    exit_code: u8,
    kind: &'static str,
    message: &'a str,
}

/// Best effort: the directory may be the thing that failed.
pub fn write_error(dir: &Path, command: &str, failure: &Failure) {
    let record = ErrorRecord {
        tool: "pdmp",
        version: env!("CARGO_PKG_VERSION"),
        command,
        exit_code: failure.exit_code(),
        kind: failure.kind(),
        message: failure.message(),
    };
    if fs::create_dir_all(dir).is_err() {
        return;
    }
    if let Ok(mut bytes) = serde_json::to_vec_pretty(&record) {
        bytes.push(b'\n');
        let _ = write_atomic(&dir.join(ERROR_FILE), &bytes);
    }
}
