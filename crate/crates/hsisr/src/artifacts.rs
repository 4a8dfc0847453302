//! Work-directory bookkeeping: tensor I/O with content hashes, the artifact
//! registry that later commands validate against, and the directory lock.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use hsisr_core::tensor::{decode_tensor, encode_tensor, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreContext, PipelineError, Result};

pub const REGISTRY_FILE: &str = "artifacts.json";
pub const LOCK_FILE: &str = ".hsisr.lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub shape: Vec<usize>,
    pub sha256: String,
}

/// Shapes and hashes of the tensors produced in a work dir, keyed by file name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

impl Registry {
    pub fn load(work_dir: &Path) -> Result<Self> {
        let path = work_dir.join(REGISTRY_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        read_json(&path)
    }

    pub fn save(&self, work_dir: &Path) -> Result<()> {
        write_json(&work_dir.join(REGISTRY_FILE), self)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

/// A tensor read from disk along with the hash of its bytes.
pub struct Loaded {
    pub tensor: Tensor,
    pub sha256: String,
}

pub fn read_tensor(path: &Path) -> Result<Loaded> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    let tensor = decode_tensor(&bytes).context(|| format!("reading {}", path.display()))?;
    Ok(Loaded {
        tensor,
        sha256: sha256_hex(&bytes),
    })
}

/// Writes a tensor and returns its registry entry.
pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<ArtifactEntry> {
    let bytes = encode_tensor(tensor);
    std::fs::write(path, &bytes).map_err(|e| PipelineError::io(path, e))?;
    Ok(ArtifactEntry {
        shape: tensor.shape(),
        sha256: sha256_hex(&bytes),
    })
}

/// Exclusive claim on a work directory, released on drop.
#[derive(Debug)]
pub struct WorkDirLock {
    path: PathBuf,
}

impl WorkDirLock {
    pub fn acquire(work_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(work_dir).map_err(|e| PipelineError::io(work_dir, e))?;
        let path = work_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Validation(format!(
                    "work dir {} is in use by another hsisr command (remove {} if stale)",
                    work_dir.display(),
                    path.display()
                )))
            }
            Err(e) => Err(PipelineError::io(&path, e)),
        }
    }
}

impl Drop for WorkDirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
