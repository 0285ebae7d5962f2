//! Run manifests, content digests and all-or-nothing output writing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<FileDigest>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the manifest's directory unless absolute.
    pub outputs: Vec<FileDigest>,
    pub started_at_unix_ms: u128,
    pub finished_at_unix_ms: u128,
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Reads a file and records its digest.
pub fn read_digested(path: &Path) -> Result<(Vec<u8>, FileDigest), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let digest = FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    };
    Ok((bytes, digest))
}

/// Writes through a temporary sibling and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Outputs of one command, held in memory until the command has succeeded.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            files: Vec::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Relative paths land under the output directory.
    pub fn add(&mut self, path: impl AsRef<Path>, bytes: Vec<u8>) {
        self.files.push((self.dir.join(path), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, path: impl AsRef<Path>, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::invariant(format!("serialising output: {e}")))?;
        text.push('\n');
        self.add(path, text.into_bytes());
        Ok(())
    }

    fn manifest_path(&self, path: &Path) -> String {
        path.strip_prefix(&self.dir)
            .unwrap_or(path)
            .display()
            .to_string()
    }

    /// Writes every staged file, then the manifest. On failure, files
    /// already written by this call are removed.
    pub fn commit(self, mut manifest: RunManifest) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(&self.dir)
            .map_err(|e| CliError::input(format!("{}: {e}", self.dir.display())))?;
        let mut written: Vec<PathBuf> = Vec::new();
        let fail = |written: &[PathBuf], path: &Path, e: std::io::Error| {
            for p in written {
                let _ = fs::remove_file(p);
            }
            CliError::input(format!("writing {}: {e}", path.display()))
        };
        manifest.outputs.clear();
        for (path, bytes) in &self.files {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| fail(&written, path, e))?;
            }
            write_atomic(path, bytes).map_err(|e| fail(&written, path, e))?;
            written.push(path.clone());
            manifest.outputs.push(FileDigest {
                path: self.manifest_path(path),
                sha256: sha256_hex(bytes),
            });
        }
        manifest.finished_at_unix_ms = now_ms();
        let manifest_path = self.dir.join(RunManifest::file_name(&manifest.command));
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::invariant(format!("serialising manifest: {e}")))?;
        text.push('\n');
        write_atomic(&manifest_path, text.as_bytes()).map_err(|e| fail(&written, &manifest_path, e))?;
        written.push(manifest_path);
        Ok(written)
    }
}
