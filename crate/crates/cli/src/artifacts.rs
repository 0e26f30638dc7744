//! Output directory bookkeeping and the run manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
    /// CSV column names; empty for other formats.
    pub columns: Vec<String>,
    pub description: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Hash of the config file bytes; `null` for the built-in defaults.
    pub config_sha256: Option<String>,
    pub exit_code: i32,
    pub status: String,
    pub message: String,
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects files written under one output directory.
pub struct ArtifactSet {
    root: PathBuf,
    entries: Vec<ArtifactEntry>,
}

impl ArtifactSet {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ArtifactEntry] {
        &self.entries
    }

    /// Writes `bytes` to `rel` and records it. A `.csv` file's first line
    /// is taken as its column list.
    pub fn write(&mut self, rel: &str, bytes: &[u8], description: &str) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        let columns = if rel.ends_with(".csv") {
            csv_columns(bytes)
        } else {
            vec![]
        };
        self.entries.retain(|e| e.path != rel);
        self.entries.push(ArtifactEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
            columns,
            description: description.to_string(),
        });
        Ok(())
    }

    /// Like [`Self::write`] for content produced by a writer callback.
    pub fn write_with<F>(&mut self, rel: &str, description: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf).with_context(|| format!("formatting {rel}"))?;
        self.write(rel, &buf, description)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T, description: &str) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes(), description)
    }

    /// Writes the manifest last; it is not listed in itself.
    pub fn finish(self, mut manifest: Manifest) -> Result<PathBuf> {
        manifest.artifacts = self.entries;
        let path = self.root.join(MANIFEST);
        let mut f = std::fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        writeln!(f)?;
        Ok(path)
    }
}

fn csv_columns(bytes: &[u8]) -> Vec<String> {
    let text = String::from_utf8_lossy(bytes);
    let header = text.lines().next().unwrap_or("");
    if header.is_empty() {
        return vec![];
    }
    header.split(',').map(|c| c.trim().to_string()).collect()
}
