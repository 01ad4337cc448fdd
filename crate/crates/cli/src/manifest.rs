use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ARCH_GTN: &str = "GTN";
pub const ARCH_BASELINE: &str = "MT-A3C-surrogate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// What the file holds: `checkpoint`, `log`, `scores`, `rfs`, ...
    pub kind: String,
    /// Path relative to the output directory.
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one CLI run, written last into the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub architecture: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub build: String,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::from)
    }

    pub fn artifact(&self, kind: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.kind == kind)
    }
}

pub fn timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn build_id() -> String {
    format!("gtn {}", env!("CARGO_PKG_VERSION"))
}

pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Files written by one run. Dropped without [`Outputs::finish`], it removes
/// everything it wrote, so failed runs leave no orphans.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<(String, PathBuf)>,
    finished: bool,
}

impl Outputs {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_owned(),
            written: Vec::new(),
            finished: false,
        })
    }

    /// Reserves `name` for an artifact of `kind` and returns its full path.
    pub fn path(&mut self, kind: &str, name: &str) -> PathBuf {
        let path = self.dir.join(name);
        self.written.push((kind.to_string(), path.clone()));
        path
    }

    /// Writes an artifact through a buffered writer.
    pub fn write<E, F>(&mut self, kind: &str, name: &str, body: F) -> Result<PathBuf, E>
    where
        E: From<std::io::Error>,
        F: FnOnce(&mut BufWriter<File>) -> Result<(), E>,
    {
        let path = self.path(kind, name);
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    /// Hashes every artifact, writes the manifest and keeps the files.
    pub fn finish(mut self, mut manifest: RunManifest) -> std::io::Result<RunManifest> {
        manifest.artifacts = self
            .written
            .iter()
            .map(|(kind, path)| {
                Ok(Artifact {
                    kind: kind.clone(),
                    path: path.strip_prefix(&self.dir).unwrap_or(path).to_owned(),
                    sha256: file_sha256(path)?,
                })
            })
            .collect::<std::io::Result<_>>()?;
        let path = self.dir.join(MANIFEST_FILE);
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        w.write_all(b"\n")?;
        w.flush()?;
        self.finished = true;
        Ok(manifest)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.finished {
            for (_, path) in &self.written {
                let _ = std::fs::remove_file(path);
            }
        }
    }
}
