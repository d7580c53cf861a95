//! Run manifests: written first, finalized last, with every path relative
//! to the manifest's directory.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub seed: Option<u64>,
    /// Hash over the git-style blob ids of all inputs.
    pub input_hash: String,
    pub inputs: Vec<String>,
    pub out_dir: String,
    pub outputs: Vec<String>,
    pub status: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub wall_time_secs: Option<f64>,
}

/// `sha256("blob <len>\0" ‖ bytes)`, as git names objects.
pub fn blob_id(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn relative(path: &Path, base: &Path) -> String {
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let rel = pathdiff::diff_paths(abs(path), abs(base)).unwrap_or_else(|| path.to_path_buf());
    rel.to_string_lossy().replace('\\', "/")
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// An output directory with its manifest.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    start: Instant,
}

impl Run {
    /// Creates `dir` and writes the initial manifest before anything else.
    pub fn start(dir: &Path, command: &str, config: Option<&Path>, seed: Option<u64>, inputs: &[PathBuf]) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut entries = Vec::new();
        for p in config.into_iter().chain(inputs.iter().map(PathBuf::as_path)) {
            let bytes = std::fs::read(p).with_context(|| format!("reading input {}", p.display()))?;
            entries.push((relative(p, dir), blob_id(&bytes)));
        }
        entries.sort();
        entries.dedup();
        let mut h = Sha256::new();
        for (path, id) in &entries {
            h.update(format!("{id} {path}\n").as_bytes());
        }
        let run = Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                config: config.map(|c| relative(c, dir)),
                seed,
                input_hash: hex::encode(h.finalize()),
                inputs: entries.into_iter().map(|(p, _)| p).collect(),
                out_dir: ".".into(),
                outputs: Vec::new(),
                status: "running".into(),
                started_unix: now_unix(),
                finished_unix: None,
                wall_time_secs: None,
            },
            start: Instant::now(),
        };
        run.write()?;
        Ok(run)
    }

    fn write(&self) -> Result<()> {
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&self.manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    /// Path of a named output, recorded in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        if !self.manifest.outputs.iter().any(|o| o == name) {
            self.manifest.outputs.push(name.to_string());
        }
        self.dir.join(name)
    }

    pub fn finish(mut self, status: &str) -> Result<()> {
        self.manifest.status = status.into();
        self.manifest.finished_unix = Some(now_unix());
        self.manifest.wall_time_secs = Some(self.start.elapsed().as_secs_f64());
        self.write()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Writes pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}
