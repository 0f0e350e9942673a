//! Artifact tracking: every command writes its outputs through a sink that
//! records sha256 hashes into a manifest and tears down partial outputs on
//! failure. Wall-clock timings go to a separate file excluded from the
//! manifest so artifact hashes are seed-stable.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "artifacts.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Serialize)]
struct ArtifactEntry {
    path: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct ArtifactManifest<'a> {
    command: &'a str,
    seed: Option<u64>,
    artifacts: Vec<ArtifactEntry>,
}

pub struct ArtifactSink {
    out_dir: PathBuf,
    command: String,
    seed: Option<u64>,
    written: Vec<PathBuf>,
    timings: Vec<(String, f64)>,
}

impl ArtifactSink {
    pub fn new(out_dir: &Path, command: &str, seed: Option<u64>) -> Result<Self, CliError> {
        fs::create_dir_all(out_dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            command: command.to_string(),
            seed,
            written: Vec::new(),
            timings: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
        fs::write(&path, bytes)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Register a file some library call wrote directly into the out dir.
    pub fn register(&mut self, path: PathBuf) {
        self.written.push(path);
    }

    pub fn time(&mut self, label: &str, seconds: f64) {
        self.timings.push((label.to_string(), seconds));
    }

    /// Write the timing file and the hash manifest. The timing file is
    /// deliberately absent from the manifest.
    pub fn finalize(self) -> Result<(), CliError> {
        let timing_json = serde_json::to_string_pretty(
            &self.timings.iter().map(|(l, s)| (l.clone(), *s)).collect::<Vec<_>>(),
        )
        .expect("timings serialize");
        fs::write(self.out_dir.join(TIMING_FILE), timing_json)
            .map_err(|e| CliError::Runtime(format!("cannot write timing file: {e}")))?;

        let mut entries = Vec::new();
        for path in &self.written {
            let bytes = fs::read(path)
                .map_err(|e| CliError::Runtime(format!("cannot hash {}: {e}", path.display())))?;
            let mut hasher = Sha256::new();
            hasher.update(&bytes);
            let digest: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
            let rel = path.strip_prefix(&self.out_dir).unwrap_or(path).display().to_string();
            entries.push(ArtifactEntry { path: rel, sha256: digest, bytes: bytes.len() });
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest =
            ArtifactManifest { command: &self.command, seed: self.seed, artifacts: entries };
        fs::write(
            self.out_dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
        .map_err(|e| CliError::Runtime(format!("cannot write manifest: {e}")))?;
        Ok(())
    }

    /// Delete everything written so far (failure path).
    pub fn cleanup(self) {
        for path in self.written.into_iter().rev() {
            let _ = fs::remove_file(&path);
        }
    }
}
