//! `manifest.txt`: resolved config, seeds, timings, failures and a SHA-256
//! digest of every other file in the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_NAME: &str = "manifest.txt";

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, Default)]
pub struct RunManifest {
    pub command: String,
    pub config: Vec<(String, String)>,
    pub seeds: Vec<(String, u64)>,
    /// Wall-clock seconds per stage.
    pub timings: Vec<(String, f64)>,
    pub failures: Vec<String>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            ..RunManifest::default()
        }
    }

    /// Runs `f`, recording its wall-clock time under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings
            .push((stage.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    /// Writes the manifest into `dir`, listing every regular file there.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut files: Vec<String> = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
            let entry = entry.map_err(|e| CliError::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name != MANIFEST_NAME && entry.path().is_file() {
                files.push(name);
            }
        }
        files.sort();
        let mut text = String::new();
        let _ = writeln!(text, "version = epl {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(text, "command = {}", self.command);
        text.push_str("\n[config]\n");
        for (k, v) in &self.config {
            let _ = writeln!(text, "{k} = {v}");
        }
        text.push_str("\n[seeds]\n");
        for (k, v) in &self.seeds {
            let _ = writeln!(text, "{k} = {v}");
        }
        text.push_str("\n[timings]\n");
        for (k, v) in &self.timings {
            let _ = writeln!(text, "{k} = {v:.3}s");
        }
        text.push_str("\n[failures]\n");
        for f in &self.failures {
            let _ = writeln!(text, "{f}");
        }
        text.push_str("\n[notes]\n");
        for n in &self.notes {
            let _ = writeln!(text, "{n}");
        }
        text.push_str("\n[files]\n");
        for name in files {
            let path = dir.join(&name);
            let _ = writeln!(text, "{}  {name}", file_digest(&path)?);
        }
        let path = dir.join(MANIFEST_NAME);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}

/// `(digest, name)` pairs from a manifest's `[files]` section.
pub fn read_file_digests(manifest: &str) -> Vec<(String, String)> {
    manifest
        .lines()
        .skip_while(|l| *l != "[files]")
        .skip(1)
        .filter_map(|l| l.split_once("  "))
        .map(|(d, n)| (d.to_string(), n.to_string()))
        .collect()
}
