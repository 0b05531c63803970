//! Per-run output directory and its `manifest.json`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(
        &std::fs::read(path).with_context(|| format!("reading {}", path.display()))?,
    ))
}

#[derive(Serialize)]
struct ManifestDoc<'a> {
    command: &'a str,
    args: &'a [String],
    status: &'a str,
    error: Option<&'a str>,
    seed: u64,
    config: &'a Value,
    inputs: &'a [(String, String)],
    outputs: Vec<String>,
    started_at: &'a str,
    finished_at: Option<String>,
    wall_clock_seconds: Option<f64>,
}

pub struct Run {
    pub dir: PathBuf,
    command: String,
    args: Vec<String>,
    seed: u64,
    config: Value,
    inputs: Vec<(String, String)>,
    outputs: Vec<PathBuf>,
    started_at: String,
    clock: Instant,
}

impl Run {
    /// Creates `<root>/<command>-<UTC timestamp>-<config hash>` and writes
    /// the initial manifest.
    pub fn start(root: &Path, command: &str, args: Vec<String>, seed: u64, config: Value) -> Result<Self> {
        let now = Utc::now();
        let hash = sha256_hex(format!("{command}\n{config}").as_bytes());
        let base = format!("{command}-{}-{}", now.format("%Y%m%dT%H%M%SZ"), &hash[..8]);
        let mut dir = root.join(&base);
        let mut n = 1;
        while dir.exists() {
            n += 1;
            dir = root.join(format!("{base}-{n}"));
        }
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let run = Self {
            dir,
            command: command.into(),
            args,
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: now.to_rfc3339_opts(SecondsFormat::Millis, true),
            clock: Instant::now(),
        };
        run.write("running", None, false)?;
        Ok(run)
    }

    pub fn input(&mut self, name: impl Into<String>, hash: impl Into<String>) -> Result<()> {
        self.inputs.push((name.into(), hash.into()));
        self.write("running", None, false)
    }

    /// Path of a new output inside the run directory.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn write(&self, status: &str, error: Option<&str>, done: bool) -> Result<()> {
        let doc = ManifestDoc {
            command: &self.command,
            args: &self.args,
            status,
            error,
            seed: self.seed,
            config: &self.config,
            inputs: &self.inputs,
            outputs: self
                .outputs
                .iter()
                .map(|p| p.strip_prefix(&self.dir).unwrap_or(p).display().to_string())
                .collect(),
            started_at: &self.started_at,
            finished_at: done.then(|| Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)),
            wall_clock_seconds: done.then(|| self.clock.elapsed().as_secs_f64()),
        };
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&doc)?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn finish(&self, result: &Result<()>) -> Result<()> {
        match result {
            Ok(()) => self.write("finished", None, true),
            Err(e) => self.write("failed", Some(&format!("{e:#}")), true),
        }
    }
}
