//! Artifact envelope shared by every command.
//!
//! Each structured document carries the artifact version, the command
//! name, the global seed, the resolved configuration echo, and the
//! SHA-256 of every input file; tables are plain CSV with fixed headers.
//! A final `run.json` adds wall-clock timing and the digest of every
//! artifact written. Timing lives only there, so everything else is
//! reproduced bit for bit when a run is repeated from its embedded
//! configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use spex::io::{sha256_file, sha256_hex, write_atomic};
use spex::{Error, Result};

/// Provenance record for one input file.
#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    version: &'static str,
    command: &'static str,
    seed: u64,
    config: &'a Value,
    inputs: &'a BTreeMap<String, InputDigest>,
    results: &'a T,
}

#[derive(Serialize)]
struct RunLog<'a> {
    version: &'static str,
    command: &'static str,
    seed: u64,
    config: &'a Value,
    inputs: &'a BTreeMap<String, InputDigest>,
    started_unix_s: f64,
    duration_s: f64,
    outputs: &'a BTreeMap<String, String>,
}

/// One command invocation writing into one output directory.
pub struct Run {
    command: &'static str,
    seed: u64,
    config: Value,
    inputs: BTreeMap<String, InputDigest>,
    out_dir: PathBuf,
    started: Instant,
    started_unix_s: f64,
    outputs: BTreeMap<String, String>,
}

impl Run {
    pub fn new(command: &'static str, seed: u64, config: Value, out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir)?;
        let started_unix_s = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        Ok(Self {
            command,
            seed,
            config,
            inputs: BTreeMap::new(),
            out_dir: out_dir.to_path_buf(),
            started: Instant::now(),
            started_unix_s,
            outputs: BTreeMap::new(),
        })
    }

    /// Hashes one input file into the envelope under a stable name.
    pub fn add_input(&mut self, name: &str, path: &Path) -> Result<()> {
        let digest = InputDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        };
        self.inputs.insert(name.to_string(), digest);
        Ok(())
    }

    /// Writes one artifact atomically and records its digest.
    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(self.out_dir.join(name), bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Writes the command's structured document under the envelope.
    pub fn write_doc<T: Serialize>(&mut self, name: &str, results: &T) -> Result<()> {
        let doc = Document {
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed: self.seed,
            config: &self.config,
            inputs: &self.inputs,
            results,
        };
        let mut text = serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::invalid(format!("serialize {name}: {e}")))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Seals the run: `run.json` records timing and output digests.
    pub fn finish(self) -> Result<()> {
        let log = RunLog {
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed: self.seed,
            config: &self.config,
            inputs: &self.inputs,
            started_unix_s: self.started_unix_s,
            duration_s: self.started.elapsed().as_secs_f64(),
            outputs: &self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&log)
            .map_err(|e| Error::invalid(format!("serialize run.json: {e}")))?;
        text.push('\n');
        write_atomic(self.out_dir.join("run.json"), text.as_bytes())
    }
}

/// Formats a value for a CSV cell: the shortest decimal form that parses
/// back to the identical float; missing values render as empty cells.
pub fn csv_num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}
