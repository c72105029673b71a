//! Run manifest: which subcommand ran, over which configuration (as a
//! semantic hash), with which seed and thread count, how long each stage
//! took, and which artifacts were written.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use anyhow::Result;
use serde_json::{json, Value};

use crate::config::Experiment;
use crate::io;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Hashes the canonical configuration. serde_json emits object keys sorted
/// and floats in shortest round-trip form, so the digest depends only on the
/// resolved semantic content, never on document formatting.
pub fn config_hash(experiment: &Experiment) -> String {
    let canonical = experiment.canonical_value().to_string();
    format!("fnv1a64:{:016x}", fnv1a64(canonical.as_bytes()))
}

pub struct Manifest {
    subcommand: String,
    config_hash: String,
    seed: u64,
    threads: usize,
    overrides: BTreeMap<String, Value>,
    wall_ms: BTreeMap<String, u64>,
    artifacts: Vec<String>,
}

impl Manifest {
    pub fn new(subcommand: &str, experiment: &Experiment, threads: usize) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            config_hash: config_hash(experiment),
            seed: experiment.config.seed,
            threads,
            overrides: BTreeMap::new(),
            wall_ms: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    /// Records a command-line override that changed the effective run.
    pub fn record_override(&mut self, name: &str, value: Value) {
        self.overrides.insert(name.to_string(), value);
    }

    pub fn record_stage(&mut self, name: &str, elapsed: Duration) {
        self.wall_ms
            .insert(name.to_string(), elapsed.as_millis() as u64);
    }

    pub fn record_artifact(&mut self, name: &str) {
        self.artifacts.push(name.to_string());
    }

    pub fn value(&self) -> Value {
        json!({
            "subcommand": self.subcommand,
            "config_hash": self.config_hash,
            "package": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "threads": self.threads,
            "overrides": self.overrides,
            "wall_ms": self.wall_ms,
            "artifacts": self.artifacts,
        })
    }

    /// Writes `manifest.json` into the output directory.
    pub fn write(&self, dir: &Path) -> Result<()> {
        io::write_artifact(dir, "manifest.json", io::json_text(&self.value()).as_bytes())?;
        Ok(())
    }
}
