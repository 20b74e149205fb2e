use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST: &str = "manifest.json";

/// One record per invocation, written to `<out-dir>/manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Hex SHA-256 of the compact JSON form of `config`.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub datasets: Vec<String>,
    /// Crate version and checkpoint format.
    pub version: String,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    pub status: String,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
}

pub fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn config_hash(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: serde_json::Value,
        seeds: Vec<u64>,
        datasets: Vec<String>,
    ) -> Self {
        Self {
            command: command.into(),
            config_hash: config_hash(&config),
            config,
            seeds,
            datasets,
            version: format!(
                "zsim {} / checkpoint v{}",
                env!("CARGO_PKG_VERSION"),
                zsim_nn::checkpoint::FORMAT_VERSION
            ),
            started: now(),
            finished: 0.0,
            status: "running".into(),
            outputs: Vec::new(),
        }
    }

    /// Stamps the end time and lists the files under `dir`, sorted.
    pub fn finish(&mut self, dir: &Path, status: &str) -> Result<()> {
        self.finished = now();
        self.status = status.into();
        let mut outputs = Vec::new();
        collect(dir, dir, &mut outputs)?;
        outputs.retain(|p| p != MANIFEST && !p.ends_with(".tmp"));
        outputs.sort();
        self.outputs = outputs;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(MANIFEST), text + "\n")?;
        Ok(())
    }
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}
