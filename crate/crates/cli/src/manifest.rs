use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;

/// Record of one command run; enough to repeat it exactly.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub grammar_sha256: Option<String>,
    pub config: Config,
    pub seeds: Vec<u64>,
    pub outputs: Vec<PathBuf>,
    pub timings: BTreeMap<String, f64>,
    pub results: BTreeMap<String, serde_json::Value>,
    #[serde(skip)]
    started: Option<Instant>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, config: &Config) -> Self {
        RunManifest {
            command: command.to_string(),
            args: std::env::args().collect(),
            grammar_sha256: None,
            config: config.clone(),
            seeds: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
            results: BTreeMap::new(),
            started: Some(Instant::now()),
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn timing(&mut self, name: &str, since: Instant) {
        self.timings.insert(name.to_string(), since.elapsed().as_secs_f64());
    }

    pub fn result(&mut self, key: &str, value: impl Serialize) {
        self.results.insert(key.to_string(), serde_json::to_value(value).expect("result serializes"));
    }

    /// Writes `manifest.json` into `dir`, recording total wall time.
    pub fn write(mut self, dir: &Path) -> Result<PathBuf> {
        if let Some(t) = self.started {
            self.timing("total", t);
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
