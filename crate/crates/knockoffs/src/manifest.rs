//! Provenance record written next to every output.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{sha256_file, sha256_hex, write_file};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub subcommand: String,
    /// Digest of the settings that determine the outputs: the command line
    /// without output location or thread count, plus input digests.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub versions: BTreeMap<String, String>,
    /// Input path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

impl RunManifest {
    pub fn start(command_line: Vec<String>, subcommand: &str, seed: Option<u64>) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("knockoffs".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert("knockoffs-core".into(), knockoffs_core_version().into());
        RunManifest {
            command_line,
            subcommand: subcommand.into(),
            config_hash: String::new(),
            seed,
            versions,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Records every file in `dir` (except the manifest itself) and seals
    /// the manifest into `dir`.
    pub fn finish(mut self, dir: &Path, settings: &[String]) -> Result<Self> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
            .collect();
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let name = e.file_name().to_string_lossy().into_owned();
            if name != MANIFEST_FILE {
                self.outputs.insert(name, sha256_file(&e.path())?);
            }
        }
        let mut key = settings.join("\u{1f}");
        for (path, digest) in &self.inputs {
            key.push_str(&format!("\u{1e}{path}={digest}"));
        }
        self.config_hash = sha256_hex(key.as_bytes());
        self.finished_unix_ms = now_ms();
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        write_file(&dir.join(MANIFEST_FILE), json.as_bytes())?;
        Ok(self)
    }
}

fn knockoffs_core_version() -> &'static str {
    // both crates are versioned together in this workspace
    env!("CARGO_PKG_VERSION")
}
