use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ordshap::gateway::GatewayStats;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Everything needed to reproduce a run. Embedded in every JSON output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Every parsed flag, defaults included.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    /// SHA-256 of each input file, keyed by the path given.
    pub inputs: BTreeMap<String, String>,
    pub wall_clock_secs: f64,
    pub model_calls: u64,
    pub sequences_sent: u64,
    pub cache_hit_rate: f64,
}

/// Collects input hashes while a command runs.
pub struct Recorder {
    command: &'static str,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: BTreeMap<String, String>,
    started: Instant,
}

impl Recorder {
    pub fn start(command: &'static str, args: &impl Serialize, seed: Option<u64>) -> Self {
        Self {
            command,
            config: serde_json::to_value(args).unwrap_or(serde_json::Value::Null),
            seed,
            inputs: BTreeMap::new(),
            started: Instant::now(),
        }
    }

    /// Reads a file and records its hash.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn read_json<T: serde::de::DeserializeOwned>(&mut self, path: &Path) -> Result<T, CliError> {
        let bytes = self.read(path)?;
        serde_json::from_slice(&bytes).map_err(|source| CliError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn finish(self, stats: GatewayStats) -> RunManifest {
        RunManifest {
            command: self.command.to_string(),
            config: self.config,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: self.inputs,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            model_calls: stats.round_trips,
            sequences_sent: stats.sequences_sent,
            cache_hit_rate: stats.hit_rate(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::create_dir_all(dir)
        .and_then(|()| fs::write(&path, contents))
        .map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
    eprintln!("wrote {}", path.display());
    Ok(path)
}

pub fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(ordshap::Error::from)?;
    text.push('\n');
    write_file(dir, name, text.as_bytes())
}
