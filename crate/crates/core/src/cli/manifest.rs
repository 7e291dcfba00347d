use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NoradError, Result};
use crate::trainer::hash_json;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// Provenance record written next to every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub inputs: Vec<InputFile>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<PathBuf>,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| NoradError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Collects inputs and outputs while a command runs.
pub(super) struct Run {
    manifest: RunManifest,
    out: PathBuf,
}

impl Run {
    pub fn start(command: &str, argv: &[String], config: serde_json::Value, out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(|e| NoradError::io(out, e))?;
        Ok(Run {
            manifest: RunManifest {
                command: command.to_string(),
                argv: argv.to_vec(),
                config_hash: hash_json(&config),
                config,
                inputs: Vec::new(),
                seed: None,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix: now(),
                finished_unix: 0.0,
                outputs: Vec::new(),
            },
            out: out.to_path_buf(),
        })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn set_config(&mut self, config: serde_json::Value) {
        self.manifest.config_hash = hash_json(&config);
        self.manifest.config = config;
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn input(&mut self, path: &Path) -> Result<String> {
        let sha256 = hash_file(path)?;
        self.manifest.inputs.push(InputFile {
            path: path.to_path_buf(),
            sha256: sha256.clone(),
        });
        Ok(sha256)
    }

    pub fn output(&mut self, path: PathBuf) {
        if !self.manifest.outputs.contains(&path) {
            self.manifest.outputs.push(path);
        }
    }

    /// Writes `value` as pretty JSON under the output directory.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.out(name);
        write_json(&path, value)?;
        self.output(path.clone());
        Ok(path)
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.finished_unix = now();
        let path = self.out("manifest.json");
        write_json(&path, &self.manifest)?;
        Ok(self.manifest)
    }
}

pub(super) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| NoradError::io(path, e))
}
