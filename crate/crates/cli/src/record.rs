//! Reproducibility records written beside every command's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use glioseg::augment::AugmentConfig;
use glioseg::classical_seg::SegmentConfig;
use glioseg::models::ModelSpec;
use glioseg::preprocess::PreprocessConfig;
use glioseg::training::TrainConfig;
use glioseg::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Environment variable capping data-loading threads.
pub const WORKERS_ENV: &str = "GBM_NUM_WORKERS";

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Worker count from [`WORKERS_ENV`], defaulting to the logical processor count.
pub fn num_workers() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Every setting a command resolved, validated together before any work starts.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<PreprocessConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment: Option<SegmentConfig>,
    /// Command-specific settings that have no owning config type.
    pub options: BTreeMap<String, serde_json::Value>,
    pub log_level: String,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = &self.preprocess {
            c.validate()?;
        }
        if let Some(c) = &self.augment {
            c.validate()?;
        }
        if let Some(c) = &self.train {
            c.validate()?;
        }
        if let Some(c) = &self.model {
            c.validate()?;
        }
        if let Some(c) = &self.segment {
            c.validate()?;
        }
        Ok(())
    }

    pub fn option(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("option serializes");
        self.options.insert(key.to_string(), v);
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub num_workers: usize,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of each file written.
    pub outputs: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn new(command: &str, argv: Vec<String>, config: RunConfig, num_workers: usize) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv,
            status: "ok",
            error: None,
            config,
            seeds: BTreeMap::new(),
            num_workers,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn fail(&mut self, error: &Error) {
        self.status = "error";
        self.error = Some(error.to_string());
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut text = serde_json::to_string_pretty(self).expect("record serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
