//! Run records written next to every output.

use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use iqamix_core::TOOL_VERSION;

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub command: String,
    /// Digest of the command, its effective settings and every input byte.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub params: Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub started: String,
    pub finished: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Wall-clock time, or `SOURCE_DATE_EPOCH` when set so that records can be
/// reproduced byte for byte.
fn now() -> String {
    let t = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<u64>().ok())
        .map(|s| UNIX_EPOCH + Duration::from_secs(s))
        .unwrap_or_else(SystemTime::now);
    humantime::format_rfc3339_seconds(t).to_string()
}

/// Collects what a command read so the record can be written at the end.
pub struct Recorder {
    command: String,
    seed: Option<u64>,
    params: Value,
    inputs: Vec<InputDigest>,
    started: String,
}

impl Recorder {
    pub fn start(command: &str, seed: Option<u64>, params: Value) -> Self {
        Self {
            command: command.into(),
            seed,
            params,
            inputs: Vec::new(),
            started: now(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest {
            role: role.into(),
            path: path.display().to_string(),
            sha256: file_sha256(path)?,
        });
        Ok(())
    }

    fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update([0]);
        h.update(self.params.to_string().as_bytes());
        h.update([0]);
        if let Some(seed) = self.seed {
            h.update(seed.to_le_bytes());
        }
        for i in &self.inputs {
            h.update(i.role.as_bytes());
            h.update([0]);
            h.update(i.sha256.as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes `<primary>.run.json` and returns its path.
    pub fn finish(self, primary: &Path, outputs: &[&Path]) -> Result<PathBuf> {
        let record = RunRecord {
            config_hash: self.config_hash(),
            command: self.command,
            seed: self.seed,
            tool_version: TOOL_VERSION.into(),
            params: self.params,
            inputs: self.inputs,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            started: self.started,
            finished: now(),
        };
        let mut name = primary.file_name().unwrap_or_default().to_os_string();
        name.push(".run.json");
        let path = primary.with_file_name(name);
        let mut text = serde_json::to_string_pretty(&record)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
