//! The TOML configuration file used by the mixture commands.

use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use iqamix_core::datasets::{load_pool, PoolTag};
use iqamix_core::manifest::{MixtureCounts, MixturePools, PoolIndex};
use iqamix_core::mixopt::SearchConfig;
use iqamix_core::oracle::{
    ExternalConfig, ExternalOracle, Oracle, SyntheticConfig, SyntheticOracle,
};

/// A problem with flags or configuration (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub pools: Option<PoolsConfig>,
    pub oracle: Option<OracleConfig>,
    pub search: Option<SearchConfig>,
    #[serde(default)]
    pub adjust: AdjustConfig,
}

/// Either three pair files or the sizes of anonymous synthetic pools.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolsConfig {
    pub d1: Option<PathBuf>,
    pub d2: Option<PathBuf>,
    pub d3: Option<PathBuf>,
    pub synthetic: Option<MixtureCounts>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OracleConfig {
    Synthetic(SyntheticConfig),
    External(ExternalConfig),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjustConfig {
    pub lambda_loss: Option<f64>,
    pub tolerance: Option<f64>,
    pub factor: Option<f64>,
    pub max_epochs: Option<u32>,
    pub work_dir: Option<PathBuf>,
    #[serde(default)]
    pub keep_manifests: bool,
}

/// A loaded configuration and the bytes it came from.
pub struct Loaded {
    pub config: Config,
    pub path: Option<PathBuf>,
}

pub fn load(path: Option<&Path>) -> Result<Loaded> {
    let Some(path) = path else {
        return Ok(Loaded {
            config: Config::default(),
            path: None,
        });
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("reading config {}: {e}", path.display())))?;
    let config: Config = toml::from_str(&text)
        .map_err(|e| config_error(format!("config {}: {e}", path.display())))?;
    Ok(Loaded {
        config,
        path: Some(path.to_path_buf()),
    })
}

impl Config {
    pub fn pools_config(&self) -> Result<&PoolsConfig> {
        self.pools
            .as_ref()
            .ok_or_else(|| config_error("the config has no [pools] table"))
    }

    pub fn oracle(&self) -> Result<Box<dyn Oracle>> {
        match &self.oracle {
            None => Err(config_error("the config has no [oracle] table")),
            Some(OracleConfig::Synthetic(c)) => Ok(Box::new(SyntheticOracle::new(*c)?)),
            Some(OracleConfig::External(c)) => Ok(Box::new(ExternalOracle::new(c.clone())?)),
        }
    }
}

impl PoolsConfig {
    /// Pool files, in D1, D2, D3 order; empty for synthetic pools.
    pub fn files(&self) -> Result<Vec<(PoolTag, PathBuf)>> {
        match (&self.synthetic, &self.d1, &self.d2, &self.d3) {
            (Some(_), None, None, None) => Ok(Vec::new()),
            (None, Some(a), Some(b), Some(c)) => Ok(vec![
                (PoolTag::D1, a.clone()),
                (PoolTag::D2, b.clone()),
                (PoolTag::D3, c.clone()),
            ]),
            _ => Err(config_error(
                "[pools] needs either all of d1, d2, d3 or only synthetic",
            )),
        }
    }

    pub fn load(&self) -> Result<MixturePools> {
        if let Some(s) = self.synthetic {
            self.files()?;
            return Ok(MixturePools::synthetic(
                s.d1 as usize,
                s.d2 as usize,
                s.d3 as usize,
            ));
        }
        let mut loaded = self.files()?.into_iter().map(|(tag, path)| {
            let f =
                File::open(&path).with_context(|| format!("opening pool {}", path.display()))?;
            let pool = load_pool(BufReader::new(f), tag, &path.display().to_string())?;
            anyhow::Ok(PoolIndex::from_loaded(&pool))
        });
        let mut next = || loaded.next().expect("three pools");
        Ok(MixturePools {
            d1: next()?,
            d2: next()?,
            d3: next()?,
        })
    }
}
