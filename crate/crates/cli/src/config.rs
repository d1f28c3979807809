//! Run configuration: a TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use gridcast::baselines::MlpConfig;
use gridcast::model::ModelConfig;
use gridcast::powerflow::ProfileConfig;
use gridcast::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SEED_ENV: &str = "GRIDCAST_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum GridSource {
    /// Seeded synthetic 118-bus network.
    Nrel118,
    /// Directory with `bus.csv`, `branch.csv` and `gen.csv`.
    Csv { dir: PathBuf },
}

impl Default for GridSource {
    fn default() -> Self {
        GridSource::Nrel118
    }
}

impl GridSource {
    pub fn parse_flag(s: &str) -> GridSource {
        if s == "nrel118" {
            GridSource::Nrel118
        } else {
            GridSource::Csv { dir: PathBuf::from(s) }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub hours: usize,
    pub train_frac: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            hours: 2160,
            train_frac: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSection {
    pub hidden: usize,
}

impl Default for MlpSection {
    fn default() -> Self {
        MlpSection {
            hidden: MlpConfig::default().hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub grid: GridSource,
    pub data: DataConfig,
    pub profiles: ProfileConfig,
    pub model: ModelConfig,
    pub mlp: MlpSection,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Reads `path`; relative grid paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let GridSource::Csv { dir } = &mut cfg.grid {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        if let Some(out) = &mut cfg.out {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(cfg)
    }

    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig {
            seq_len: self.model.seq_len,
            hidden: self.mlp.hidden,
            ..MlpConfig::default()
        }
    }

    /// Checks what can be checked without touching the data.
    pub fn validate(&self) -> Result<(), CliError> {
        if let GridSource::Csv { dir } = &self.grid {
            for f in ["bus.csv", "branch.csv", "gen.csv"] {
                if !dir.join(f).is_file() {
                    return Err(CliError::usage(format!("grid file {} not found", dir.join(f).display())));
                }
            }
        }
        if self.model.seq_len == 0 {
            return Err(CliError::usage("seq_len must be at least 1"));
        }
        if !(self.data.train_frac > 0.0 && self.data.train_frac < 1.0) {
            return Err(CliError::usage(format!("train_frac {} outside (0, 1)", self.data.train_frac)));
        }
        self.train.validate().map_err(|e| CliError::usage(e.to_string()))
    }
}

/// Flag, then config file, then `GRIDCAST_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, cfg: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(cfg) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}
