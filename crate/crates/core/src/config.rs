//! Run configuration: one TOML file, layered with the dataset-root
//! environment variable and `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{RoleMap, SplitRole, SynthConfig, QUERY_WINDOW_SECS};
use crate::error::{Error, Result};
use crate::infer::{InferenceConfig, QueryMode};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

pub const DATA_ROOT_ENV: &str = "BANQUET_DATA_ROOT";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data_root: PathBuf,
    /// Manifest, splits, queries, embeddings and runs live here.
    pub work_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_root: "data".into(),
            work_dir: "work".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitsConfig {
    pub k: usize,
    pub roles: RoleMap,
}

impl Default for SplitsConfig {
    fn default() -> Self {
        Self {
            k: 5,
            roles: RoleMap::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueryConfig {
    pub backend: String,
    pub weights: Option<PathBuf>,
    pub window_secs: f64,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            backend: "mock".into(),
            weights: None,
            window_secs: QUERY_WINDOW_SECS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: SplitRole,
    pub policy: QueryMode,
    /// Defaults to the training roster.
    pub roster: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: SplitRole::Test,
            policy: QueryMode::DifferentSong,
            roster: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Master seed; copied into every seeded component on resolve.
    pub seed: u64,
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub splits: SplitsConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub query: QueryConfig,
    pub eval: EvalConfig,
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Set a dotted key such as `train.epochs` to a TOML literal (bare words
    /// are taken as strings).
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside a table")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), parse_value(raw));
                break;
            }
            node = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override `{key}={raw}`: {e}")))?;
        Ok(())
    }

    /// Apply `key=value` overrides in order.
    pub fn apply_overrides<'a>(&mut self, overrides: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Take the dataset root from the environment when set.
    pub fn apply_env(&mut self) {
        if let Some(root) = std::env::var_os(DATA_ROOT_ENV) {
            self.paths.data_root = root.into();
        }
    }

    /// Propagate the master seed and check every section.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.model.validate()?;
        self.train.validate()?;
        self.inference.validate()?;
        if self.splits.k < 2 {
            return Err(Error::Config(format!("split count k = {} must be at least 2", self.splits.k)));
        }
        Ok(self)
    }

    /// Write the resolved configuration into `dir`.
    pub fn write_resolved(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.paths.work_dir.join("manifest.json")
    }

    pub fn splits_path(&self) -> PathBuf {
        self.paths.work_dir.join("splits.json")
    }

    pub fn queries_dir(&self) -> PathBuf {
        self.paths.work_dir.join("queries")
    }

    pub fn query_index_path(&self) -> PathBuf {
        self.queries_dir().join("index.json")
    }

    pub fn embeddings_dir(&self) -> PathBuf {
        self.paths.work_dir.join("embeddings")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.paths.work_dir.join("runs")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.paths.work_dir.join("reports")
    }
}
