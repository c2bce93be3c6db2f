//! Service configuration: a JSON file whose keys are the fields below, with
//! `AUTODIDACT_<KEY>` environment variables taking precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::assessment::DEFAULT_GRADING_THRESHOLD;
use crate::curriculum::DEFAULT_PASS_THRESHOLD;
use crate::retrieval::DEFAULT_RETRIEVAL_K;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    /// Backend base URLs. `None` selects the deterministic mock.
    pub gen_url: Option<String>,
    pub sum_url: Option<String>,
    pub emb_url: Option<String>,
    pub tts_url: Option<String>,
    pub gating_threshold: f64,
    pub grading_threshold: f64,
    pub relevance_threshold: f64,
    pub slides_per_deck: usize,
    pub gen_batch_size: usize,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub retrieval_k: usize,
    pub p_oracle: f64,
    pub seed: u64,
    pub data_dir: PathBuf,
    /// Directory holding `chunks.jsonl` and `index.jsonl` for retrieval; the
    /// store's indexes/ subtree when unset.
    pub index_dir: Option<PathBuf>,
    pub auth_token: Option<String>,
    pub api_key: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            gen_url: None,
            sum_url: None,
            emb_url: None,
            tts_url: None,
            gating_threshold: DEFAULT_PASS_THRESHOLD,
            grading_threshold: DEFAULT_GRADING_THRESHOLD,
            relevance_threshold: 0.5,
            slides_per_deck: 8,
            gen_batch_size: 4,
            chunk_size: 200,
            chunk_overlap: 20,
            retrieval_k: DEFAULT_RETRIEVAL_K,
            p_oracle: 0.8,
            seed: 0,
            data_dir: PathBuf::from("data"),
            index_dir: None,
            auth_token: None,
            api_key: None,
        }
    }
}

fn env_name(key: &str) -> String {
    format!("AUTODIDACT_{}", key.to_ascii_uppercase())
}

impl ServiceConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Applies overrides from `lookup(name)` for every key. Values that parse
    /// as JSON numbers are numbers; everything else is a string.
    pub fn with_overrides(
        self,
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, ConfigError> {
        let mut v = serde_json::to_value(&self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let obj = v.as_object_mut().expect("config serializes to an object");
        let keys: Vec<String> = obj.keys().cloned().collect();
        for key in keys {
            let Some(raw) = lookup(&env_name(&key)) else {
                continue;
            };
            let numeric = matches!(obj[&key], Value::Number(_));
            let value = if numeric {
                serde_json::from_str::<Value>(raw.trim())
                    .ok()
                    .filter(Value::is_number)
                    .ok_or_else(|| {
                        ConfigError::Parse(format!("{} is not a number: {raw:?}", env_name(&key)))
                    })?
            } else {
                Value::String(raw)
            };
            obj.insert(key, value);
        }
        serde_json::from_value(v).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn with_env(self) -> Result<Self, ConfigError> {
        self.with_overrides(|name| std::env::var(name).ok())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, t) in [
            ("gating_threshold", self.gating_threshold),
            ("grading_threshold", self.grading_threshold),
            ("relevance_threshold", self.relevance_threshold),
        ] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(ConfigError::Invalid(format!(
                    "{name} = {t} is outside (0, 1]"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.p_oracle) {
            return Err(ConfigError::Invalid(format!(
                "p_oracle = {} is outside [0, 1]",
                self.p_oracle
            )));
        }
        if self.gen_batch_size == 0 || self.retrieval_k == 0 || self.chunk_size == 0 {
            return Err(ConfigError::Invalid(
                "gen_batch_size, retrieval_k and chunk_size must be positive".into(),
            ));
        }
        if self.chunk_overlap >= self.chunk_size {
            return Err(ConfigError::Invalid(format!(
                "chunk_overlap {} must be below chunk_size {}",
                self.chunk_overlap, self.chunk_size
            )));
        }
        Ok(())
    }

    /// File (if given), then environment, then validation.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let base = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        let cfg = base.with_env()?;
        cfg.validate()?;
        Ok(cfg)
    }
}
