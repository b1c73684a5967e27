//! Serializable run configuration embedded in every output artifact.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::Head;
use crate::error::Error;
use crate::prompt::PromptTemplate;
use crate::prototype::DEFAULT_K;
use crate::synth::SynthSpec;

/// Which audio rows prototypes may be retrieved from during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolPolicy {
    /// Only rows outside the evaluation fold (multi-label: the train split).
    #[default]
    TrainFoldsOnly,
    /// Every audio row, including the ones being classified.
    AllAudio,
}

impl PoolPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolPolicy::TrainFoldsOnly => "train_folds_only",
            PoolPolicy::AllAudio => "all_audio",
        }
    }
}

impl fmt::Display for PoolPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.replace('-', "_").as_str() {
            "train_folds_only" => Ok(PoolPolicy::TrainFoldsOnly),
            "all_audio" => Ok(PoolPolicy::AllAudio),
            other => Err(Error::Contract(format!("unknown pool policy {other:?}"))),
        }
    }
}

/// How prototypes are obtained for the prototypical heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeSource {
    #[default]
    TextAnchored,
    Supervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub k: usize,
    pub head: Head,
    pub pool_policy: PoolPolicy,
    pub prototypes: PrototypeSource,
    pub temperature: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            head: Head::ProtoSingle,
            pool_policy: PoolPolicy::default(),
            prototypes: PrototypeSource::default(),
            temperature: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_pool(mut self, pool: PoolPolicy) -> Self {
        self.pool_policy = pool;
        self
    }

    pub fn with_prototypes(mut self, source: PrototypeSource) -> Self {
        self.prototypes = source;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<PromptTemplate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    /// Input and output paths by role.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub files: BTreeMap<String, String>,
    /// Subcommand-specific settings that have no dedicated field.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, serde_json::Value>,
}

impl RunConfig {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            ..Self::default()
        }
    }

    pub fn for_pipeline(cfg: &PipelineConfig) -> Self {
        Self {
            command: "pipeline".into(),
            pipeline: Some(cfg.clone()),
            ..Self::default()
        }
    }

    pub fn file(mut self, role: &str, path: impl AsRef<std::path::Path>) -> Self {
        self.files
            .insert(role.to_owned(), path.as_ref().display().to_string());
        self
    }

    pub fn param(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.params.insert(key.to_owned(), value.into());
        self
    }
}
