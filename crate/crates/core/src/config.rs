//! TOML run configuration. Every section is optional and defaults to a
//! fully offline setup (deterministic local embedder, scripted echo chat
//! backend), so a missing or empty file still yields a runnable config.
//!
//! Credentials never live here. Remote backends read EMBED_API_KEY and
//! LLM_API_KEY from the environment, and key-like fields in the file are
//! rejected outright.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::EmbedderSpec;
use crate::error::{Error, Result};
use crate::pipeline::RunOptions;
use crate::rewriter::{LlmSpec, DEFAULT_TRUNCATION_BUDGET, LEAKAGE_WINDOW_CHARS};
use crate::vindex::RetrieverConfig;

/// Rewrite-loop and concurrency knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    pub max_attempts: u32,
    pub parallelism: usize,
    pub truncation_budget: usize,
    pub leakage_min_chars: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            max_attempts: 2,
            parallelism: 4,
            truncation_budget: DEFAULT_TRUNCATION_BUDGET,
            leakage_min_chars: LEAKAGE_WINDOW_CHARS,
        }
    }
}

/// Where the artifacts live, relative to the working directory unless
/// absolute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: PathBuf,
    pub index: PathBuf,
    pub sink: PathBuf,
    pub store: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus.jsonl"),
            index: PathBuf::from("index.bin"),
            sink: PathBuf::from("sink"),
            store: PathBuf::from("store"),
            reports: PathBuf::from("reports"),
        }
    }
}

/// Full run configuration, the TOML file's top-level shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub embedder: EmbedderSpec,
    pub retriever: RetrieverConfig,
    pub llm: LlmSpec,
    pub pipeline: PipelineSettings,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            embedder: EmbedderSpec::deterministic("det-local", 64),
            retriever: RetrieverConfig::default(),
            llm: LlmSpec::stub("echo-stub"),
            pipeline: PipelineSettings::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&raw).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml_str(raw: &str) -> Result<Self> {
        let value: toml::Value = raw
            .parse()
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        reject_secret_keys(&value, "")?;
        let config: Self = value
            .try_into()
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.embedder.validate()?;
        self.retriever.validate()?;
        self.llm.validate()?;
        if self.pipeline.max_attempts == 0 {
            return Err(Error::Config("pipeline.max_attempts must be at least 1".into()));
        }
        if self.pipeline.parallelism == 0 {
            return Err(Error::Config("pipeline.parallelism must be at least 1".into()));
        }
        if self.pipeline.truncation_budget == 0 {
            return Err(Error::Config(
                "pipeline.truncation_budget must be at least 1".into(),
            ));
        }
        if self.pipeline.leakage_min_chars == 0 {
            return Err(Error::Config(
                "pipeline.leakage_min_chars must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Translate the config into pipeline run options. Resume stays off
    /// unless the caller turns it on.
    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            retriever: self.retriever,
            max_attempts: self.pipeline.max_attempts,
            parallelism: self.pipeline.parallelism,
            truncation_budget: self.pipeline.truncation_budget,
            leakage_min_chars: self.pipeline.leakage_min_chars,
            resume: false,
        }
    }
}

const FORBIDDEN_KEYS: &[&str] = &[
    "api_key",
    "api-key",
    "apikey",
    "secret",
    "token",
    "bearer_token",
];

fn reject_secret_keys(value: &toml::Value, context: &str) -> Result<()> {
    if let toml::Value::Table(table) = value {
        for (key, nested) in table {
            let lowered = key.to_ascii_lowercase();
            if FORBIDDEN_KEYS.contains(&lowered.as_str()) {
                let at = if context.is_empty() {
                    key.clone()
                } else {
                    format!("{context}.{key}")
                };
                return Err(Error::Config(format!(
                    "config key '{at}' looks like a credential; \
                     secrets must come from the EMBED_API_KEY / LLM_API_KEY environment variables"
                )));
            }
            let nested_context = if context.is_empty() {
                key.clone()
            } else {
                format!("{context}.{key}")
            };
            reject_secret_keys(nested, &nested_context)?;
        }
    }
    Ok(())
}
