//! Experiment configuration, read from TOML.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use coi_core::adherence::{MatchMode, DEFAULT_THRESHOLD};
use coi_core::coi_planner::PlannerParams;
use coi_core::corpus::ChunkParams;
use coi_core::prompting::{GeneratorProviderConfig, Mode};
use coi_core::vector_index::EmbeddingProviderConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub tag: String,
    pub path: PathBuf,
    pub title: String,
}

/// Where each tag's implicit-question bank comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum BankConfig {
    /// Extract Q&As from every chunk with `generator`.
    Generate { generator: GeneratorProviderConfig },
    /// Load `{path}/{tag}/` as written by `build-bank`.
    Load { path: PathBuf },
    /// No bank: rag_coi degrades to rag.
    None,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorConfig {
    Rule,
    Llm { generator: GeneratorProviderConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdherenceConfig {
    pub threshold: f64,
    pub matching: MatchMode,
    pub extractor: ExtractorConfig,
}

impl Default for AdherenceConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            matching: MatchMode::WholeClause,
            extractor: ExtractorConfig::Rule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    pub alpha: f64,
    /// FDR level for the Benjamini–Hochberg family.
    pub q: f64,
    pub bootstrap_resamples: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            q: 0.05,
            bootstrap_resamples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpora: Vec<CorpusConfig>,
    pub questions: PathBuf,
    pub modes: Vec<Mode>,
    pub models: Vec<GeneratorProviderConfig>,
    #[serde(default)]
    pub embedder: EmbeddingProviderConfig,
    #[serde(default)]
    pub bank: BankConfig,
    #[serde(default)]
    pub chunking: ChunkParams,
    #[serde(default)]
    pub planner: PlannerParams,
    #[serde(default)]
    pub adherence: AdherenceConfig,
    #[serde(default)]
    pub stats: StatsConfig,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub offline: bool,
    /// Upper bound on concurrent provider requests.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_true")]
    pub plots: bool,
}

fn default_in_flight() -> usize {
    4
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for c in &mut self.corpora {
            fix(&mut c.path);
        }
        fix(&mut self.questions);
        fix(&mut self.output_dir);
        if let Some(c) = self.cache_dir.as_mut() {
            fix(c);
        }
        if let BankConfig::Load { path } = &mut self.bank {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.modes.is_empty() {
            return invalid("modes must not be empty".into());
        }
        if self.models.is_empty() {
            return invalid("at least one model is required".into());
        }
        let mut ids = BTreeSet::new();
        for m in &self.models {
            if !ids.insert(m.model_id()) {
                return invalid(format!("duplicate model id {}", m.model_id()));
            }
        }
        let mut tags = BTreeSet::new();
        for c in &self.corpora {
            if !tags.insert(c.tag.as_str()) {
                return invalid(format!("duplicate corpus tag {}", c.tag));
            }
        }
        if !(0.0..=1.0).contains(&self.adherence.threshold) {
            return invalid(format!("adherence threshold {} outside [0, 1]", self.adherence.threshold));
        }
        if !(self.stats.q > 0.0 && self.stats.q < 1.0) {
            return invalid(format!("stats.q {} outside (0, 1)", self.stats.q));
        }
        if self.planner.keep > self.planner.pool_size {
            return invalid("planner.keep exceeds planner.pool_size".into());
        }
        if self.max_in_flight == 0 {
            return invalid("max_in_flight must be positive".into());
        }
        self.chunking.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn corpus(&self, tag: &str) -> Option<&CorpusConfig> {
        self.corpora.iter().find(|c| c.tag == tag)
    }

    pub fn has_mode(&self, mode: Mode) -> bool {
        self.modes.contains(&mode)
    }

    pub fn needs_retrieval(&self) -> bool {
        self.has_mode(Mode::Rag) || self.has_mode(Mode::RagCoi)
    }
}
