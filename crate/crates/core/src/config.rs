//! Runtime configuration shared by the CLI and the HTTP server.
//!
//! Relative paths in a config file resolve against the file's directory.
//! `ADLCOACH_LLM_URL` and `ADLCOACH_LLM_KEY` override the LLM endpoint and key.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::classifier::{train, BowClassifier, Target, TrainConfig};
use crate::corpus::load_corpus;
use crate::dialogue::DialogueEngine;
use crate::domains::LabelSet;
use crate::generation::{HttpLlmClient, LlmClient, LlmRequest, MockLlm};
use crate::profiles::{load_functioning_map, load_store, FunctioningMap};
use crate::retrieval::{build_idf, EmbeddingClient, RoutingConfig, ScorerKind, SimilarityScorer};

pub const ENV_LLM_URL: &str = "ADLCOACH_LLM_URL";
pub const ENV_LLM_KEY: &str = "ADLCOACH_LLM_KEY";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("loading {what}: {source}")]
    Load {
        what: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl ConfigError {
    /// True for failures reading files, as opposed to invalid contents.
    pub fn is_io(&self) -> bool {
        let mut cur: Option<&(dyn std::error::Error + 'static)> = Some(self);
        while let Some(e) = cur {
            if e.is::<std::io::Error>() {
                return true;
            }
            cur = e.source();
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    /// Base URL of an embeddings service, for `external_embedding`.
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub timeout_ms: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            kind: ScorerKind::TokenF1,
            endpoint: None,
            api_key: None,
            model: None,
            timeout_ms: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Completions endpoint. Without one, the deterministic mock is used.
    pub url: Option<String>,
    pub api_key: Option<String>,
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub timeout_ms: u64,
    pub single_response: bool,
    /// Fixed reply of the mock client; `None` makes the mock fail every call.
    pub mock_reply: Option<String>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        let r = LlmRequest::new("");
        Self {
            url: None,
            api_key: None,
            model: "gpt-3.5-turbo-instruct".into(),
            max_tokens: r.max_tokens,
            temperature: r.temperature,
            timeout_ms: r.timeout_ms,
            single_response: r.single_response,
            mock_reply: Some("I manage most days, though some things take me longer than they used to.".into()),
        }
    }
}

impl LlmConfig {
    pub fn request_template(&self) -> LlmRequest {
        LlmRequest {
            prompt: String::new(),
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            timeout_ms: self.timeout_ms,
            single_response: self.single_response,
        }
    }

    /// Applies `ADLCOACH_LLM_URL` / `ADLCOACH_LLM_KEY` when set and non-empty.
    pub fn apply_env(&mut self) {
        if let Some(url) = std::env::var(ENV_LLM_URL).ok().filter(|v| !v.is_empty()) {
            self.url = Some(url);
        }
        if let Some(key) = std::env::var(ENV_LLM_KEY).ok().filter(|v| !v.is_empty()) {
            self.api_key = Some(key);
        }
    }

    pub fn client(&self) -> Arc<dyn LlmClient> {
        match &self.url {
            Some(url) => Arc::new(HttpLlmClient::new(url, self.api_key.clone(), self.model.clone())),
            None => match &self.mock_reply {
                Some(reply) => Arc::new(MockLlm::fixed(reply.clone())),
                None => Arc::new(MockLlm::unavailable()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    /// Directory holding `profiles.json`, `kb.jsonl` and optionally
    /// `functioning_map.json`.
    pub store_dir: PathBuf,
    /// Overrides the store's functioning map.
    pub functioning_map: Option<PathBuf>,
    pub domain_model: Option<PathBuf>,
    pub intent_model: Option<PathBuf>,
    /// Trains any model not given as a file from this corpus at startup.
    pub train_corpus: Option<PathBuf>,
    pub train: TrainConfig,
    pub routing: RoutingConfig,
    pub scorer: ScorerConfig,
    pub llm: LlmConfig,
    /// Session event logs; sessions live in memory only when unset.
    pub data_dir: Option<PathBuf>,
    pub bind: String,
    /// System label that ratings of live sessions are grouped under.
    pub system_label: String,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            store_dir: PathBuf::from("store"),
            functioning_map: None,
            domain_model: None,
            intent_model: None,
            train_corpus: None,
            train: TrainConfig::default(),
            routing: RoutingConfig::default(),
            scorer: ScorerConfig::default(),
            llm: LlmConfig::default(),
            data_dir: None,
            bind: "127.0.0.1:8080".into(),
            system_label: "kb_grounded".into(),
        }
    }
}

fn load_err<E>(what: &'static str) -> impl FnOnce(E) -> ConfigError
where
    E: std::error::Error + Send + Sync + 'static,
{
    move |e| ConfigError::Load {
        what,
        source: Box::new(e),
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl AppConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        rebase(base, &mut self.store_dir);
        for p in [
            &mut self.functioning_map,
            &mut self.domain_model,
            &mut self.intent_model,
            &mut self.train_corpus,
            &mut self.data_dir,
        ]
        .into_iter()
        .flatten()
        {
            rebase(base, p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.routing
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.scorer.kind == ScorerKind::ExternalEmbedding && self.scorer.endpoint.is_none() {
            return Err(ConfigError::Invalid(
                "scorer.endpoint is required for external_embedding".into(),
            ));
        }
        if self.train_corpus.is_none() && (self.domain_model.is_none() || self.intent_model.is_none()) {
            return Err(ConfigError::Invalid(
                "domain_model and intent_model are required unless train_corpus is set".into(),
            ));
        }
        Ok(())
    }

    /// Loads every referenced file and assembles a dialogue engine.
    pub fn build_engine(&self) -> Result<DialogueEngine, ConfigError> {
        self.validate()?;
        let store = load_store(&self.store_dir).map_err(load_err("profile store"))?;
        let functioning: FunctioningMap = match &self.functioning_map {
            Some(p) => FunctioningMap::load(p).map_err(load_err("functioning map"))?,
            None => load_functioning_map(&self.store_dir).map_err(load_err("functioning map"))?,
        };

        let corpus = match &self.train_corpus {
            Some(p) => Some(load_corpus(p, &LabelSet::default()).map_err(load_err("training corpus"))?),
            None => None,
        };
        let model = |path: &Option<PathBuf>, target: Target, what| -> Result<BowClassifier, ConfigError> {
            match (path, &corpus) {
                (Some(p), _) => BowClassifier::load(p).map_err(load_err(what)),
                (None, Some(c)) => train(c, target, &self.train).map_err(load_err(what)),
                (None, None) => unreachable!("validated above"),
            }
        };
        let domain_model = model(&self.domain_model, Target::Domain, "domain model")?;
        let intent_model = model(&self.intent_model, Target::Intent, "intent model")?;
        if domain_model.target != Target::Domain || intent_model.target != Target::Intent {
            return Err(ConfigError::Invalid("model targets do not match their slots".into()));
        }

        let scorer = match self.scorer.kind {
            ScorerKind::TokenF1 => SimilarityScorer::TokenF1,
            ScorerKind::TfidfCosine => {
                SimilarityScorer::TfidfCosine(build_idf(&store).map_err(load_err("idf table"))?)
            }
            ScorerKind::ExternalEmbedding => SimilarityScorer::ExternalEmbedding(EmbeddingClient::new(
                self.scorer.endpoint.as_deref().expect("validated above"),
                self.scorer.api_key.clone(),
                self.scorer.model.clone(),
                Duration::from_millis(self.scorer.timeout_ms),
            )),
        };

        let mut engine = DialogueEngine::new(
            Arc::new(store),
            functioning,
            domain_model,
            intent_model,
            scorer,
            self.routing.clone(),
            self.llm.client(),
        );
        engine.llm_request = self.llm.request_template();
        Ok(engine)
    }
}
