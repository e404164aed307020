//! Uniform access to language models: an HTTP chat/completions client that
//! can expose next-token distributions, and a deterministic scripted backend
//! for offline tests.

mod http;
mod scripted;

pub use http::HttpBackend;
pub use scripted::{ScriptedBackend, ScriptedPolicy};

use crate::prompting::{PromptTemplate, RenderedPrompt, TemplateKind, TemplateTags};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited by endpoint")]
    RateLimited,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("endpoint cannot return token log-probabilities")]
    UnsupportedByEndpoint,
    #[error("token distribution is invalid: {0}")]
    InvalidDistribution(String),
}

/// Sampling parameters forwarded to the endpoint. Recorded verbatim in the
/// run manifest for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for SamplingConfig {
    fn default() -> SamplingConfig {
        SamplingConfig {
            temperature: 1.0,
            top_p: 1.0,
            max_tokens: 256,
        }
    }
}

impl SamplingConfig {
    /// Canonical string form, used in cache keys.
    pub fn fingerprint(&self) -> String {
        format!(
            "t{}p{}m{}",
            self.temperature, self.top_p, self.max_tokens
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryConfig {
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> RetryConfig {
        RetryConfig {
            max_attempts: 3,
            backoff_ms: 500,
        }
    }
}

/// Which wire schema the endpoint speaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiDialect {
    #[default]
    Completions,
    Chat,
}

/// Full backend description, loadable from the run configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub name: String,
    pub endpoint: String,
    /// Environment variable holding the API key; the key itself never
    /// appears in configuration or logs.
    #[serde(default)]
    pub api_key_env: Option<String>,
    pub model_id: String,
    pub template_kind: TemplateKind,
    #[serde(default)]
    pub dialect: ApiDialect,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryConfig,
    /// Upper bound on concurrent in-flight requests.
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Optional JSONL audit file for request/response pairs (credentials are
    /// never written).
    #[serde(default)]
    pub audit_log: Option<PathBuf>,
    /// Structural template tags; model specific, so part of configuration.
    #[serde(default)]
    pub tags: TemplateTags,
    #[serde(default = "default_query_string")]
    pub query_string: String,
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_in_flight() -> usize {
    8
}

fn default_query_string() -> String {
    crate::prompting::DEFAULT_QUERY_STRING.to_string()
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.retry.max_attempts < 1 {
            return Err("retry.max_attempts must be >= 1".into());
        }
        if self.request_timeout_ms == 0 {
            return Err("request_timeout_ms must be > 0".into());
        }
        Ok(())
    }

    /// The prompt template this backend expects.
    pub fn template(&self) -> PromptTemplate {
        PromptTemplate {
            kind: self.template_kind,
            tags: self.tags.clone(),
            query_string: self.query_string.clone(),
        }
    }

    /// Parses a TOML run-configuration payload.
    pub fn from_toml(payload: &str) -> Result<BackendConfig, String> {
        let cfg: BackendConfig = toml::from_str(payload).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Top-K next-token log-probabilities as reported by an endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    entries: BTreeMap<String, f64>,
}

impl TokenDistribution {
    pub fn new(entries: BTreeMap<String, f64>) -> Result<TokenDistribution, BackendError> {
        if entries.is_empty() {
            return Err(BackendError::InvalidDistribution("no entries".into()));
        }
        if let Some((tok, lp)) = entries.iter().find(|(_, lp)| **lp > 0.0 || !lp.is_finite()) {
            return Err(BackendError::InvalidDistribution(format!(
                "log-probability of {tok:?} is {lp}"
            )));
        }
        Ok(TokenDistribution { entries })
    }

    pub fn entries(&self) -> &BTreeMap<String, f64> {
        &self.entries
    }

    /// Log-probability of an answer letter, aggregating tokenizer variants
    /// (the bare letter and the letter with a leading space) by taking the
    /// larger mass. Letters absent from the reported top K count as missing.
    pub fn letter_log_prob(&self, letter: char) -> Option<f64> {
        let bare = letter.to_string();
        let spaced = format!(" {letter}");
        match (self.entries.get(&bare), self.entries.get(&spaced)) {
            (Some(a), Some(b)) => Some(a.max(*b)),
            (Some(a), None) => Some(*a),
            (None, Some(b)) => Some(*b),
            (None, None) => None,
        }
    }
}

/// Identifies the participant slot of a work cell: a persona name in persona
/// mode, or the permutation index otherwise.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Participant {
    Persona(String),
    Permutation(u32),
}

impl Participant {
    pub fn label(&self) -> String {
        match self {
            Participant::Persona(name) => name.clone(),
            Participant::Permutation(p) => format!("permutation-{p}"),
        }
    }
}

/// Structured request context. The HTTP backend ignores it; the scripted
/// backend uses it to produce deterministic, persona-consistent answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMeta {
    pub participant: Participant,
    pub topic: String,
    pub seed: u64,
    /// Number of exchanged conversation messages preceding the query.
    pub n_exchanged: usize,
    /// Index of the generated conversation turn (completion calls only).
    pub turn: usize,
    /// Item index within the instrument (answer queries only).
    pub item_index: Option<u32>,
    /// Canonical option index shown at each letter position (answer queries
    /// only); `presented_order[0]` is the option displayed as letter A.
    pub presented_order: Option<Vec<usize>>,
}

/// Uniform model access used by the simulation pipeline.
pub trait Backend: Send + Sync {
    /// One generated conversation message, trimmed at the turn boundary.
    fn complete(&self, prompt: &RenderedPrompt, meta: &QueryMeta) -> Result<String, BackendError>;

    /// Top-K log-probabilities for the next token after the answer cue.
    fn next_token_distribution(
        &self,
        prompt: &RenderedPrompt,
        meta: &QueryMeta,
    ) -> Result<TokenDistribution, BackendError>;

    /// Identifier recorded in cache keys and manifests.
    fn model_id(&self) -> &str;
}

/// Backend that refuses every call. Used to re-analyze cached runs offline:
/// fully cached cells never reach it, anything else surfaces as missing.
pub struct NullBackend {
    model_id: String,
}

impl NullBackend {
    pub fn new(model_id: impl Into<String>) -> NullBackend {
        NullBackend {
            model_id: model_id.into(),
        }
    }
}

impl Backend for NullBackend {
    fn complete(&self, _: &RenderedPrompt, _: &QueryMeta) -> Result<String, BackendError> {
        Err(BackendError::Transport(
            "offline analysis: cell not cached".into(),
        ))
    }

    fn next_token_distribution(
        &self,
        _: &RenderedPrompt,
        _: &QueryMeta,
    ) -> Result<TokenDistribution, BackendError> {
        Err(BackendError::Transport(
            "offline analysis: cell not cached".into(),
        ))
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}
