//! Prompt dispatch, completion caching and answer extraction.
//!
//! A [`Gateway`] owns a backend (live HTTP, deterministic mock, or none for
//! replay) plus an on-disk cache. Requests are dispatched with bounded
//! parallelism; results are always returned in request order so nothing
//! downstream depends on completion timing.

mod backend;
mod cache;
mod parse;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    completion_body, extract_content, mock_complete, AnswerSlot, ChatBackend, ChatRequest, HttpBackend,
    MockBackend, RequestFailure, API_KEY_ENV, API_URL_ENV,
};
pub use cache::DiskCache;
pub use parse::{
    parse_in_range, parse_likert, parse_likert_with, parse_vote, parse_vote_with, split_numbered, ParseError,
    Strictness,
};

use crate::data::SurveySample;
use crate::prompt::{AskMode, PromptBundle};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("API key missing or rejected (set VP_API_KEY)")]
    AuthMissing,
    #[error("replay cache has no entry for prompt {prompt_hash}")]
    ReplayMiss { prompt_hash: String },
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error("cache i/o error at {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("prompt bundles do not match the roster: {0}")]
    BundleMismatch(String),
}

impl GatewayError {
    pub(crate) fn cache(path: &Path, source: std::io::Error) -> Self {
        GatewayError::Cache {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Mock,
    Replay,
}

impl std::str::FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(BackendKind::Live),
            "mock" => Ok(BackendKind::Mock),
            "replay" => Ok(BackendKind::Replay),
            other => Err(format!("unknown backend `{other}`")),
        }
    }
}

fn default_model() -> String {
    "gpt-4o".into()
}
fn default_temperature() -> f64 {
    1.0
}
fn default_retries() -> u32 {
    3
}
fn default_parallelism() -> usize {
    4
}
fn default_cache_dir() -> PathBuf {
    PathBuf::from("cache")
}
fn default_retry_base_ms() -> u64 {
    500
}
fn default_timeout_secs() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default)]
    pub ask_mode: AskMode,
    #[serde(default)]
    pub strictness: Strictness,
    /// Extra rounds for cells that failed or could not be parsed.
    #[serde(default)]
    pub resample_failures: u32,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl BackendConfig {
    pub fn new(kind: BackendKind, cache_dir: impl Into<PathBuf>) -> Self {
        BackendConfig {
            kind,
            model_name: default_model(),
            temperature: default_temperature(),
            max_retries: default_retries(),
            parallelism: default_parallelism(),
            cache_dir: cache_dir.into(),
            ask_mode: AskMode::default(),
            strictness: Strictness::default(),
            resample_failures: 0,
            retry_base_ms: default_retry_base_ms(),
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.parallelism < 1 {
            return Err(GatewayError::InvalidConfig("parallelism must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::InvalidConfig("temperature must be finite and >= 0".into()));
        }
        if self.kind == BackendKind::Replay && !self.cache_dir.is_dir() {
            return Err(GatewayError::InvalidConfig(format!(
                "replay needs an existing cache at {}",
                self.cache_dir.display()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompletionStatus {
    Ok,
    Failed,
}

/// One model reply as seen by a single (respondent, question) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub prompt_hash: String,
    /// Assistant text for `Ok`; the error description for `Failed`.
    pub raw_text: String,
    pub backend_meta: BTreeMap<String, String>,
    /// Seconds since the epoch when fetched from a backend; `None` when
    /// served from cache.
    pub timestamp: Option<u64>,
    pub status: CompletionStatus,
    /// Position of this cell's question within its request.
    pub slot: usize,
    /// Number of questions asked in the request.
    pub items: usize,
}

impl Completion {
    /// Answer text for this cell, if the reply contains one.
    pub fn answer_text(&self) -> Option<String> {
        if self.status == CompletionStatus::Failed {
            return None;
        }
        split_numbered(&self.raw_text, self.items).swap_remove(self.slot)
    }

    /// Parsed integer answer within `[min, max]`.
    pub fn answer(&self, min: i64, max: i64, strictness: Strictness) -> Option<i64> {
        self.answer_text()
            .and_then(|t| parse_in_range(&t, min, max, strictness).ok())
    }
}

/// Counters for one gateway's lifetime.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DispatchStats {
    pub requests: usize,
    pub cache_hits: usize,
    pub backend_calls: usize,
    pub failed: usize,
}

#[derive(Default)]
struct Counters {
    requests: AtomicUsize,
    cache_hits: AtomicUsize,
    backend_calls: AtomicUsize,
    failed: AtomicUsize,
}

pub struct Gateway {
    config: BackendConfig,
    backend: Option<Box<dyn ChatBackend>>,
    cache: DiskCache,
    counters: Counters,
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl Gateway {
    /// Builds the backend named by `config.kind`. The live backend reads
    /// its endpoint and key from the environment.
    pub fn new(config: BackendConfig, seed: u64) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend: Option<Box<dyn ChatBackend>> = match config.kind {
            BackendKind::Mock => Some(Box::new(MockBackend { seed })),
            BackendKind::Live => Some(Box::new(HttpBackend::from_env(Duration::from_secs(
                config.timeout_secs,
            ))?)),
            BackendKind::Replay => None,
        };
        let cache = match config.kind {
            BackendKind::Replay => DiskCache::open_existing(&config.cache_dir)?,
            _ => DiskCache::open(&config.cache_dir)?,
        };
        Ok(Gateway {
            config,
            backend,
            cache,
            counters: Counters::default(),
        })
    }

    /// Uses a caller-supplied backend regardless of `config.kind`.
    pub fn with_backend(config: BackendConfig, backend: Box<dyn ChatBackend>) -> Result<Self, GatewayError> {
        config.validate()?;
        let cache = DiskCache::open(&config.cache_dir)?;
        Ok(Gateway {
            config,
            backend: Some(backend),
            cache,
            counters: Counters::default(),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn stats(&self) -> DispatchStats {
        DispatchStats {
            requests: self.counters.requests.load(Ordering::Relaxed),
            cache_hits: self.counters.cache_hits.load(Ordering::Relaxed),
            backend_calls: self.counters.backend_calls.load(Ordering::Relaxed),
            failed: self.counters.failed.load(Ordering::Relaxed),
        }
    }

    fn completion(&self, req: &ChatRequest, hash: String, raw_text: String, status: CompletionStatus, source: &str, attempts: u32) -> Completion {
        let mut meta = BTreeMap::new();
        meta.insert("source".to_string(), source.to_string());
        meta.insert("model".to_string(), req.model.clone());
        meta.insert("attempts".to_string(), attempts.to_string());
        meta.insert(
            "mode".to_string(),
            if req.numbered { "block" } else { "single" }.to_string(),
        );
        Completion {
            prompt_hash: hash,
            raw_text,
            backend_meta: meta,
            timestamp: (source == "backend").then(now_secs),
            status,
            slot: 0,
            items: req.slots.len(),
        }
    }

    fn dispatch_one(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        self.counters.requests.fetch_add(1, Ordering::Relaxed);
        let hash = req.prompt_hash();
        if let Some(body) = self.cache.get(&hash)? {
            if let Some(text) = extract_content(&body) {
                self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(self.completion(req, hash, text, CompletionStatus::Ok, "cache", 0));
            }
        }
        let Some(backend) = &self.backend else {
            return Err(GatewayError::ReplayMiss { prompt_hash: hash });
        };

        let mut last_error = String::new();
        let mut tries = 0;
        for attempt in 0..=self.config.max_retries {
            tries = attempt + 1;
            self.counters.backend_calls.fetch_add(1, Ordering::Relaxed);
            match backend.complete(req) {
                Ok(body) => {
                    let text = extract_content(&body).unwrap_or_default();
                    self.cache.put(&hash, &body)?;
                    return Ok(self.completion(req, hash, text, CompletionStatus::Ok, "backend", tries));
                }
                Err(RequestFailure::Transient(msg)) => last_error = msg,
                Err(RequestFailure::Rejected(msg)) => {
                    last_error = msg;
                    break;
                }
                Err(RequestFailure::Fatal(GatewayError::BackendUnreachable(msg))) => {
                    if attempt == self.config.max_retries {
                        return Err(GatewayError::BackendUnreachable(msg));
                    }
                    last_error = msg;
                }
                Err(RequestFailure::Fatal(e)) => return Err(e),
            }
            if attempt < self.config.max_retries && self.config.retry_base_ms > 0 {
                let delay = self.config.retry_base_ms.saturating_mul(1 << attempt.min(10));
                std::thread::sleep(Duration::from_millis(delay));
            }
        }
        self.counters.failed.fetch_add(1, Ordering::Relaxed);
        log::warn!("request for {} failed after {tries} tries: {last_error}", req.respondent_id);
        Ok(self.completion(req, hash, last_error, CompletionStatus::Failed, "backend", tries))
    }

    /// Sends every request (cache first) and returns completions in request
    /// order.
    pub fn dispatch(&self, requests: &[ChatRequest]) -> Result<Vec<Completion>, GatewayError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.parallelism)
            .build()
            .map_err(|e| GatewayError::InvalidConfig(e.to_string()))?;
        pool.install(|| requests.par_iter().map(|r| self.dispatch_one(r)).collect())
    }

    /// Requests for every bundle under the configured ask mode.
    pub fn build_requests(&self, bundles: &[PromptBundle], attempt: u32) -> Vec<ChatRequest> {
        build_requests(bundles, &self.config, attempt)
    }

    /// Synthesizes answers for every bundle, keyed by (respondent, question).
    pub fn synthesize(&self, sample: &SurveySample, bundles: &[PromptBundle]) -> Result<Synthesis, GatewayError> {
        check_bundles(sample, bundles)?;
        let requests = self.build_requests(bundles, 0);
        let completions = self.dispatch(&requests)?;
        let mut synthesis = Synthesis::default();
        synthesis.insert_all(&requests, completions);

        for round in 1..=self.config.resample_failures {
            let retry: Vec<ChatRequest> = requests
                .iter()
                .filter(|r| {
                    r.slots.iter().any(|s| {
                        synthesis
                            .get(&r.respondent_id, &s.question_id)
                            .and_then(|c| c.answer(s.scale_min, s.scale_max, self.config.strictness))
                            .is_none()
                    })
                })
                .map(|r| ChatRequest {
                    attempt: round,
                    ..r.clone()
                })
                .collect();
            if retry.is_empty() {
                break;
            }
            log::info!("resampling round {round}: {} requests", retry.len());
            let fresh = self.dispatch(&retry)?;
            synthesis.replace_unanswered(&retry, fresh, self.config.strictness);
        }
        Ok(synthesis)
    }
}

fn check_bundles(sample: &SurveySample, bundles: &[PromptBundle]) -> Result<(), GatewayError> {
    let roster: std::collections::HashSet<&str> =
        sample.roster.iter().map(|p| p.respondent_id.as_str()).collect();
    let mut seen = std::collections::HashSet::new();
    for b in bundles {
        if !roster.contains(b.respondent_id.as_str()) {
            return Err(GatewayError::BundleMismatch(format!(
                "`{}` is not in sample {}",
                b.respondent_id, sample.sample_id
            )));
        }
        if !seen.insert(b.respondent_id.as_str()) {
            return Err(GatewayError::BundleMismatch(format!(
                "two bundles for `{}`",
                b.respondent_id
            )));
        }
    }
    Ok(())
}

/// Expands bundles into chat requests: one per block, or one per question.
pub fn build_requests(bundles: &[PromptBundle], config: &BackendConfig, attempt: u32) -> Vec<ChatRequest> {
    let mut out = Vec::new();
    for b in bundles {
        for block in &b.blocks {
            let make = |user: String, items: &[crate::prompt::ItemPrompt], numbered: bool| ChatRequest {
                respondent_id: b.respondent_id.clone(),
                persona_text: b.persona_text.clone(),
                scenario_text: b.scenario_text.clone(),
                user,
                slots: items
                    .iter()
                    .map(|i| AnswerSlot {
                        question_id: i.question_id.clone(),
                        scale_min: i.scale_min,
                        scale_max: i.scale_max,
                    })
                    .collect(),
                numbered,
                model: config.model_name.clone(),
                temperature: config.temperature,
                attempt,
            };
            match config.ask_mode {
                AskMode::Block => out.push(make(block.block_message(), &block.items, block.items.len() > 1)),
                AskMode::PerQuestion => {
                    for item in &block.items {
                        out.push(make(block.item_message(item), std::slice::from_ref(item), false));
                    }
                }
            }
        }
    }
    out
}

/// All completions of a run, keyed by (respondent_id, question_id).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Synthesis {
    pub completions: BTreeMap<(String, String), Completion>,
}

impl Synthesis {
    pub fn get(&self, respondent_id: &str, question_id: &str) -> Option<&Completion> {
        self.completions
            .get(&(respondent_id.to_string(), question_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.completions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.completions.is_empty()
    }

    fn insert_all(&mut self, requests: &[ChatRequest], completions: Vec<Completion>) {
        for (req, c) in requests.iter().zip(completions) {
            for (slot, s) in req.slots.iter().enumerate() {
                let mut cell = c.clone();
                cell.slot = slot;
                self.completions
                    .insert((req.respondent_id.clone(), s.question_id.clone()), cell);
            }
        }
    }

    fn replace_unanswered(&mut self, requests: &[ChatRequest], completions: Vec<Completion>, strictness: Strictness) {
        for (req, c) in requests.iter().zip(completions) {
            for (slot, s) in req.slots.iter().enumerate() {
                let key = (req.respondent_id.clone(), s.question_id.clone());
                let answered = self
                    .completions
                    .get(&key)
                    .and_then(|old| old.answer(s.scale_min, s.scale_max, strictness))
                    .is_some();
                if !answered {
                    let mut cell = c.clone();
                    cell.slot = slot;
                    self.completions.insert(key, cell);
                }
            }
        }
    }
}

/// Convenience wrapper: build a gateway from `config` and synthesize.
pub fn synthesize(
    sample: &SurveySample,
    bundles: &[PromptBundle],
    config: &BackendConfig,
    seed: u64,
) -> Result<Synthesis, GatewayError> {
    Gateway::new(config.clone(), seed)?.synthesize(sample, bundles)
}
