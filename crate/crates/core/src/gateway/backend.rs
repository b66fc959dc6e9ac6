//! Chat-completion backends: a deterministic offline mock and an HTTP
//! client for messages-format endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::GatewayError;

/// Environment variable holding the chat-completion endpoint URL.
pub const API_URL_ENV: &str = "VP_API_URL";
/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "VP_API_KEY";

/// Answer slot carried by a request, used by the mock to stay in range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSlot {
    pub question_id: String,
    pub scale_min: i64,
    pub scale_max: i64,
}

/// One chat turn pair sent to a backend.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub respondent_id: String,
    pub persona_text: String,
    pub scenario_text: String,
    pub user: String,
    pub slots: Vec<AnswerSlot>,
    /// True when the reply is expected as a numbered list.
    pub numbered: bool,
    pub model: String,
    pub temperature: f64,
    /// Resampling round; 0 for the first request.
    pub attempt: u32,
}

impl ChatRequest {
    pub fn system(&self) -> String {
        format!("{}\n\n{}", self.persona_text, self.scenario_text)
    }

    /// Stable digest of the prompt, model and temperature. Resampling rounds
    /// beyond the first are mixed in so they get their own cache entries.
    pub fn prompt_hash(&self) -> String {
        let mut h = Sha256::new();
        for part in [
            self.persona_text.as_str(),
            self.scenario_text.as_str(),
            self.user.as_str(),
            self.model.as_str(),
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        h.update(self.temperature.to_bits().to_le_bytes());
        if self.attempt > 0 {
            h.update(b"attempt");
            h.update(self.attempt.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Request body in the messages format.
    pub fn body(&self) -> serde_json::Value {
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "content": self.system()},
                {"role": "user", "content": self.user},
            ],
        })
    }
}

/// Why a single request did not produce a body.
#[derive(Debug)]
pub enum RequestFailure {
    /// Worth retrying (rate limit, server error, timeout, bad body).
    Transient(String),
    /// The request itself is bad; retrying will not help.
    Rejected(String),
    /// The whole run must stop.
    Fatal(GatewayError),
}

pub trait ChatBackend: Send + Sync {
    /// Returns the raw response body.
    fn complete(&self, request: &ChatRequest) -> Result<String, RequestFailure>;
}

/// Deterministic reply for `request`: every slot gets a value drawn
/// uniformly from its scale using a digest of the prompt and `seed`.
pub fn mock_complete(request: &ChatRequest, seed: u64) -> String {
    let base = request.prompt_hash();
    let answers: Vec<i64> = request
        .slots
        .iter()
        .enumerate()
        .map(|(i, slot)| {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(base.as_bytes());
            h.update((i as u64).to_le_bytes());
            let d = h.finalize();
            let x = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
            let span = (slot.scale_max - slot.scale_min + 1) as u64;
            slot.scale_min + (x % span) as i64
        })
        .collect();
    if request.numbered && answers.len() > 1 {
        answers
            .iter()
            .enumerate()
            .map(|(i, a)| format!("{}. {}", i + 1, a))
            .collect::<Vec<_>>()
            .join("\n")
    } else {
        answers.first().map(|a| a.to_string()).unwrap_or_default()
    }
}

/// Wraps reply text in a chat-completion response body.
pub fn completion_body(model: &str, id: &str, content: &str) -> String {
    json!({
        "id": id,
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop",
        }],
    })
    .to_string()
}

/// Pulls `choices[0].message.content` out of a response body.
pub fn extract_content(body: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(body).ok()?;
    v.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    pub seed: u64,
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, RequestFailure> {
        let content = mock_complete(request, self.seed);
        let id = format!("mock-{}", &request.prompt_hash()[..16]);
        Ok(completion_body(&request.model, &id, &content))
    }
}

/// Blocking HTTP client for a messages-format chat endpoint.
pub struct HttpBackend {
    url: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpBackend {
            url: url.into(),
            api_key: api_key.into(),
            agent,
        }
    }

    /// Reads `VP_API_URL` and `VP_API_KEY`.
    pub fn from_env(timeout: Duration) -> Result<Self, GatewayError> {
        let url = std::env::var(API_URL_ENV)
            .map_err(|_| GatewayError::InvalidConfig(format!("{API_URL_ENV} is not set")))?;
        let key = std::env::var(API_KEY_ENV).map_err(|_| GatewayError::AuthMissing)?;
        if key.trim().is_empty() {
            return Err(GatewayError::AuthMissing);
        }
        Ok(Self::new(url, key, timeout))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, RequestFailure> {
        let resp = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(request.body());
        let mut resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Timeout(t)) => return Err(RequestFailure::Transient(format!("timeout: {t}"))),
            Err(e @ (ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound)) => {
                return Err(RequestFailure::Fatal(GatewayError::BackendUnreachable(e.to_string())))
            }
            Err(e) => return Err(RequestFailure::Transient(e.to_string())),
        };
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| RequestFailure::Transient(format!("reading body: {e}")))?;
        match status {
            200..=299 => {
                if extract_content(&body).is_none() {
                    return Err(RequestFailure::Transient("response has no message content".into()));
                }
                Ok(body)
            }
            401 | 403 => Err(RequestFailure::Fatal(GatewayError::AuthMissing)),
            408 | 429 | 500..=599 => Err(RequestFailure::Transient(format!("HTTP {status}"))),
            _ => Err(RequestFailure::Rejected(format!("HTTP {status}: {body}"))),
        }
    }
}
