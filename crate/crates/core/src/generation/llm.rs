use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::sentence::first_sentence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub timeout_ms: u64,
    /// Keep only the first sentence of the completion.
    pub single_response: bool,
}

impl LlmRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens: 256,
            temperature: 0.7,
            timeout_ms: 15_000,
            single_response: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("LLM endpoint unreachable after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("LLM endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("LLM response: {0}")]
    BadResponse(String),
}

/// Produces a completion for a prompt.
pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError>;
}

/// Validates the request, calls the client, and trims the completion to its
/// first sentence when `single_response` is set.
pub fn generate(client: &dyn LlmClient, request: &LlmRequest) -> Result<String, LlmError> {
    if request.prompt.trim().is_empty() {
        return Err(LlmError::InvalidRequest("empty prompt".into()));
    }
    if request.max_tokens == 0 || request.timeout_ms == 0 {
        return Err(LlmError::InvalidRequest(
            "max_tokens and timeout_ms must be positive".into(),
        ));
    }
    if !(request.temperature.is_finite() && request.temperature >= 0.0) {
        return Err(LlmError::InvalidRequest(format!(
            "temperature {}",
            request.temperature
        )));
    }
    let text = client.complete(request)?;
    Ok(if request.single_response {
        first_sentence(&text)
    } else {
        text.trim().to_string()
    })
}

/// Sleep before each retry of a transport failure. Status errors are not retried.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            backoff: vec![Duration::from_millis(250), Duration::from_secs(1)],
        }
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    text: String,
}

/// Client for an OpenAI-compatible `POST /v1/completions` endpoint.
#[derive(Debug, Clone)]
pub struct HttpLlmClient {
    url: String,
    api_key: Option<String>,
    model: String,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl HttpLlmClient {
    /// `base_url` may be the full completions URL or a server root, in
    /// which case `/v1/completions` is appended.
    pub fn new(base_url: &str, api_key: Option<String>, model: impl Into<String>) -> Self {
        let base = base_url.trim_end_matches('/');
        let url = if base.ends_with("/completions") {
            base.to_string()
        } else {
            format!("{base}/v1/completions")
        };
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url,
            api_key,
            model: model.into(),
            retry: RetryPolicy::default(),
            agent,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, request: &LlmRequest) -> Result<String, AttemptError> {
        let body = CompletionRequest {
            model: &self.model,
            prompt: &request.prompt,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
        };
        let mut req = self
            .agent
            .post(&self.url)
            .config()
            .timeout_global(Some(Duration::from_millis(request.timeout_ms)))
            .build();
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| AttemptError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(AttemptError::Fatal(LlmError::Status { status, body }));
        }
        let parsed: CompletionResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| AttemptError::Fatal(LlmError::BadResponse(e.to_string())))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or_else(|| AttemptError::Fatal(LlmError::BadResponse("no choices".into())))
    }
}

enum AttemptError {
    Transport(String),
    Fatal(LlmError),
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Transport(message)) => {
                    match self.retry.backoff.get(attempts as usize - 1) {
                        Some(delay) => {
                            log::warn!("LLM attempt {attempts} failed ({message}); retrying in {delay:?}");
                            thread::sleep(*delay);
                        }
                        None => return Err(LlmError::Transport { attempts, message }),
                    }
                }
            }
        }
    }
}

/// Deterministic in-process stand-in for an LLM endpoint. Records every
/// prompt it receives.
#[derive(Debug, Default)]
pub struct MockLlm {
    reply: Option<String>,
    prompts: Mutex<Vec<String>>,
}

impl MockLlm {
    /// Always answers with `reply`.
    pub fn fixed(reply: impl Into<String>) -> Self {
        Self {
            reply: Some(reply.into()),
            prompts: Mutex::new(Vec::new()),
        }
    }

    /// Always fails as if the endpoint were unreachable.
    pub fn unavailable() -> Self {
        Self::default()
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

impl LlmClient for MockLlm {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        self.prompts.lock().unwrap().push(request.prompt.clone());
        self.reply.clone().ok_or_else(|| LlmError::Transport {
            attempts: 1,
            message: "mock endpoint unavailable".into(),
        })
    }
}
