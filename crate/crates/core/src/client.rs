//! Chat-completion client used to generate conversations from prompt payloads.
//!
//! The wire format is a minimal chat schema:
//!
//! ```text
//! request:  {"model": "...", "messages": [{"role": "user", "content": "..."}], "temperature": 0.7}
//! response: {"choices": [{"message": {"role": "assistant", "content": "..."}}]}
//! ```
//!
//! The endpoint URL and bearer credential come from `FORGE_LLM_ENDPOINT` and
//! `FORGE_LLM_KEY`. [`StubClient`] replays canned completions for offline runs.

use std::collections::HashMap;
use std::io::BufRead;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dataset::{build_finetune_prompt, PromptPayload, DEFAULT_GENERATION_INSTRUCTIONS};
use crate::error::{ClientError, Error};

pub const ENDPOINT_VAR: &str = "FORGE_LLM_ENDPOINT";
pub const KEY_VAR: &str = "FORGE_LLM_KEY";
pub const MODEL_VAR: &str = "FORGE_LLM_MODEL";
pub const DEFAULT_MODEL: &str = "gpt-4";
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn single_turn(model: impl Into<String>, prompt: impl Into<String>, temperature: f64) -> Self {
        Self {
            model: model.into(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.into(),
            }],
            temperature,
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

/// `image_id` identifies the payload the request was built from.
pub trait ChatClient: Sync {
    fn complete(&self, image_id: &str, request: &ChatRequest) -> Result<String, ClientError>;
}

pub struct HttpChatClient {
    endpoint: String,
    key: String,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(endpoint: impl Into<String>, key: impl Into<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        Self {
            endpoint: endpoint.into(),
            key: key.into(),
            agent: ureq::Agent::new_with_config(config),
        }
    }

    pub fn from_env(timeout: Duration) -> Result<Self, ClientError> {
        Self::from_lookup(|k| std::env::var(k).ok(), timeout)
    }

    /// Like [`HttpChatClient::from_env`] with an explicit variable lookup.
    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>, timeout: Duration) -> Result<Self, ClientError> {
        let get = |name: &str| {
            lookup(name)
                .filter(|v| !v.trim().is_empty())
                .ok_or_else(|| ClientError::Config(format!("{name} is not set")))
        };
        let endpoint = get(ENDPOINT_VAR)?;
        let key = get(KEY_VAR)?;
        Ok(Self::new(endpoint, key, timeout))
    }
}

/// The model named by `FORGE_LLM_MODEL`, if set.
pub fn model_from_env() -> Option<String> {
    std::env::var(MODEL_VAR).ok().filter(|m| !m.trim().is_empty())
}

impl ChatClient for HttpChatClient {
    fn complete(&self, _image_id: &str, request: &ChatRequest) -> Result<String, ClientError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.key))
            .send_json(request)
            .map_err(classify)?;
        let body: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::Rejected(format!("unreadable response: {e}")))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ClientError::Rejected("response has no choices".into()))
    }
}

fn classify(e: ureq::Error) -> ClientError {
    match e {
        ureq::Error::StatusCode(code @ (401 | 403)) => ClientError::Auth(format!("http status {code}")),
        ureq::Error::StatusCode(code @ (408 | 409 | 429)) => ClientError::Transient(format!("http status {code}")),
        ureq::Error::StatusCode(code) if code >= 500 => ClientError::Transient(format!("http status {code}")),
        ureq::Error::StatusCode(code) => ClientError::Rejected(format!("http status {code}")),
        ureq::Error::BadUri(_) | ureq::Error::InvalidProxyUrl | ureq::Error::RequireHttpsOnly(_) => {
            ClientError::Config(e.to_string())
        }
        other => ClientError::Transient(other.to_string()),
    }
}

/// Replays canned completions keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct StubClient {
    completions: HashMap<String, String>,
}

#[derive(Deserialize)]
struct CannedRecord {
    image_id: String,
    completion: String,
}

impl StubClient {
    pub fn new(completions: HashMap<String, String>) -> Self {
        Self { completions }
    }

    /// Reads line-delimited `{image_id, completion}` records.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, ClientError> {
        let mut completions = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| ClientError::Config(format!("stub file: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CannedRecord = serde_json::from_str(&line)
                .map_err(|e| ClientError::Config(format!("stub file line {}: {e}", idx + 1)))?;
            completions.insert(rec.image_id, rec.completion);
        }
        Ok(Self { completions })
    }
}

impl ChatClient for StubClient {
    fn complete(&self, image_id: &str, _request: &ChatRequest) -> Result<String, ClientError> {
        self.completions
            .get(image_id)
            .cloned()
            .ok_or_else(|| ClientError::Rejected(format!("no canned completion for {image_id:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// Wait before attempt `attempt + 1`, doubling from `base_delay`.
    pub fn delay(&self, attempt: usize) -> Duration {
        let factor = 1u32 << attempt.saturating_sub(1).min(16);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestOptions {
    pub model: String,
    pub temperature: f64,
    pub instructions: String,
    pub retry: RetryPolicy,
}

impl Default for RequestOptions {
    fn default() -> Self {
        Self {
            model: DEFAULT_MODEL.into(),
            temperature: DEFAULT_TEMPERATURE,
            instructions: DEFAULT_GENERATION_INSTRUCTIONS.into(),
            retry: RetryPolicy::default(),
        }
    }
}

/// Sends `request`, retrying transient failures with exponential backoff.
///
/// Non-retryable failures and exhausted retries surface as
/// [`ClientError::Transport`]; configuration and empty completions are
/// reported as themselves.
pub fn complete_with_retry(
    client: &dyn ChatClient,
    image_id: &str,
    request: &ChatRequest,
    policy: &RetryPolicy,
) -> Result<String, ClientError> {
    let max = policy.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match client.complete(image_id, request) {
            Ok(text) if text.trim().is_empty() => return Err(ClientError::EmptyResponse),
            Ok(text) => return Ok(text),
            Err(e @ (ClientError::Config(_) | ClientError::EmptyResponse)) => return Err(e),
            Err(e) if e.is_retryable() && attempt < max => {
                log::warn!("{image_id}: attempt {attempt}/{max} failed: {e}");
                thread::sleep(policy.delay(attempt));
            }
            Err(e) => {
                return Err(ClientError::Transport {
                    attempts: attempt,
                    last: e.to_string(),
                })
            }
        }
    }
}

/// Renders the prompt for `payload` and returns the raw completion.
pub fn request_conversations(
    payload: &PromptPayload,
    client: &dyn ChatClient,
    opts: &RequestOptions,
) -> Result<String, Error> {
    let prompt = build_finetune_prompt(payload, &opts.instructions)?;
    let request = ChatRequest::single_turn(opts.model.clone(), prompt, opts.temperature);
    Ok(complete_with_retry(client, &payload.image_id, &request, &opts.retry)?)
}

/// [`request_conversations`] over many payloads with at most `max_in_flight`
/// concurrent requests. Results are in input order.
pub fn request_many(
    payloads: &[PromptPayload],
    client: &dyn ChatClient,
    opts: &RequestOptions,
    max_in_flight: usize,
) -> Vec<Result<String, Error>> {
    let workers = max_in_flight.max(1).min(payloads.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<String, Error>>>> =
        Mutex::new((0..payloads.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(payload) = payloads.get(i) else { break };
                let result = request_conversations(payload, client, opts);
                slots.lock().expect("result slots poisoned")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every payload is processed"))
        .collect()
}
