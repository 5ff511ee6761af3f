//! Chat-completion gateway for OpenAI-compatible providers, plus the
//! deterministic mock used in tests and offline runs.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MOCK_MODEL_ID: &str = "mock";
pub const DEFAULT_API_KEY_ENV: &str = "AIANO_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::User, content: content.into() }
    }
}

pub type PromptMessages = Vec<ChatMessage>;

/// SHA-256 over the canonical JSON serialization of the messages, hex encoded.
pub fn prompt_fingerprint(messages: &[ChatMessage]) -> String {
    let bytes = serde_json::to_vec(messages).expect("chat messages always serialize");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_temperature() -> f64 {
    0.2
}

fn default_max_tokens() -> u32 {
    512
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams { temperature: default_temperature(), max_tokens: default_max_tokens() }
    }
}

/// Connection settings for one provider. The API key itself is never part of
/// this struct; `api_key_ref` names the environment variable that holds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model_id: String,
    #[serde(default = "default_api_key_ref")]
    pub api_key_ref: String,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
}

fn default_api_key_ref() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_timeout_s() -> f64 {
    60.0
}

fn default_max_retries() -> u32 {
    2
}

fn default_max_concurrency() -> usize {
    4
}

impl ProviderConfig {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        ProviderConfig {
            base_url: base_url.into(),
            model_id: model_id.into(),
            api_key_ref: default_api_key_ref(),
            timeout_s: default_timeout_s(),
            max_retries: default_max_retries(),
            max_concurrency: default_max_concurrency(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let url = url::Url::parse(&self.base_url).map_err(|e| format!("base_url: {e}"))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(format!("base_url: unsupported scheme `{}`", url.scheme()));
        }
        if self.model_id.trim().is_empty() {
            return Err("model_id must not be empty".into());
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err("timeout_s must be positive".into());
        }
        if self.max_concurrency == 0 {
            return Err("max_concurrency must be positive".into());
        }
        Ok(())
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderError {
    #[error("provider rejected credentials (HTTP {status})")]
    AuthError { status: u16 },
    #[error("provider rate limit persisted after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("provider returned HTTP {status} after {attempts} attempts")]
    ServerError { status: u16, attempts: u32 },
    #[error("provider returned HTTP {status}")]
    HttpStatus { status: u16 },
    #[error("provider request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { message: String, attempts: u32 },
    #[error("malformed provider response: {message}")]
    MalformedResponse { message: String },
    #[error("API key variable `{variable}` is not set")]
    MissingApiKey { variable: String },
    #[error("messages must not be empty")]
    EmptyMessages,
    #[error("invalid provider configuration: {message}")]
    InvalidConfig { message: String },
}

/// Anything that can turn prompt messages into a completion.
pub trait ChatProvider: Send + Sync {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<Completion, ProviderError>;
}

/// `"MOCK:"` followed by the first 16 hex digits of the prompt fingerprint.
pub fn mock_complete(messages: &[ChatMessage]) -> Completion {
    let fingerprint = prompt_fingerprint(messages);
    Completion {
        text: format!("MOCK:{}", &fingerprint[..16]),
        model_id: MOCK_MODEL_ID.to_string(),
        usage: None,
        latency_ms: 0,
    }
}

/// Provider backed by [`mock_complete`] that counts how often it was called.
#[derive(Debug, Default)]
pub struct MockProvider {
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for MockProvider {
    fn complete(
        &self,
        messages: &[ChatMessage],
        _params: &GenerationParams,
    ) -> Result<Completion, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(mock_complete(messages))
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for Arc<P> {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<Completion, ProviderError> {
        (**self).complete(messages, params)
    }
}

/// Exponential backoff with multiplicative jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base_delay: Duration,
    pub factor: f64,
    /// Fractional jitter; 0.2 means each delay is scaled by a factor in [0.8, 1.2].
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { base_delay: Duration::from_millis(500), factor: 2.0, jitter: 0.2 }
    }
}

impl RetryPolicy {
    /// Nominal delay before retry number `retry` (0-based), without jitter.
    pub fn nominal_delay(&self, retry: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(retry as i32))
    }

    pub fn delay<R: Rng + ?Sized>(&self, retry: u32, rng: &mut R) -> Duration {
        let scale = if self.jitter > 0.0 {
            1.0 + rng.random_range(-self.jitter..=self.jitter)
        } else {
            1.0
        };
        self.nominal_delay(retry).mul_f64(scale)
    }
}

/// Counting semaphore capping in-flight provider requests.
#[derive(Debug)]
struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(capacity: usize) -> Self {
        Limiter { available: Mutex::new(capacity.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *available == 0 {
            available = self.freed.wait(available).unwrap_or_else(|e| e.into_inner());
        }
        *available -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut available = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *available += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

/// The JSON body sent to `/chat/completions`.
pub fn chat_request_body(
    model_id: &str,
    messages: &[ChatMessage],
    params: &GenerationParams,
) -> serde_json::Value {
    serde_json::to_value(ChatRequest {
        model: model_id,
        messages,
        temperature: params.temperature,
        max_tokens: params.max_tokens,
    })
    .expect("chat request always serializes")
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    model: Option<String>,
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

fn parse_response(body: &str) -> Result<(String, Option<String>, Option<Usage>), ProviderError> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| ProviderError::MalformedResponse { message: e.to_string() })?;
    let content = parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| ProviderError::MalformedResponse { message: "missing choices[0].message.content".into() })?;
    Ok((content, parsed.model, parsed.usage))
}

enum Attempt {
    Done(Result<Completion, ProviderError>),
    Retry(ProviderError),
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
///
/// `timeout_s` bounds one whole `complete` call, retries included: each
/// attempt gets the remaining budget and no retry is scheduled past it.
pub struct HttpProvider {
    config: ProviderConfig,
    api_key: String,
    agent: ureq::Agent,
    policy: RetryPolicy,
    limiter: Limiter,
    attempts: AtomicUsize,
}

impl fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpProvider")
            .field("config", &self.config)
            .field("api_key", &"<redacted>")
            .field("policy", &self.policy)
            .finish()
    }
}

impl HttpProvider {
    /// Resolves the API key from the environment variable named by
    /// `config.api_key_ref`.
    pub fn from_env(config: ProviderConfig) -> Result<Self, ProviderError> {
        let key = std::env::var(&config.api_key_ref)
            .map_err(|_| ProviderError::MissingApiKey { variable: config.api_key_ref.clone() })?;
        Self::with_api_key(config, key)
    }

    pub fn with_api_key(config: ProviderConfig, api_key: impl Into<String>) -> Result<Self, ProviderError> {
        config.validate().map_err(|message| ProviderError::InvalidConfig { message })?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpProvider {
            limiter: Limiter::new(config.max_concurrency),
            config,
            api_key: api_key.into(),
            agent,
            policy: RetryPolicy::default(),
            attempts: AtomicUsize::new(0),
        })
    }

    pub fn with_retry_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// Total HTTP attempts issued by this client so far.
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }

    fn attempt(&self, body: &serde_json::Value, attempt_no: u32, started: Instant, budget: Duration) -> Attempt {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        let remaining = budget.saturating_sub(started.elapsed());
        let response = self
            .agent
            .post(&self.config.endpoint())
            .config()
            .timeout_global(Some(remaining))
            .build()
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let mut response = match response {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Attempt::Retry(ProviderError::Timeout { attempts: attempt_no })
            }
            Err(e) => {
                return Attempt::Retry(ProviderError::Transport {
                    message: e.to_string(),
                    attempts: attempt_no,
                })
            }
        };
        let status = response.status().as_u16();
        match status {
            200..=299 => {
                let text = match response.body_mut().read_to_string() {
                    Ok(t) => t,
                    Err(ureq::Error::Timeout(_)) => {
                        return Attempt::Retry(ProviderError::Timeout { attempts: attempt_no })
                    }
                    Err(e) => {
                        return Attempt::Done(Err(ProviderError::MalformedResponse { message: e.to_string() }))
                    }
                };
                Attempt::Done(parse_response(&text).map(|(text, model, usage)| Completion {
                    text,
                    model_id: model.unwrap_or_else(|| self.config.model_id.clone()),
                    usage,
                    latency_ms: started.elapsed().as_millis() as u64,
                }))
            }
            401 | 403 => Attempt::Done(Err(ProviderError::AuthError { status })),
            429 => Attempt::Retry(ProviderError::RateLimited { attempts: attempt_no }),
            500..=599 => Attempt::Retry(ProviderError::ServerError { status, attempts: attempt_no }),
            _ => Attempt::Done(Err(ProviderError::HttpStatus { status })),
        }
    }
}

impl ChatProvider for HttpProvider {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<Completion, ProviderError> {
        if messages.is_empty() {
            return Err(ProviderError::EmptyMessages);
        }
        let body = chat_request_body(&self.config.model_id, messages, params);
        let _permit = self.limiter.acquire();
        let started = Instant::now();
        let budget = Duration::from_secs_f64(self.config.timeout_s);
        let mut retry = 0u32;
        loop {
            match self.attempt(&body, retry + 1, started, budget) {
                Attempt::Done(result) => return result,
                Attempt::Retry(err) => {
                    if retry >= self.config.max_retries {
                        return Err(err);
                    }
                    let delay = self.policy.delay(retry, &mut rand::rng());
                    if started.elapsed() + delay >= budget {
                        return Err(match err {
                            ProviderError::Timeout { .. } => err,
                            _ => ProviderError::Timeout { attempts: retry + 1 },
                        });
                    }
                    tracing::warn!(
                        model = %self.config.model_id,
                        attempt = retry + 1,
                        error = %err,
                        delay_ms = delay.as_millis() as u64,
                        "retrying chat completion"
                    );
                    std::thread::sleep(delay);
                    retry += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn messages(user: &str) -> PromptMessages {
        vec![ChatMessage::system("Answer in German."), ChatMessage::user(user)]
    }

    #[test]
    fn mock_is_deterministic() {
        let a = mock_complete(&messages("Wer?"));
        let b = mock_complete(&messages("Wer?"));
        assert_eq!(a, b);
        assert!(a.text.starts_with("MOCK:"));
        assert_eq!(a.text.len(), 5 + 16);
        assert_eq!(a.model_id, MOCK_MODEL_ID);
    }

    #[test]
    fn mock_text_matches_independent_hash() {
        let msgs = messages("Wer ist es?");
        let json = r#"[{"role":"system","content":"Answer in German."},{"role":"user","content":"Wer ist es?"}]"#;
        let digest = hex::encode(Sha256::digest(json.as_bytes()));
        assert_eq!(mock_complete(&msgs).text, format!("MOCK:{}", &digest[..16]));
        assert_eq!(prompt_fingerprint(&msgs), digest);
    }

    #[test]
    fn mock_separates_one_char_changes() {
        let base = "Berlin ist die Hauptstadt.";
        let mut texts = std::collections::HashSet::new();
        texts.insert(mock_complete(&messages(base)).text);
        for i in 0..base.len() {
            let mut changed: Vec<char> = base.chars().collect();
            changed[i] = if changed[i] == 'x' { 'y' } else { 'x' };
            let changed: String = changed.into_iter().collect();
            assert!(texts.insert(mock_complete(&messages(&changed)).text));
        }
    }

    #[test]
    fn mock_handles_empty_user_content() {
        let c = mock_complete(&[ChatMessage::system("p"), ChatMessage::user("")]);
        assert!(c.text.starts_with("MOCK:"));
    }

    #[test]
    fn request_body_shape() {
        let body = chat_request_body("llama", &messages("Q"), &GenerationParams::default());
        assert_eq!(
            body,
            serde_json::json!({
                "model": "llama",
                "messages": [
                    {"role": "system", "content": "Answer in German."},
                    {"role": "user", "content": "Q"}
                ],
                "temperature": 0.2,
                "max_tokens": 512
            })
        );
    }

    #[test]
    fn response_parsing() {
        let ok = r#"{"model":"m","choices":[{"message":{"role":"assistant","content":"42"}}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#;
        let (text, model, usage) = parse_response(ok).unwrap();
        assert_eq!(text, "42");
        assert_eq!(model.as_deref(), Some("m"));
        assert_eq!(usage, Some(Usage { prompt_tokens: 3, completion_tokens: 1 }));
        assert!(matches!(
            parse_response(r#"{"choices":[]}"#),
            Err(ProviderError::MalformedResponse { .. })
        ));
        assert!(matches!(
            parse_response(r#"{"choices":[{"message":{"role":"assistant"}}]}"#),
            Err(ProviderError::MalformedResponse { .. })
        ));
    }

    #[test]
    fn backoff_stays_within_jitter_band() {
        let policy = RetryPolicy::default();
        let mut rng = rand::rng();
        for retry in 0..4 {
            let nominal = policy.nominal_delay(retry).as_secs_f64();
            assert!((nominal - 0.5 * 2f64.powi(retry as i32)).abs() < 1e-12);
            for _ in 0..50 {
                let d = policy.delay(retry, &mut rng).as_secs_f64();
                assert!(d >= nominal * 0.8 - 1e-9 && d <= nominal * 1.2 + 1e-9);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(ProviderConfig::new("http://localhost:8000/v1", "m").validate().is_ok());
        assert!(ProviderConfig::new("not a url", "m").validate().is_err());
        assert!(ProviderConfig::new("ftp://x", "m").validate().is_err());
        assert_eq!(
            ProviderConfig::new("http://h/v1/", "m").endpoint(),
            "http://h/v1/chat/completions"
        );
    }

    #[test]
    fn debug_output_redacts_key() {
        let p = HttpProvider::with_api_key(ProviderConfig::new("http://h", "m"), "sk-SENTINEL").unwrap();
        assert!(!format!("{p:?}").contains("sk-SENTINEL"));
    }
}
