//! HTTP client for chat-completion-style text generation endpoints, with
//! exponential-backoff retries on transient failures and a content-addressed
//! disk cache so identical requests never hit the network twice.

use std::io::Write;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LlmError;

/// Client configuration. The credential is read from the environment variable
/// named by `api_key_env`, never stored in config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmClientConfig {
    /// Full completion endpoint URL, e.g. `http://host:1234/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    /// Environment variable holding the bearer credential. None disables auth.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Response cache directory. None disables caching.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Append request/response transcripts to this JSON-lines file.
    #[serde(default)]
    pub transcript_path: Option<PathBuf>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_temperature() -> f64 {
    0.7
}
fn default_max_tokens() -> usize {
    8192
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    250
}
fn default_in_flight() -> usize {
    4
}
fn default_timeout_secs() -> u64 {
    120
}

/// One completion call.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: usize,
}

/// Raw outcome of a completion call. `text` is kept verbatim for generation
/// logs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub latency_ms: u64,
    pub http_status: u16,
    /// HTTP attempts this response took (1 = no retries).
    pub attempts: u32,
    /// True when served from the disk cache without network traffic.
    #[serde(default)]
    pub from_cache: bool,
}

/// Blocking client with a per-instance in-flight limit.
pub struct LlmClient {
    config: LlmClientConfig,
    agent: ureq::Agent,
    permits: Semaphore,
    /// Guards cache writes and the transcript file.
    io_lock: Mutex<()>,
}

impl LlmClient {
    pub fn new(config: LlmClientConfig) -> Self {
        let agent_config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build();
        let permits = Semaphore::new(config.max_in_flight.max(1));
        LlmClient {
            agent: ureq::Agent::new_with_config(agent_config),
            config,
            permits,
            io_lock: Mutex::new(()),
        }
    }

    pub fn config(&self) -> &LlmClientConfig {
        &self.config
    }

    /// Build a request with the client's model and sampling settings.
    pub fn request(&self, prompt: String) -> CompletionRequest {
        CompletionRequest {
            model: self.config.model.clone(),
            prompt,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        }
    }

    /// Execute a completion call. Checks the credential before anything else,
    /// then the cache; on a miss, POSTs with retries on 429/5xx/transport
    /// errors and caches the successful response.
    pub fn call(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let credential = match &self.config.api_key_env {
            Some(var) => match std::env::var(var) {
                Ok(value) if !value.is_empty() => Some(value),
                _ => return Err(LlmError::MissingCredential(var.clone())),
            },
            None => None,
        };

        let key = cache_key(request);
        if let Some(cached) = self.cache_lookup(&key)? {
            return Ok(CompletionResponse {
                from_cache: true,
                ..cached
            });
        }

        let _permit = self.permits.acquire();
        let start = Instant::now();
        let mut attempts = 0;
        let response = loop {
            attempts += 1;
            match self.send_once(request, credential.as_deref()) {
                Ok(response) => break response,
                Err(Transient::Retry(reason)) => {
                    if attempts > self.config.max_retries {
                        return Err(LlmError::RetryBudgetExhausted {
                            attempts,
                            last: reason,
                        });
                    }
                    let backoff = self.config.backoff_ms << (attempts - 1).min(8);
                    std::thread::sleep(Duration::from_millis(backoff));
                }
                Err(Transient::Fatal(err)) => return Err(err),
            }
        };

        let response = CompletionResponse {
            latency_ms: start.elapsed().as_millis() as u64,
            attempts,
            from_cache: false,
            ..response
        };
        self.persist(&key, request, &response)?;
        Ok(response)
    }

    fn send_once(
        &self,
        request: &CompletionRequest,
        credential: Option<&str>,
    ) -> Result<CompletionResponse, Transient> {
        let body = serde_json::json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut builder = self.agent.post(&self.config.endpoint);
        if let Some(key) = credential {
            builder = builder.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = builder
            .send_json(&body)
            .map_err(|e| Transient::Retry(format!("transport: {e}")))?;
        let status = response.status().as_u16();
        if status == 429 || (500..600).contains(&status) {
            return Err(Transient::Retry(format!("http status {status}")));
        }
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Transient::Retry(format!("body read: {e}")))?;
        if status != 200 {
            return Err(Transient::Fatal(LlmError::Http {
                status,
                body: truncate(&text, 500),
            }));
        }
        let parsed: ChatCompletion = serde_json::from_str(&text).map_err(|e| {
            Transient::Fatal(LlmError::MalformedResponse(format!(
                "{e} in body {}",
                truncate(&text, 200)
            )))
        })?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Transient::Fatal(LlmError::MalformedResponse("no choices".into())))?;
        Ok(CompletionResponse {
            text: content,
            prompt_tokens: parsed.usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: parsed.usage.as_ref().and_then(|u| u.completion_tokens),
            latency_ms: 0,
            http_status: status,
            attempts: 0,
            from_cache: false,
        })
    }

    fn cache_lookup(&self, key: &str) -> Result<Option<CompletionResponse>, LlmError> {
        let Some(dir) = &self.config.cache_dir else {
            return Ok(None);
        };
        let path = dir.join(format!("{key}.json"));
        if !path.exists() {
            return Ok(None);
        }
        let _guard = self.io_lock.lock().unwrap();
        let text = std::fs::read_to_string(&path)?;
        let entry: CacheEntry = serde_json::from_str(&text)
            .map_err(|e| LlmError::Cache(format!("corrupt cache entry {path:?}: {e}")))?;
        Ok(Some(entry.response))
    }

    fn persist(
        &self,
        key: &str,
        request: &CompletionRequest,
        response: &CompletionResponse,
    ) -> Result<(), LlmError> {
        let _guard = self.io_lock.lock().unwrap();
        if let Some(dir) = &self.config.cache_dir {
            std::fs::create_dir_all(dir)?;
            let entry = CacheEntry {
                request: request.clone(),
                response: response.clone(),
            };
            let tmp = dir.join(format!("{key}.json.tmp"));
            std::fs::write(&tmp, serde_json::to_vec(&entry).expect("serializable"))?;
            std::fs::rename(&tmp, dir.join(format!("{key}.json")))?;
        }
        if let Some(path) = &self.config.transcript_path {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
            let line = serde_json::json!({
                "request": request,
                "response": response,
            });
            writeln!(file, "{line}")?;
        }
        Ok(())
    }
}

enum Transient {
    Retry(String),
    Fatal(LlmError),
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    request: CompletionRequest,
    response: CompletionResponse,
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

/// Content hash of the request; the cache is keyed purely by what would be
/// sent, so re-runs replay byte-identical responses.
pub fn cache_key(request: &CompletionRequest) -> String {
    let canonical = serde_json::to_vec(request).expect("serializable");
    let digest = Sha256::digest(&canonical);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_string();
    }
    let mut end = max;
    while end > 0 && !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}

/// Counting semaphore for the per-client in-flight limit.
struct Semaphore {
    available: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(count: usize) -> Self {
        Semaphore {
            available: Mutex::new(count),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock().unwrap();
        while *available == 0 {
            available = self.cv.wait(available).unwrap();
        }
        *available -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut available = self.0.available.lock().unwrap();
        *available += 1;
        self.0.cv.notify_one();
    }
}
