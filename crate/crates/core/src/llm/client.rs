use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde_json::json;

/// Environment variable holding the chat-completion API key.
pub const API_KEY_ENV: &str = "NBCLAIMS_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError {
    pub message: String,
    /// Network failures, 429 and 5xx responses are worth retrying.
    pub retryable: bool,
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

/// Anything that can answer a single-turn chat prompt.
pub trait ChatClient: Send + Sync {
    fn complete(&self, prompt: &str, model: &str, temperature: f64) -> Result<String, TransportError>;
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpChatClient {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(base_url: &str, api_key: String, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatClient {
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            agent,
        }
    }

    /// Build from [`API_KEY_ENV`]; `None` when the variable is unset.
    pub fn from_env(base_url: &str, timeout: Duration) -> Option<Self> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty())?;
        Some(Self::new(base_url, key, timeout))
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, prompt: &str, model: &str, temperature: f64) -> Result<String, TransportError> {
        let body = json!({
            "model": model,
            "temperature": temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| TransportError {
                message: e.to_string(),
                retryable: true,
            })?;
        let status = response.status().as_u16();
        if status != 200 {
            return Err(TransportError {
                message: format!("HTTP {status}"),
                retryable: status == 429 || status >= 500,
            });
        }
        let value: serde_json::Value = response.body_mut().read_json().map_err(|e| TransportError {
            message: format!("bad response body: {e}"),
            retryable: false,
        })?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| TransportError {
                message: "response has no choices[0].message.content".into(),
                retryable: false,
            })
    }
}

/// Spaces out request starts to honor a requests-per-minute ceiling.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    /// `max_rpm == 0` disables limiting.
    pub fn per_minute(max_rpm: u32) -> Self {
        let interval = if max_rpm == 0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(60.0 / max_rpm as f64)
        };
        RateLimiter {
            interval,
            next: Mutex::new(Instant::now()),
        }
    }

    pub fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next.lock().unwrap();
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

/// Retry policy: `attempts` tries in total, sleeping `base * 2^i` after failure `i`.
#[derive(Debug, Clone, Copy)]
pub struct Backoff {
    pub attempts: u32,
    pub base: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            attempts: 3,
            base: Duration::from_millis(500),
        }
    }
}

/// Call `client` with retries on retryable failures. Returns the response and
/// the number of requests made.
pub fn complete_with_retry(
    client: &dyn ChatClient,
    limiter: &RateLimiter,
    backoff: Backoff,
    prompt: &str,
    model: &str,
    temperature: f64,
) -> (Result<String, TransportError>, u32) {
    let mut calls = 0;
    let mut last = None;
    for attempt in 0..backoff.attempts.max(1) {
        limiter.acquire();
        calls += 1;
        match client.complete(prompt, model, temperature) {
            Ok(text) => return (Ok(text), calls),
            Err(e) if e.retryable && attempt + 1 < backoff.attempts => {
                log::debug!("retrying after transport error: {e}");
                thread::sleep(backoff.base * 2u32.pow(attempt));
                last = Some(e);
            }
            Err(e) => return (Err(e), calls),
        }
    }
    (Err(last.expect("at least one attempt")), calls)
}
