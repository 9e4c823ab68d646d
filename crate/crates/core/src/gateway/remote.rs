//! Remote HTTP chat-completion provider with bounded exponential backoff and
//! a requests-per-minute ceiling. The clock is injectable so rate and retry
//! behavior is testable without waiting on wall time.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Deserialize;

use super::{
    CompletionProvider, CompletionRequest, CompletionResponse, GatewayError, ProviderKind,
};

/// Monotonic time source. Sleeps through the clock so tests can fake both.
pub trait Clock: Send + Sync {
    fn monotonic_ms(&self) -> u64;
    fn sleep_ms(&self, ms: u64);
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn monotonic_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    fn sleep_ms(&self, ms: u64) {
        std::thread::sleep(Duration::from_millis(ms));
    }
}

/// Global minimum spacing between request sends.
pub struct RateLimiter {
    interval_ms: u64,
    last_send_ms: Mutex<Option<u64>>,
}

impl RateLimiter {
    pub fn per_minute(requests_per_minute: u32) -> Self {
        let interval_ms = if requests_per_minute == 0 {
            0
        } else {
            (60_000.0 / requests_per_minute as f64).ceil() as u64
        };
        Self {
            interval_ms,
            last_send_ms: Mutex::new(None),
        }
    }

    /// Block until a send slot is available; returns the send timestamp.
    /// The lock is held across the sleep so concurrent callers queue.
    pub fn acquire(&self, clock: &dyn Clock) -> u64 {
        let mut last = self.last_send_ms.lock().unwrap();
        let now = clock.monotonic_ms();
        let send_at = match *last {
            Some(prev) if self.interval_ms > 0 => {
                let earliest = prev + self.interval_ms;
                if now < earliest {
                    clock.sleep_ms(earliest - now);
                    earliest
                } else {
                    now
                }
            }
            _ => now,
        };
        *last = Some(send_at);
        send_at
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Environment variable holding the bearer token. Secrets never live in
    /// config files.
    pub api_key_env: String,
    pub requests_per_minute: u32,
    pub max_attempts: usize,
    pub timeout: Duration,
    pub backoff_base_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            api_key_env: "MACODER_API_KEY".to_string(),
            requests_per_minute: 60,
            max_attempts: 5,
            timeout: Duration::from_secs(120),
            backoff_base_ms: 500,
        }
    }
}

pub struct RemoteProvider {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    limiter: RateLimiter,
    clock: Box<dyn Clock>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: usize,
    #[serde(default)]
    completion_tokens: usize,
}

#[derive(Deserialize)]
struct WireError {
    error: WireErrorBody,
}

#[derive(Deserialize)]
struct WireErrorBody {
    #[serde(default)]
    code: Option<String>,
    #[serde(default)]
    message: Option<String>,
}

enum Attempt {
    Done(CompletionResponse),
    Fatal(GatewayError),
    Retry(GatewayError),
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Result<Self, GatewayError> {
        Self::with_clock(config, Box::new(SystemClock::new()))
    }

    pub fn with_clock(config: RemoteConfig, clock: Box<dyn Clock>) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let limiter = RateLimiter::per_minute(config.requests_per_minute);
        Ok(Self {
            config,
            client,
            limiter,
            clock,
        })
    }

    fn api_key(&self) -> Result<String, GatewayError> {
        std::env::var(&self.config.api_key_env).map_err(|_| {
            GatewayError::Auth(format!(
                "environment variable {} is not set",
                self.config.api_key_env
            ))
        })
    }

    fn body(req: &CompletionRequest) -> serde_json::Value {
        let mut messages = vec![serde_json::json!({
            "role": "system",
            "content": req.system_prompt,
        })];
        for msg in &req.user_messages {
            messages.push(serde_json::json!({"role": "user", "content": msg}));
        }
        serde_json::json!({
            "model": req.model_id,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_response_tokens,
        })
    }

    fn send_once(&self, req: &CompletionRequest, api_key: &str) -> Attempt {
        let started = Instant::now();
        let result = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(api_key)
            .json(&Self::body(req))
            .send();
        let response = match result {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Attempt::Retry(GatewayError::Timeout(e.to_string()))
            }
            Err(e) => return Attempt::Retry(GatewayError::Transport(e.to_string())),
        };
        let status = response.status();
        let body = response.text().unwrap_or_default();

        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Attempt::Fatal(GatewayError::Auth(format!("status {status}: {body}")));
        }
        if let Ok(err) = serde_json::from_str::<WireError>(&body) {
            if err.error.code.as_deref() == Some("content_filter") {
                return Attempt::Fatal(GatewayError::ContentFilter(
                    err.error.message.unwrap_or_default(),
                ));
            }
        }
        if status.as_u16() == 429 {
            return Attempt::Retry(GatewayError::Http {
                status: 429,
                message: body,
            });
        }
        if status.is_server_error() {
            return Attempt::Retry(GatewayError::Http {
                status: status.as_u16(),
                message: body,
            });
        }
        if !status.is_success() {
            return Attempt::Fatal(GatewayError::Http {
                status: status.as_u16(),
                message: body,
            });
        }

        let wire: WireResponse = match serde_json::from_str(&body) {
            Ok(w) => w,
            Err(e) => {
                return Attempt::Fatal(GatewayError::Transport(format!(
                    "malformed completion response: {e}"
                )))
            }
        };
        let Some(choice) = wire.choices.into_iter().next() else {
            return Attempt::Fatal(GatewayError::Transport(
                "completion response has no choices".to_string(),
            ));
        };
        if choice.finish_reason.as_deref() == Some("content_filter") {
            return Attempt::Fatal(GatewayError::ContentFilter(
                "finish_reason=content_filter".to_string(),
            ));
        }
        let usage = wire.usage.unwrap_or(WireUsage {
            prompt_tokens: 0,
            completion_tokens: 0,
        });
        Attempt::Done(CompletionResponse {
            text: choice.message.content.unwrap_or_default(),
            prompt_tokens: usage.prompt_tokens,
            response_tokens: usage.completion_tokens,
            provider: ProviderKind::Remote,
            latency: started.elapsed(),
        })
    }
}

impl CompletionProvider for RemoteProvider {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let api_key = self.api_key()?;
        let mut last_error = None;
        for attempt in 0..self.config.max_attempts.max(1) {
            if attempt > 0 {
                // 500ms, 1s, 2s, 4s, ... capped by the attempt bound.
                self.clock
                    .sleep_ms(self.config.backoff_base_ms << (attempt - 1).min(16));
            }
            self.limiter.acquire(self.clock.as_ref());
            match self.send_once(req, &api_key) {
                Attempt::Done(response) => return Ok(response),
                Attempt::Fatal(err) => return Err(err),
                Attempt::Retry(err) => last_error = Some(err),
            }
        }
        match last_error {
            Some(GatewayError::Http { status: 429, .. }) => Err(GatewayError::RateLimitExhausted {
                attempts: self.config.max_attempts,
            }),
            Some(err) => Err(err),
            None => Err(GatewayError::Transport("no attempts made".to_string())),
        }
    }
}
