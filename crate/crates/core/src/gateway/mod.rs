//! Completion gateway: one blocking `complete` interface over three
//! interchangeable providers (remote HTTP, persistent cache wrapper,
//! deterministic replay), plus token budgeting for the fixed context window.

pub mod cache;
pub mod counter;
pub mod remote;
pub mod replay;
pub mod transcript;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::CacheProvider;
pub use counter::{
    count_tokens, truncate_to_budget, ApproxCounter, TokenCounter, TruncationOutcome,
};
pub use remote::{Clock, RemoteConfig, RemoteProvider, SystemClock};
pub use replay::ReplayProvider;
pub use transcript::{TranscriptLog, TranscriptRecord};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_TOKEN_BUDGET: usize = 8000;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limit still exhausted after {attempts} attempts")]
    RateLimitExhausted { attempts: usize },
    #[error("completion rejected by content filter: {0}")]
    ContentFilter(String),
    #[error("network timeout: {0}")]
    Timeout(String),
    #[error("http error {status}: {message}")]
    Http { status: u16, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unscripted request with digest {digest}")]
    Unscripted { digest: String },
    #[error(
        "prompt overhead ({fixed_tokens} tokens + {reserved} reserved) exceeds budget {budget}"
    )]
    BudgetExceeded {
        fixed_tokens: usize,
        reserved: usize,
        budget: usize,
    },
    #[error("cache io error: {0}")]
    CacheIo(String),
}

/// One chat-completion request. The token budget is the model's context
/// window; it shapes truncation but is not part of the cache identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_prompt: String,
    pub user_messages: Vec<String>,
    pub temperature: f64,
    pub max_response_tokens: usize,
    pub model_id: String,
    pub token_budget: usize,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.token_budget == 0 {
            return Err(GatewayError::InvalidRequest(
                "token_budget must be at least 1".to_string(),
            ));
        }
        if self.user_messages.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "at least one user message required".to_string(),
            ));
        }
        Ok(())
    }

    /// Cache identity: canonical JSON of the response-determining fields, in
    /// fixed order, hashed with SHA-256.
    pub fn cache_key(&self) -> CacheKey {
        let canonical = serde_json::json!({
            "system_prompt": self.system_prompt,
            "user_messages": self.user_messages,
            "temperature": self.temperature,
            "max_response_tokens": self.max_response_tokens,
            "model_id": self.model_id,
        });
        let mut hasher = Sha256::new();
        hasher.update(canonical.to_string().as_bytes());
        CacheKey(format!("{:x}", hasher.finalize()))
    }

    /// All request text, used for approximate prompt token counts.
    pub fn full_text(&self) -> String {
        let mut text = self.system_prompt.clone();
        for msg in &self.user_messages {
            text.push('\n');
            text.push_str(msg);
        }
        text
    }
}

/// Hex SHA-256 digest identifying a request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey(pub String);

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Remote,
    Cache,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub prompt_tokens: usize,
    pub response_tokens: usize,
    pub provider: ProviderKind,
    #[serde(with = "duration_millis")]
    pub latency: Duration,
}

mod duration_millis {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        (d.as_millis() as u64).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// A blocking completion backend. Implementations must tolerate concurrent
/// calls from multiple workflow workers.
pub trait CompletionProvider: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError>;
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for std::sync::Arc<P> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        (**self).complete(req)
    }
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for Box<P> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        (**self).complete(req)
    }
}

/// Validate and dispatch a request to a provider.
pub fn complete(
    req: &CompletionRequest,
    provider: &dyn CompletionProvider,
) -> Result<CompletionResponse, GatewayError> {
    req.validate()?;
    provider.complete(req)
}
