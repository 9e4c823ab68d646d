//! Deterministic replay provider for offline runs and tests.
//!
//! Responses come from two script sources, checked in order: exact digest
//! entries, then pattern rules matched against the rendered prompt text.
//! Each rule carries an ordered response queue, so a scripted conversation
//! can return different text on successive matches (e.g. a malformed reply
//! followed by a well-formed one). Anything unscripted is an error carrying
//! the request digest.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use super::{
    ApproxCounter, CompletionProvider, CompletionRequest, CompletionResponse, GatewayError,
    ProviderKind, TokenCounter,
};

struct ScriptRule {
    pattern: String,
    responses: std::collections::VecDeque<String>,
}

#[derive(Default)]
pub struct ReplayProvider {
    by_digest: Mutex<HashMap<String, String>>,
    rules: Mutex<Vec<ScriptRule>>,
    calls: AtomicUsize,
}

impl ReplayProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Script an exact response for a request digest.
    pub fn script_digest(&self, digest: impl Into<String>, text: impl Into<String>) {
        self.by_digest
            .lock()
            .unwrap()
            .insert(digest.into(), text.into());
    }

    /// Script a response queue for any request whose prompt text contains
    /// `pattern`. Rules are consulted in registration order; a rule with an
    /// exhausted queue is skipped.
    pub fn script_rule<I, S>(&self, pattern: impl Into<String>, responses: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.rules.lock().unwrap().push(ScriptRule {
            pattern: pattern.into(),
            responses: responses.into_iter().map(Into::into).collect(),
        });
    }

    /// Number of complete() calls served or rejected.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn lookup(&self, req: &CompletionRequest) -> Option<String> {
        let digest = req.cache_key().0;
        if let Some(text) = self.by_digest.lock().unwrap().get(&digest) {
            return Some(text.clone());
        }
        let haystack = req.full_text();
        let mut rules = self.rules.lock().unwrap();
        for rule in rules.iter_mut() {
            if rule.responses.is_empty() {
                continue;
            }
            if haystack.contains(&rule.pattern) {
                return rule.responses.pop_front();
            }
        }
        None
    }
}

impl CompletionProvider for ReplayProvider {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self.lookup(req) {
            Some(text) => Ok(CompletionResponse {
                prompt_tokens: ApproxCounter.count(&req.full_text()),
                response_tokens: ApproxCounter.count(&text),
                text,
                provider: ProviderKind::Replay,
                latency: Duration::ZERO,
            }),
            None => Err(GatewayError::Unscripted {
                digest: req.cache_key().0,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(user: &str) -> CompletionRequest {
        CompletionRequest {
            system_prompt: "system".to_string(),
            user_messages: vec![user.to_string()],
            temperature: 0.1,
            max_response_tokens: 64,
            model_id: "m".to_string(),
            token_budget: 8000,
        }
    }

    #[test]
    fn digest_script_round_trips() {
        let provider = ReplayProvider::new();
        let r = req("hello");
        provider.script_digest(r.cache_key().0, "X");
        let resp = provider.complete(&r).unwrap();
        assert_eq!(resp.text, "X");
        assert_eq!(resp.provider, ProviderKind::Replay);
    }

    #[test]
    fn unscripted_request_reports_digest() {
        let provider = ReplayProvider::new();
        let r = req("nobody scripted this");
        match provider.complete(&r) {
            Err(GatewayError::Unscripted { digest }) => assert_eq!(digest, r.cache_key().0),
            other => panic!("expected unscripted error, got {other:?}"),
        }
    }

    #[test]
    fn rules_pop_in_sequence() {
        let provider = ReplayProvider::new();
        provider.script_rule("hello", ["first", "second"]);
        assert_eq!(provider.complete(&req("hello")).unwrap().text, "first");
        assert_eq!(provider.complete(&req("hello")).unwrap().text, "second");
        assert!(provider.complete(&req("hello")).is_err());
        assert_eq!(provider.calls(), 3);
    }

    #[test]
    fn exhausted_rule_falls_through_to_later_rule() {
        let provider = ReplayProvider::new();
        provider.script_rule("hello", ["only one"]);
        provider.script_rule("hel", ["fallback"]);
        assert_eq!(provider.complete(&req("hello")).unwrap().text, "only one");
        assert_eq!(provider.complete(&req("hello")).unwrap().text, "fallback");
    }
}
