//! Persistent cache wrapper: an append-only on-disk key→response log loaded
//! at startup. Hits are served byte-identically with provider=cache; misses
//! go to the wrapped provider and are appended to the log, making runs
//! resumable and replayable.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    CompletionProvider, CompletionRequest, CompletionResponse, GatewayError, ProviderKind,
};

/// One line of the cache log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub digest: String,
    pub request: CompletionRequest,
    pub response_text: String,
    pub prompt_tokens: usize,
    pub response_tokens: usize,
}

struct CacheState {
    entries: HashMap<String, CacheRecord>,
    writer: Option<File>,
}

pub struct CacheProvider<P> {
    inner: P,
    state: Mutex<CacheState>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<P: CompletionProvider> CacheProvider<P> {
    /// Open (or create) an on-disk cache log and load every record.
    pub fn open(path: &Path, inner: P) -> Result<Self, GatewayError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| GatewayError::CacheIo(e.to_string()))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| GatewayError::CacheIo(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord = serde_json::from_str(&line)
                    .map_err(|e| GatewayError::CacheIo(format!("corrupt cache line: {e}")))?;
                entries.insert(record.digest.clone(), record);
            }
        }
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::CacheIo(e.to_string()))?;
        Ok(Self {
            inner,
            state: Mutex::new(CacheState {
                entries,
                writer: Some(writer),
            }),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    /// Memory-only cache, for tests and one-shot runs.
    pub fn in_memory(inner: P) -> Self {
        Self {
            inner,
            state: Mutex::new(CacheState {
                entries: HashMap::new(),
                writer: None,
            }),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: CompletionProvider> CompletionProvider for CacheProvider<P> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let digest = req.cache_key().0;
        {
            let state = self.state.lock().unwrap();
            if let Some(record) = state.entries.get(&digest) {
                self.hits.fetch_add(1, Ordering::SeqCst);
                return Ok(CompletionResponse {
                    text: record.response_text.clone(),
                    prompt_tokens: record.prompt_tokens,
                    response_tokens: record.response_tokens,
                    provider: ProviderKind::Cache,
                    latency: Duration::ZERO,
                });
            }
        }
        // Miss: call the inner provider outside the lock so slow remote
        // calls do not serialize the whole batch.
        let response = self.inner.complete(req)?;
        self.misses.fetch_add(1, Ordering::SeqCst);
        let record = CacheRecord {
            digest: digest.clone(),
            request: req.clone(),
            response_text: response.text.clone(),
            prompt_tokens: response.prompt_tokens,
            response_tokens: response.response_tokens,
        };
        let mut state = self.state.lock().unwrap();
        if !state.entries.contains_key(&digest) {
            if let Some(writer) = state.writer.as_mut() {
                let line = serde_json::to_string(&record)
                    .map_err(|e| GatewayError::CacheIo(e.to_string()))?;
                writeln!(writer, "{line}").map_err(|e| GatewayError::CacheIo(e.to_string()))?;
                writer
                    .flush()
                    .map_err(|e| GatewayError::CacheIo(e.to_string()))?;
            }
            state.entries.insert(digest, record);
        }
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ReplayProvider;

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
    fn second_call_is_a_cache_hit() {
        let replay = ReplayProvider::new();
        replay.script_rule("ask", ["answer"]);
        let cache = CacheProvider::in_memory(replay);
        let first = cache.complete(&req("ask")).unwrap();
        assert_eq!(first.provider, ProviderKind::Replay);
        let second = cache.complete(&req("ask")).unwrap();
        assert_eq!(second.provider, ProviderKind::Cache);
        assert_eq!(second.text, first.text);
        assert_eq!(cache.hits(), 1);
        assert_eq!(cache.misses(), 1);
        // The rule queue held one response; the hit never reached replay.
        assert_eq!(cache.inner().calls(), 1);
    }

    #[test]
    fn disk_cache_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let replay = ReplayProvider::new();
            replay.script_rule("ask", ["answer"]);
            let cache = CacheProvider::open(&path, replay).unwrap();
            cache.complete(&req("ask")).unwrap();
        }
        // New provider with an empty script: the warm cache must serve it.
        let cache = CacheProvider::open(&path, ReplayProvider::new()).unwrap();
        let resp = cache.complete(&req("ask")).unwrap();
        assert_eq!(resp.text, "answer");
        assert_eq!(resp.provider, ProviderKind::Cache);
        assert_eq!(cache.inner().calls(), 0);
    }

    #[test]
    fn inner_error_propagates_and_nothing_is_cached() {
        let cache = CacheProvider::in_memory(ReplayProvider::new());
        assert!(cache.complete(&req("unscripted")).is_err());
        assert!(cache.is_empty());
    }

    #[test]
    fn concurrent_callers_share_the_cache() {
        let replay = ReplayProvider::new();
        for i in 0..8 {
            replay.script_rule(format!("q{i}"), [format!("a{i}")]);
        }
        let cache = std::sync::Arc::new(CacheProvider::in_memory(replay));
        std::thread::scope(|scope| {
            for i in 0..8 {
                let cache = std::sync::Arc::clone(&cache);
                scope.spawn(move || {
                    let r = req(&format!("q{i}"));
                    assert_eq!(cache.complete(&r).unwrap().text, format!("a{i}"));
                    assert_eq!(cache.complete(&r).unwrap().provider, ProviderKind::Cache);
                });
            }
        });
        assert_eq!(cache.len(), 8);
    }
}
