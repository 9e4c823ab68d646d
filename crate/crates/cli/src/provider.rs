//! Provider construction from config: remote or replay, optionally wrapped
//! by the persistent cache.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use macoder_core::gateway::{CacheProvider, CompletionProvider, RemoteProvider, ReplayProvider};

use crate::config::RunConfigFile;

/// One line of a replay scripts file.
#[derive(Debug, Deserialize)]
struct ScriptLine {
    #[serde(default)]
    digest: Option<String>,
    #[serde(default)]
    contains: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    responses: Option<Vec<String>>,
}

/// Load a scripts file into a replay provider. Lines carry either an exact
/// digest entry or a prompt-substring rule with one or more responses.
pub fn load_replay_scripts(path: &Path) -> Result<ReplayProvider> {
    let provider = ReplayProvider::new();
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read replay scripts {}", path.display()))?;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let script: ScriptLine = serde_json::from_str(line)
            .with_context(|| format!("scripts line {}: invalid JSON", idx + 1))?;
        match (script.digest, script.contains) {
            (Some(digest), None) => {
                let text = script.text.with_context(|| {
                    format!("scripts line {}: digest entry needs text", idx + 1)
                })?;
                provider.script_digest(digest, text);
            }
            (None, Some(pattern)) => {
                let responses = match (script.responses, script.text) {
                    (Some(responses), None) => responses,
                    (None, Some(text)) => vec![text],
                    _ => bail!(
                        "scripts line {}: rule needs either text or responses",
                        idx + 1
                    ),
                };
                provider.script_rule(pattern, responses);
            }
            _ => bail!(
                "scripts line {}: exactly one of digest or contains is required",
                idx + 1
            ),
        }
    }
    Ok(provider)
}

/// Build the configured provider chain. When a cache path is set the inner
/// provider is wrapped so hits never leave the machine.
pub fn build_provider(cfg: &RunConfigFile) -> Result<Arc<dyn CompletionProvider>> {
    let inner: Arc<dyn CompletionProvider> = match cfg.gateway.provider.as_str() {
        "replay" => {
            let provider = match &cfg.gateway.replay.scripts {
                Some(path) => load_replay_scripts(path)?,
                None => ReplayProvider::new(),
            };
            Arc::new(provider)
        }
        "remote" => Arc::new(RemoteProvider::new(cfg.gateway.remote.to_remote_config())?),
        other => bail!("unknown gateway provider {other:?}"),
    };
    match &cfg.paths.cache {
        Some(path) => {
            let cache = CacheProvider::open(path, inner)
                .with_context(|| format!("cannot open cache {}", path.display()))?;
            Ok(Arc::new(cache))
        }
        None => Ok(inner),
    }
}
