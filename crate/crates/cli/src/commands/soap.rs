//! SOAP sidecar conversion: one structured form per note, cached so a rerun
//! on a warm cache performs zero new gateway calls.

use std::collections::BTreeMap;

use anyhow::Result;

use macoder_core::agents::{run_agent, AgentRole, PromptContext, TurnPayload};
use macoder_core::gateway::{ApproxCounter, TranscriptLog};

use crate::config::RunConfigFile;
use crate::lock::CacheLock;
use crate::provider::build_provider;

use super::{
    ensure_output_dir, load_corpus_file, read_soap_sidecar, write_soap_sidecar, CommandStatus,
};

pub fn cmd_soap_convert(cfg: &RunConfigFile) -> Result<CommandStatus> {
    cfg.validate_paths()?;
    ensure_output_dir(cfg)?;
    let corpus = load_corpus_file(cfg)?;
    let sidecar_path = cfg.soap_sidecar_path();
    let mut forms = read_soap_sidecar(&sidecar_path)?;

    let pending: Vec<_> = corpus
        .notes()
        .iter()
        .filter(|n| !forms.contains_key(&n.note_id))
        .collect();
    if pending.is_empty() {
        println!(
            "SOAP sidecar {} already covers all {} notes",
            sidecar_path.display(),
            corpus.len()
        );
        return Ok(CommandStatus::AllComplete);
    }

    let _lock = cfg
        .paths
        .cache
        .as_deref()
        .map(CacheLock::acquire)
        .transpose()?;
    let provider = build_provider(cfg)?;
    let params = cfg.gateway_params();
    let patterns: Vec<String> = Vec::new();
    let already_converted = forms.len();
    let transcript = TranscriptLog::open(&cfg.paths.output_dir.join("transcript.jsonl"))?;

    let mut failures: BTreeMap<String, String> = BTreeMap::new();
    for note in pending {
        let ctx = PromptContext {
            note_id: &note.note_id,
            note_text: Some(&note.text),
            confrontation: cfg.workflow.confrontation,
            ..Default::default()
        };
        match run_agent(
            AgentRole::SoapFormatter,
            &ctx,
            provider.as_ref(),
            &ApproxCounter,
            &params,
            cfg.workflow.retry_budget,
            &patterns,
        ) {
            Ok(exchange) => {
                for turn in &exchange.turns {
                    transcript.record(
                        &turn.digest,
                        &turn.role.to_string(),
                        &note.note_id,
                        turn.prompt_tokens,
                        turn.response_tokens,
                    )?;
                }
                match exchange.payload() {
                    TurnPayload::Soap { soap } => {
                        if soap.is_degenerate() {
                            eprintln!(
                                "note {}: degenerate SOAP form (empty subjective and objective)",
                                note.note_id
                            );
                        }
                        forms.insert(note.note_id.clone(), soap.clone());
                    }
                    TurnPayload::ParseFailed { error } => {
                        failures.insert(note.note_id.clone(), error.clone());
                    }
                    other => {
                        failures.insert(
                            note.note_id.clone(),
                            format!("unexpected payload {other:?}"),
                        );
                    }
                }
            }
            Err(err) => {
                failures.insert(note.note_id.clone(), err.to_string());
            }
        }
    }

    write_soap_sidecar(&sidecar_path, &corpus, &forms)?;
    println!(
        "SOAP sidecar {}: {} forms ({} new), {} failures",
        sidecar_path.display(),
        forms.len(),
        forms.len() - already_converted,
        failures.len()
    );
    for (note_id, reason) in &failures {
        eprintln!("  conversion failed for {note_id}: {reason}");
    }
    if failures.is_empty() {
        Ok(CommandStatus::AllComplete)
    } else {
        Ok(CommandStatus::PartialFailures)
    }
}
