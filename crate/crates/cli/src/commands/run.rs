//! Workflow execution: validate the config completely, then run the batch,
//! skipping notes whose complete results are already on disk.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};

use macoder_core::corpus::Corpus;
use macoder_core::gateway::{ApproxCounter, TranscriptLog};
use macoder_core::workflow::{run_batch, WorkflowMode, WorkflowResult};

use crate::config::RunConfigFile;
use crate::lock::CacheLock;
use crate::provider::build_provider;

use super::{
    ensure_output_dir, load_corpus_file, load_dictionary_file, read_results, read_soap_sidecar,
    write_results, CommandStatus,
};

pub fn results_path(cfg: &RunConfigFile) -> PathBuf {
    cfg.paths.output_dir.join("results.jsonl")
}

pub fn manifest_path(cfg: &RunConfigFile) -> PathBuf {
    cfg.paths.output_dir.join("manifest.json")
}

pub fn cmd_run(cfg: &RunConfigFile) -> Result<CommandStatus> {
    // Validation is total: every config problem must surface before the
    // first gateway call.
    cfg.validate_paths()?;
    let corpus = load_corpus_file(cfg)?;
    let dictionary = load_dictionary_file(cfg)?;
    let workflow_cfg = cfg.workflow_config(dictionary.as_ref())?;

    let soap_forms = if workflow_cfg.mode == WorkflowMode::Mac2 {
        let sidecar = cfg.soap_sidecar_path();
        if !sidecar.exists() {
            bail!(
                "mac2 requires the SOAP sidecar {}; run soap-convert first",
                sidecar.display()
            );
        }
        read_soap_sidecar(&sidecar)?
    } else {
        BTreeMap::new()
    };

    ensure_output_dir(cfg)?;
    let results_file = results_path(cfg);

    // Resume: keep complete results, re-run everything else.
    let mut completed: BTreeMap<String, WorkflowResult> = BTreeMap::new();
    if results_file.exists() {
        for result in read_results(&results_file)? {
            if result.status.is_complete() {
                completed.insert(result.note_id.clone(), result);
            }
        }
    }
    let pending: Vec<_> = corpus
        .notes()
        .iter()
        .filter(|n| !completed.contains_key(&n.note_id))
        .cloned()
        .collect();
    let skipped = corpus.len() - pending.len();

    let new_results = if pending.is_empty() {
        Vec::new()
    } else {
        let _lock = cfg
            .paths
            .cache
            .as_deref()
            .map(CacheLock::acquire)
            .transpose()?;
        let provider = build_provider(cfg)?;
        let sub_corpus = Corpus::from_notes(pending).expect("subset of unique ids");
        let (results, manifest) = run_batch(
            &sub_corpus,
            &soap_forms,
            &workflow_cfg,
            provider.as_ref(),
            &ApproxCounter,
        )?;
        // The manifest snapshots both the resolved file config and the
        // effective workflow config, plus the prompt checksums, so a run can
        // be replayed exactly.
        let manifest_json = serde_json::to_string_pretty(&serde_json::json!({
            "run_config": cfg,
            "workflow": manifest,
        }))?;
        std::fs::write(manifest_path(cfg), manifest_json).context("cannot write run manifest")?;
        results
    };

    // Persist the request/response audit log for the new turns.
    if !new_results.is_empty() {
        let log = TranscriptLog::open(&cfg.paths.output_dir.join("transcript.jsonl"))?;
        for result in &new_results {
            for turn in &result.transcript {
                log.record(
                    &turn.digest,
                    &turn.role.to_string(),
                    &result.note_id,
                    turn.prompt_tokens,
                    turn.response_tokens,
                )?;
            }
        }
    }

    let mut by_id: BTreeMap<String, WorkflowResult> = completed;
    for result in new_results {
        by_id.insert(result.note_id.clone(), result);
    }
    let ordered: Vec<WorkflowResult> = corpus
        .notes()
        .iter()
        .filter_map(|n| by_id.remove(&n.note_id))
        .collect();
    write_results(&results_file, &ordered)?;

    let failed: Vec<&str> = ordered
        .iter()
        .filter(|r| !r.status.is_complete())
        .map(|r| r.note_id.as_str())
        .collect();
    println!(
        "run complete: {} notes ({} reused from previous run), {} failed -> {}",
        ordered.len(),
        skipped,
        failed.len(),
        results_file.display()
    );
    for note_id in &failed {
        eprintln!("  note {note_id} failed");
    }
    if failed.is_empty() {
        Ok(CommandStatus::AllComplete)
    } else {
        Ok(CommandStatus::PartialFailures)
    }
}
