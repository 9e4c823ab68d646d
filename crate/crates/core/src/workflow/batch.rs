//! Batch runner: independent workflow instances over a corpus, bounded by the
//! configured parallelism, with results collected in corpus order and a run
//! manifest recording the config snapshot and prompt checksums.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::agents::prompts::prompt_checksums;
use crate::corpus::{Corpus, SoapNote};
use crate::gateway::{CompletionProvider, TokenCounter};

use super::{run_workflow, WorkflowConfig, WorkflowError, WorkflowResult};

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: WorkflowConfig,
    pub prompt_checksums: BTreeMap<String, String>,
    pub token_counter: String,
    pub notes_total: usize,
    pub notes_complete: usize,
    pub notes_failed: usize,
}

/// Run every note in the corpus. Failures are isolated per note; the output
/// order matches the corpus order regardless of parallelism.
pub fn run_batch(
    corpus: &Corpus,
    soap_forms: &BTreeMap<String, SoapNote>,
    cfg: &WorkflowConfig,
    gateway: &dyn CompletionProvider,
    counter: &dyn TokenCounter,
) -> Result<(Vec<WorkflowResult>, RunManifest), WorkflowError> {
    cfg.validate()?;
    let notes = corpus.notes();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<WorkflowResult>>> = Mutex::new(vec![None; notes.len()]);

    let workers = cfg.parallelism.min(notes.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                let Some(note) = notes.get(idx) else { break };
                let soap = soap_forms.get(&note.note_id);
                let result = run_workflow(note, soap, cfg, gateway, counter);
                slots.lock().unwrap()[idx] = Some(result);
            });
        }
    });

    let results: Vec<WorkflowResult> = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every note index was processed"))
        .collect();
    let notes_complete = results.iter().filter(|r| r.status.is_complete()).count();
    let manifest = RunManifest {
        config: cfg.clone(),
        prompt_checksums: prompt_checksums(),
        token_counter: counter.name().to_string(),
        notes_total: results.len(),
        notes_complete,
        notes_failed: results.len() - notes_complete,
    };
    Ok((results, manifest))
}
