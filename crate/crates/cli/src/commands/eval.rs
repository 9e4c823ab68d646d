//! Evaluation: multi-label metrics against the gold corpus, plus evidence
//! matching when an annotated evidence file is configured.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};

use macoder_core::corpus::{evidence_pairs, load_evidence, Corpus, EvidencePair};
use macoder_core::eval::tables::{evidence_table, metrics_table, per_label_table};
use macoder_core::eval::{
    extract_predicted_evidence, score_evidence, score_multilabel, EvidenceReport, MetricsReport,
    PredictionSet,
};
use macoder_core::workflow::WorkflowResult;

use crate::config::RunConfigFile;

use super::{ensure_output_dir, load_corpus_file, read_results, resolve_label_space};

pub struct EvalOutput {
    pub metrics: MetricsReport,
    pub evidence: Option<EvidenceReport>,
}

/// Score a result set against a corpus. Shared by `eval` and `ablate`.
pub fn evaluate_results(
    results: &[WorkflowResult],
    corpus: &Corpus,
    label_space: &[String],
    evidence_path: Option<&Path>,
) -> Result<EvalOutput> {
    let preds = PredictionSet::from_results(results);
    let gold = corpus.gold_sets();
    let metrics = score_multilabel(&preds, &gold, label_space)?;

    let evidence = match evidence_path {
        Some(path) => {
            let annotations = load_evidence(path)?;
            let mut by_note: BTreeMap<&str, Vec<_>> = BTreeMap::new();
            for ann in &annotations {
                by_note
                    .entry(ann.note_id.as_str())
                    .or_default()
                    .push(ann.clone());
            }
            let mut gold_pairs: Vec<EvidencePair> = Vec::new();
            for (note_id, anns) in by_note {
                let note = corpus.get(note_id).with_context(|| {
                    format!("evidence annotation references unknown note {note_id}")
                })?;
                gold_pairs.extend(evidence_pairs(note, &anns)?);
            }
            let mut pred_pairs: Vec<EvidencePair> = Vec::new();
            for result in results {
                if let Some(note) = corpus.get(&result.note_id) {
                    pred_pairs.extend(extract_predicted_evidence(result, note));
                }
            }
            Some(score_evidence(&pred_pairs, &gold_pairs))
        }
        None => None,
    };
    Ok(EvalOutput { metrics, evidence })
}

pub fn cmd_eval(cfg: &RunConfigFile, results_override: Option<&Path>) -> Result<()> {
    cfg.validate_paths()?;
    let corpus = load_corpus_file(cfg)?;
    let label_space = resolve_label_space(cfg, &corpus)?;
    let results_file = results_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| super::run::results_path(cfg));
    let results = read_results(&results_file)?;

    let output = evaluate_results(
        &results,
        &corpus,
        &label_space,
        cfg.paths.evidence.as_deref(),
    )?;

    ensure_output_dir(cfg)?;
    let method = cfg.workflow.mode.clone();
    let table = metrics_table(&[(method.clone(), &output.metrics)]);
    let labels = per_label_table(&output.metrics);
    print!("{table}");
    println!(
        "notes evaluated: {}  failed: {}  out-of-space predictions: {}",
        output.metrics.notes_evaluated,
        output.metrics.notes_failed,
        output.metrics.rejected_predictions
    );
    std::fs::write(
        cfg.paths.output_dir.join("metrics.json"),
        serde_json::to_string_pretty(&output.metrics)?,
    )?;
    std::fs::write(
        cfg.paths.output_dir.join("metrics.txt"),
        format!("{table}\n{labels}"),
    )?;

    if let Some(evidence) = &output.evidence {
        let table = evidence_table(&[(method, evidence)]);
        print!("{table}");
        std::fs::write(
            cfg.paths.output_dir.join("evidence.json"),
            serde_json::to_string_pretty(evidence)?,
        )?;
        std::fs::write(cfg.paths.output_dir.join("evidence.txt"), table)?;
    }
    Ok(())
}
