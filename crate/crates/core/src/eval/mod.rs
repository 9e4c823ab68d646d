//! Multi-label coding metrics: micro/macro precision, recall, F1 with
//! per-label counts, plus run deltas for ablation tables.
//!
//! Zero-division convention: precision with zero predictions is 0, recall
//! with zero gold is 0, F1 with P=R=0 is 0, and labels absent from both
//! sides contribute zeros to the macro mean.

pub mod evidence;
pub mod tables;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workflow::WorkflowResult;

pub use evidence::{extract_predicted_evidence, score_evidence, EvidenceReport};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction for note {note_id} has no gold entry")]
    UnknownNote { note_id: String },
    #[error("label space is empty")]
    EmptyLabelSpace,
    #[error("label spaces differ: {only_a} labels only in a, {only_b} only in b")]
    LabelSpaceMismatch { only_a: usize, only_b: usize },
}

/// Predicted code sets per note. Failed notes are tracked separately and
/// score as empty predictions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PredictionSet {
    pub predictions: BTreeMap<String, BTreeSet<String>>,
    pub failed: BTreeSet<String>,
}

impl PredictionSet {
    pub fn from_results(results: &[WorkflowResult]) -> Self {
        let mut predictions = BTreeMap::new();
        let mut failed = BTreeSet::new();
        for result in results {
            if result.status.is_complete() {
                predictions.insert(result.note_id.clone(), result.final_code_set());
            } else {
                predictions.insert(result.note_id.clone(), BTreeSet::new());
                failed.insert(result.note_id.clone());
            }
        }
        Self {
            predictions,
            failed,
        }
    }

    pub fn insert(&mut self, note_id: impl Into<String>, codes: BTreeSet<String>) {
        self.predictions.insert(note_id.into(), codes);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub micro: PrfScores,
    pub macro_avg: PrfScores,
    pub per_label: BTreeMap<String, LabelMetrics>,
    pub label_space: Vec<String>,
    pub notes_evaluated: usize,
    pub notes_failed: usize,
    /// Predictions outside the label space, counted separately, never as fp.
    pub rejected_predictions: usize,
}

fn precision_of(tp: usize, fp: usize) -> f64 {
    if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    }
}

fn recall_of(tp: usize, fn_: usize) -> f64 {
    if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    }
}

fn f1_of(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Score predictions against gold sets over a label space. Micro values pool
/// tp/fp/fn over all (note, code) pairs; macro values average per-label over
/// the full space. Notes missing from the predictions score as empty sets; a
/// prediction for an unknown note is an error.
pub fn score_multilabel(
    preds: &PredictionSet,
    gold: &BTreeMap<String, BTreeSet<String>>,
    label_space: &[String],
) -> Result<MetricsReport, EvalError> {
    if label_space.is_empty() {
        return Err(EvalError::EmptyLabelSpace);
    }
    for note_id in preds.predictions.keys() {
        if !gold.contains_key(note_id) {
            return Err(EvalError::UnknownNote {
                note_id: note_id.clone(),
            });
        }
    }
    let space: BTreeSet<&str> = label_space.iter().map(String::as_str).collect();
    let empty = BTreeSet::new();

    let mut rejected_predictions = 0;
    let mut counts: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for label in &space {
        counts.insert(label, (0, 0, 0));
    }

    for (note_id, gold_codes) in gold {
        let predicted = preds.predictions.get(note_id).unwrap_or(&empty);
        for code in predicted {
            if !space.contains(code.as_str()) {
                rejected_predictions += 1;
                continue;
            }
            let entry = counts.get_mut(code.as_str()).expect("label in space");
            if gold_codes.contains(code) {
                entry.0 += 1;
            } else {
                entry.1 += 1;
            }
        }
        for code in gold_codes {
            if space.contains(code.as_str()) && !predicted.contains(code) {
                counts.get_mut(code.as_str()).expect("label in space").2 += 1;
            }
        }
    }

    let mut per_label = BTreeMap::new();
    let (mut tp_sum, mut fp_sum, mut fn_sum) = (0usize, 0usize, 0usize);
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0f64, 0.0f64, 0.0f64);
    for label in label_space {
        let &(tp, fp, fn_) = counts.get(label.as_str()).expect("label in space");
        let precision = precision_of(tp, fp);
        let recall = recall_of(tp, fn_);
        let f1 = f1_of(precision, recall);
        tp_sum += tp;
        fp_sum += fp;
        fn_sum += fn_;
        p_sum += precision;
        r_sum += recall;
        f_sum += f1;
        per_label.insert(
            label.clone(),
            LabelMetrics {
                true_pos: tp,
                false_pos: fp,
                false_neg: fn_,
                precision,
                recall,
                f1,
            },
        );
    }

    let micro_p = precision_of(tp_sum, fp_sum);
    let micro_r = recall_of(tp_sum, fn_sum);
    let n_labels = label_space.len() as f64;
    Ok(MetricsReport {
        micro: PrfScores {
            precision: micro_p,
            recall: micro_r,
            f1: f1_of(micro_p, micro_r),
        },
        macro_avg: PrfScores {
            precision: p_sum / n_labels,
            recall: r_sum / n_labels,
            f1: f_sum / n_labels,
        },
        per_label,
        label_space: label_space.to_vec(),
        notes_evaluated: gold.len(),
        notes_failed: preds.failed.len(),
        rejected_predictions,
    })
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PrfDelta {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-metric and per-label differences between two runs (b minus a).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaReport {
    pub micro: PrfDelta,
    pub macro_avg: PrfDelta,
    pub per_label_f1: BTreeMap<String, f64>,
}

pub fn compare_runs(a: &MetricsReport, b: &MetricsReport) -> Result<DeltaReport, EvalError> {
    let space_a: BTreeSet<&String> = a.label_space.iter().collect();
    let space_b: BTreeSet<&String> = b.label_space.iter().collect();
    if space_a != space_b {
        return Err(EvalError::LabelSpaceMismatch {
            only_a: space_a.difference(&space_b).count(),
            only_b: space_b.difference(&space_a).count(),
        });
    }
    let delta = |x: PrfScores, y: PrfScores| PrfDelta {
        precision: y.precision - x.precision,
        recall: y.recall - x.recall,
        f1: y.f1 - x.f1,
    };
    let per_label_f1 = a
        .per_label
        .iter()
        .map(|(label, la)| {
            let lb = b.per_label.get(label).copied().unwrap_or_default();
            (label.clone(), lb.f1 - la.f1)
        })
        .collect();
    Ok(DeltaReport {
        micro: delta(a.micro, b.micro),
        macro_avg: delta(a.macro_avg, b.macro_avg),
        per_label_f1,
    })
}
