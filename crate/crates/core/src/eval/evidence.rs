//! Evidence matching: align final code explanations with note sentences and
//! score predicted (sentence, code) pairs against annotated gold pairs.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{segment_sentences, EvidencePair, NoteRecord};
use crate::workflow::WorkflowResult;

/// Minimum fraction of an explanation's normalized character 4-grams that
/// must appear in a sentence for the pair to be emitted.
pub const EVIDENCE_OVERLAP_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvidenceReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: Vec<EvidencePair>,
    pub unmatched_predictions: Vec<EvidencePair>,
    pub unmatched_gold: Vec<EvidencePair>,
}

fn deid_bracket_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[\*\*[^\]]*\*\*\]").expect("static regex compiles"))
}

/// Lowercase, strip de-identification brackets, collapse whitespace runs.
pub fn normalize_evidence_text(text: &str) -> String {
    let stripped = deid_bracket_regex().replace_all(text, " ");
    let lower = stripped.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    let mut last_space = true;
    for c in lower.chars() {
        if c.is_whitespace() {
            if !last_space {
                out.push(' ');
                last_space = true;
            }
        } else {
            out.push(c);
            last_space = false;
        }
    }
    out.trim_end().to_string()
}

fn char_ngrams(text: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() < n {
        return Vec::new();
    }
    (0..=chars.len() - n)
        .map(|i| chars[i..i + n].iter().collect())
        .collect()
}

/// Fraction of the explanation's normalized 4-grams found in the sentence.
/// Explanations shorter than one 4-gram fall back to substring containment.
pub fn explanation_overlap(explanation: &str, sentence: &str) -> f64 {
    let expl = normalize_evidence_text(explanation);
    let sent = normalize_evidence_text(sentence);
    if expl.is_empty() {
        return 0.0;
    }
    let grams = char_ngrams(&expl, 4);
    if grams.is_empty() {
        return if sent.contains(&expl) { 1.0 } else { 0.0 };
    }
    let sentence_grams: BTreeSet<String> = char_ngrams(&sent, 4).into_iter().collect();
    let found = grams
        .iter()
        .filter(|g| sentence_grams.contains(g.as_str()))
        .count();
    found as f64 / grams.len() as f64
}

/// For each final code, pair it with the note sentence of maximal overlap
/// with its explanation; pairs under the threshold are not emitted.
pub fn extract_predicted_evidence(result: &WorkflowResult, note: &NoteRecord) -> Vec<EvidencePair> {
    let sentences = segment_sentences(&note.text);
    let mut pairs = Vec::new();
    let mut seen: BTreeSet<(usize, usize, String)> = BTreeSet::new();
    for assignment in &result.final_codes {
        if assignment.explanation.is_empty() {
            continue;
        }
        let best = sentences
            .iter()
            .map(|s| (explanation_overlap(&assignment.explanation, &s.text), s))
            .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        let Some((overlap, sentence)) = best else {
            continue;
        };
        if overlap < EVIDENCE_OVERLAP_THRESHOLD {
            continue;
        }
        if seen.insert((sentence.start, sentence.end, assignment.code.clone())) {
            pairs.push(EvidencePair {
                note_id: note.note_id.clone(),
                code: assignment.code.clone(),
                sentence: sentence.clone(),
            });
        }
    }
    pairs
}

fn pair_matches(pred: &EvidencePair, gold: &EvidencePair) -> bool {
    pred.note_id == gold.note_id
        && pred.code == gold.code
        && pred
            .sentence
            .overlaps(gold.sentence.start, gold.sentence.end)
}

fn dedup(pairs: &[EvidencePair]) -> Vec<EvidencePair> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for pair in pairs {
        let key = (
            pair.note_id.clone(),
            pair.code.clone(),
            pair.sentence.start,
            pair.sentence.end,
        );
        if seen.insert(key) {
            out.push(pair.clone());
        }
    }
    out
}

/// Score predicted pairs against gold pairs. A prediction is a true positive
/// iff a gold pair shares the note, the code, and an overlapping sentence
/// span. F1 is the harmonic mean, 0 when both sides are 0.
pub fn score_evidence(pred_pairs: &[EvidencePair], gold_pairs: &[EvidencePair]) -> EvidenceReport {
    let preds = dedup(pred_pairs);
    let golds = dedup(gold_pairs);

    let mut matched = Vec::new();
    let mut unmatched_predictions = Vec::new();
    for pred in &preds {
        if golds.iter().any(|g| pair_matches(pred, g)) {
            matched.push(pred.clone());
        } else {
            unmatched_predictions.push(pred.clone());
        }
    }
    let unmatched_gold: Vec<EvidencePair> = golds
        .iter()
        .filter(|g| !preds.iter().any(|p| pair_matches(p, g)))
        .cloned()
        .collect();

    let matched_gold = golds.len() - unmatched_gold.len();
    let precision = if preds.is_empty() {
        0.0
    } else {
        matched.len() as f64 / preds.len() as f64
    };
    let recall = if golds.is_empty() {
        0.0
    } else {
        matched_gold as f64 / golds.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    EvidenceReport {
        precision,
        recall,
        f1,
        matched,
        unmatched_predictions,
        unmatched_gold,
    }
}
