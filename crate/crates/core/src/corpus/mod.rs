//! Clinical-note corpora: record ingestion, evaluation subsets (top-k and
//! rare), and evidence-pair construction against annotated spans.

pub mod sentences;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::icd::{canonicalize_any, IcdError};
pub use sentences::{segment_sentences, Sentence};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("duplicate note_id {note_id} (line {line})")]
    DuplicateNoteId { note_id: String, line: usize },
    #[error("gold code in note {note_id}: {source}")]
    BadGoldCode {
        note_id: String,
        #[source]
        source: IcdError,
    },
    #[error("train split has only {available} distinct codes, need {requested}")]
    TooFewCodes { requested: usize, available: usize },
    #[error("rare label space is empty at threshold {threshold}")]
    EmptyRareSpace { threshold: usize },
    #[error("threshold must be at least 1")]
    ZeroThreshold,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("corpus has no train split to rank frequencies on")]
    NoTrainSplit,
    #[error("annotation for note {annotation} applied to note {note}")]
    WrongNote { annotation: String, note: String },
    #[error("annotation span [{start}, {end}) outside note {note_id} (length {len})")]
    SpanOutOfBounds {
        note_id: String,
        start: usize,
        end: usize,
        len: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Dev => write!(f, "dev"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "dev" | "val" | "validation" => Some(Split::Dev),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One clinical note with its gold code set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteRecord {
    pub note_id: String,
    pub text: String,
    pub gold_codes: BTreeSet<String>,
    pub split: Split,
}

impl NoteRecord {
    /// Note length in characters, the unit all spans are expressed in.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// An immutable collection of notes with unique ids.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    notes: Vec<NoteRecord>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_notes(notes: Vec<NoteRecord>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(notes.len());
        for (idx, note) in notes.iter().enumerate() {
            if by_id.insert(note.note_id.clone(), idx).is_some() {
                return Err(CorpusError::DuplicateNoteId {
                    note_id: note.note_id.clone(),
                    line: idx + 1,
                });
            }
        }
        Ok(Self { notes, by_id })
    }

    pub fn notes(&self) -> &[NoteRecord] {
        &self.notes
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn get(&self, note_id: &str) -> Option<&NoteRecord> {
        self.by_id.get(note_id).map(|&idx| &self.notes[idx])
    }

    /// note_id -> gold code set, for scoring.
    pub fn gold_sets(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.notes
            .iter()
            .map(|n| (n.note_id.clone(), n.gold_codes.clone()))
            .collect()
    }

    /// Per-code count of train-split notes containing the code.
    pub fn train_code_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for note in self.notes.iter().filter(|n| n.split == Split::Train) {
            for code in &note.gold_codes {
                *counts.entry(code.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every distinct gold code across all splits.
    pub fn all_codes(&self) -> BTreeSet<String> {
        self.notes
            .iter()
            .flat_map(|n| n.gold_codes.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct RawNoteRecord {
    note_id: String,
    text: String,
    gold_codes: Vec<String>,
    split: String,
}

/// Load a line-delimited corpus file (one JSON record per line). Gold codes
/// are canonicalized; malformed records report their line number.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut notes = Vec::new();
    let mut seen = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Unreadable {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawNoteRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: line_no,
                message: e.to_string(),
            })?;
        if raw.text.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: line_no,
                message: format!("note {} has empty text", raw.note_id),
            });
        }
        let split = Split::parse(&raw.split).ok_or_else(|| CorpusError::MalformedRecord {
            line: line_no,
            message: format!("unknown split {:?}", raw.split),
        })?;
        let mut gold_codes = BTreeSet::new();
        for code in &raw.gold_codes {
            let (canonical, _) =
                canonicalize_any(code).map_err(|source| CorpusError::MalformedRecord {
                    line: line_no,
                    message: format!("note {}: {source}", raw.note_id),
                })?;
            gold_codes.insert(canonical);
        }
        if let Some(prev) = seen.insert(raw.note_id.clone(), line_no) {
            let _ = prev;
            return Err(CorpusError::DuplicateNoteId {
                note_id: raw.note_id,
                line: line_no,
            });
        }
        notes.push(NoteRecord {
            note_id: raw.note_id,
            text: raw.text,
            gold_codes,
            split,
        });
    }
    Corpus::from_notes(notes)
}

/// Serialize a corpus back to the line-delimited record format.
pub fn write_corpus<W: std::io::Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    for note in corpus.notes() {
        let record = serde_json::json!({
            "note_id": note.note_id,
            "text": note.text,
            "gold_codes": note.gold_codes.iter().collect::<Vec<_>>(),
            "split": note.split.to_string(),
        });
        writeln!(out, "{record}")?;
    }
    Ok(())
}

/// A filtered corpus with the label space it was projected onto.
#[derive(Debug, Clone)]
pub struct Subset {
    pub label_space: Vec<String>,
    pub corpus: Corpus,
}

/// Audit record emitted next to every subset build.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsetManifest {
    pub label_space: Vec<String>,
    pub kept_note_ids: Vec<String>,
}

impl Subset {
    pub fn manifest(&self) -> SubsetManifest {
        SubsetManifest {
            label_space: self.label_space.clone(),
            kept_note_ids: self
                .corpus
                .notes()
                .iter()
                .map(|n| n.note_id.clone())
                .collect(),
        }
    }
}

fn project(corpus: &Corpus, label_space: &[String]) -> Corpus {
    let space: BTreeSet<&str> = label_space.iter().map(String::as_str).collect();
    let notes = corpus
        .notes()
        .iter()
        .filter_map(|note| {
            let projected: BTreeSet<String> = note
                .gold_codes
                .iter()
                .filter(|c| space.contains(c.as_str()))
                .cloned()
                .collect();
            if projected.is_empty() {
                None
            } else {
                Some(NoteRecord {
                    gold_codes: projected,
                    ..note.clone()
                })
            }
        })
        .collect();
    Corpus::from_notes(notes).expect("projection preserves unique ids")
}

/// Keep the k most frequent train-split codes (ties broken lexicographically)
/// and the notes whose gold sets intersect them, projected onto the space.
pub fn build_top_k_subset(corpus: &Corpus, k: usize) -> Result<Subset, CorpusError> {
    if k == 0 {
        return Err(CorpusError::ZeroK);
    }
    if !corpus.notes().iter().any(|n| n.split == Split::Train) {
        return Err(CorpusError::NoTrainSplit);
    }
    let counts = corpus.train_code_counts();
    if counts.len() < k {
        return Err(CorpusError::TooFewCodes {
            requested: k,
            available: counts.len(),
        });
    }
    let mut ranked: Vec<(&String, &usize)> = counts.iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let label_space: Vec<String> = ranked.into_iter().take(k).map(|(c, _)| c.clone()).collect();
    let projected = project(corpus, &label_space);
    Ok(Subset {
        label_space,
        corpus: projected,
    })
}

/// Keep codes seen at most `max_train_occurrences` times in the train split
/// (including codes never seen there), with the same note projection.
pub fn build_rare_subset(
    corpus: &Corpus,
    max_train_occurrences: usize,
) -> Result<Subset, CorpusError> {
    if max_train_occurrences == 0 {
        return Err(CorpusError::ZeroThreshold);
    }
    let counts = corpus.train_code_counts();
    let label_space: Vec<String> = corpus
        .all_codes()
        .into_iter()
        .filter(|code| counts.get(code).copied().unwrap_or(0) <= max_train_occurrences)
        .collect();
    if label_space.is_empty() {
        return Err(CorpusError::EmptyRareSpace {
            threshold: max_train_occurrences,
        });
    }
    let projected = project(corpus, &label_space);
    Ok(Subset {
        label_space,
        corpus: projected,
    })
}

/// A structured SOAP rendering of one note.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoapNote {
    pub note_id: String,
    pub subjective: String,
    pub objective: String,
    pub assessment: String,
    pub plan: String,
}

impl SoapNote {
    /// Degenerate for assessment-and-plan generation: nothing to condition on.
    pub fn is_degenerate(&self) -> bool {
        self.subjective.trim().is_empty() && self.objective.trim().is_empty()
    }

    /// Names of sections that came back empty.
    pub fn empty_sections(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.subjective.trim().is_empty() {
            out.push("subjective");
        }
        if self.objective.trim().is_empty() {
            out.push("objective");
        }
        if self.assessment.trim().is_empty() {
            out.push("assessment");
        }
        if self.plan.trim().is_empty() {
            out.push("plan");
        }
        out
    }
}

/// A coder-annotated rationale span for a code, in char offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceAnnotation {
    pub note_id: String,
    pub code: String,
    pub span_start: usize,
    pub span_end: usize,
}

/// A (sentence, code) evidence pair on one note.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidencePair {
    pub note_id: String,
    pub code: String,
    pub sentence: Sentence,
}

/// Load an evidence file: one JSON record per line with note_id, code,
/// span_start, span_end. Codes are canonicalized.
pub fn load_evidence(path: &Path) -> Result<Vec<EvidenceAnnotation>, CorpusError> {
    #[derive(Deserialize)]
    struct RawAnnotation {
        note_id: String,
        code: String,
        span_start: usize,
        span_end: usize,
    }
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut anns = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Unreadable {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawAnnotation =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: idx + 1,
                message: e.to_string(),
            })?;
        let (code, _) = canonicalize_any(&raw.code).map_err(|source| CorpusError::BadGoldCode {
            note_id: raw.note_id.clone(),
            source,
        })?;
        anns.push(EvidenceAnnotation {
            note_id: raw.note_id,
            code,
            span_start: raw.span_start,
            span_end: raw.span_end,
        });
    }
    Ok(anns)
}

/// Pair each annotation with the sentence containing its span start, then
/// deduplicate identical (sentence, code) pairs.
pub fn evidence_pairs(
    note: &NoteRecord,
    anns: &[EvidenceAnnotation],
) -> Result<Vec<EvidencePair>, CorpusError> {
    let len = note.char_len();
    let sentences = segment_sentences(&note.text);
    let mut pairs = Vec::new();
    let mut seen: BTreeSet<(usize, usize, String)> = BTreeSet::new();
    for ann in anns {
        if ann.note_id != note.note_id {
            return Err(CorpusError::WrongNote {
                annotation: ann.note_id.clone(),
                note: note.note_id.clone(),
            });
        }
        if ann.span_start >= ann.span_end || ann.span_end > len {
            return Err(CorpusError::SpanOutOfBounds {
                note_id: note.note_id.clone(),
                start: ann.span_start,
                end: ann.span_end,
                len,
            });
        }
        // The span start may fall on inter-sentence whitespace; use the first
        // sentence the span reaches into.
        let sentence = sentences
            .iter()
            .find(|s| s.contains(ann.span_start))
            .or_else(|| sentences.iter().find(|s| s.end > ann.span_start));
        let Some(sentence) = sentence else { continue };
        if seen.insert((sentence.start, sentence.end, ann.code.clone())) {
            pairs.push(EvidencePair {
                note_id: note.note_id.clone(),
                code: ann.code.clone(),
                sentence: sentence.clone(),
            });
        }
    }
    Ok(pairs)
}
