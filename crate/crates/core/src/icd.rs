//! ICD-9 code universe: canonical code grammar, the code dictionary, and the
//! candidate-code sets injected into coding prompts as external knowledge.
//!
//! Diagnosis codes have a three-character root (three digits, `V` plus two
//! digits, or `E` plus three digits — E-roots are four characters) followed by
//! an optional decimal part of one or two digits. Procedure codes have a
//! two-digit root with the same optional decimal part.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KNOWLEDGE_HEADER: &str = "Please only use ICD-9 codes that are listed below:";
pub const KNOWLEDGE_SUBHEADER: &str = "Candidate Codes:";

#[derive(Debug, Error)]
pub enum IcdError {
    #[error("cannot read dictionary {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dictionary row {line}: {message}")]
    MalformedRow { line: usize, message: String },
    #[error("code {code:?} does not satisfy the ICD-9 {kind} grammar")]
    Grammar { code: String, kind: CodeKind },
    #[error("code {code:?} does not satisfy the ICD-9 grammar for any kind")]
    GrammarAnyKind { code: String },
    #[error("empty code string")]
    EmptyCode,
    #[error("duplicate code {code} with conflicting descriptions ({first:?} vs {second:?})")]
    ConflictingDuplicate {
        code: String,
        first: String,
        second: String,
    },
    #[error("code {code} not present in the dictionary")]
    UnknownCode { code: String },
    #[error("requested {requested} candidate codes but only {available} available")]
    InsufficientCodes { requested: usize, available: usize },
    #[error("candidate set must not be empty")]
    EmptyCandidates,
    #[error("knowledge block line {line}: {message}")]
    MalformedKnowledgeBlock { line: usize, message: String },
}

/// Whether a code names a diagnosis or a procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeKind {
    Diagnosis,
    Procedure,
}

impl fmt::Display for CodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodeKind::Diagnosis => write!(f, "diagnosis"),
            CodeKind::Procedure => write!(f, "procedure"),
        }
    }
}

impl CodeKind {
    pub fn parse(s: &str) -> Option<CodeKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "diagnosis" | "diag" | "dx" => Some(CodeKind::Diagnosis),
            "procedure" | "proc" | "px" => Some(CodeKind::Procedure),
            _ => None,
        }
    }
}

/// One ICD-9 code with its human-readable description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcdCodeEntry {
    pub code: String,
    pub description: String,
    pub kind: CodeKind,
}

fn is_valid_root(root: &str, kind: CodeKind) -> bool {
    let bytes = root.as_bytes();
    match kind {
        CodeKind::Diagnosis => match bytes {
            [b'V', rest @ ..] => rest.len() == 2 && rest.iter().all(u8::is_ascii_digit),
            [b'E', rest @ ..] => rest.len() == 3 && rest.iter().all(u8::is_ascii_digit),
            _ => bytes.len() == 3 && bytes.iter().all(u8::is_ascii_digit),
        },
        CodeKind::Procedure => bytes.len() == 2 && bytes.iter().all(u8::is_ascii_digit),
    }
}

fn satisfies_grammar(code: &str, kind: CodeKind) -> bool {
    let (root, decimal) = match code.split_once('.') {
        Some((root, decimal)) => (root, Some(decimal)),
        None => (code, None),
    };
    if !is_valid_root(root, kind) {
        return false;
    }
    match decimal {
        None => true,
        Some(d) => (1..=2).contains(&d.len()) && d.bytes().all(|b| b.is_ascii_digit()),
    }
}

/// Canonicalize a raw code string for the given kind: trim whitespace and
/// uppercase a leading `v`/`e`. Errors if the result violates the grammar.
pub fn canonicalize_code(raw: &str, kind: CodeKind) -> Result<String, IcdError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(IcdError::EmptyCode);
    }
    let mut code = trimmed.to_string();
    if code.starts_with('v') || code.starts_with('e') {
        code.replace_range(0..1, &code[0..1].to_ascii_uppercase());
    }
    if satisfies_grammar(&code, kind) {
        Ok(code)
    } else {
        Err(IcdError::Grammar {
            code: raw.to_string(),
            kind,
        })
    }
}

/// Canonicalize a code of unknown kind. Diagnosis and procedure grammars are
/// disjoint (three- vs two-character roots), so at most one can accept.
pub fn canonicalize_any(raw: &str) -> Result<(String, CodeKind), IcdError> {
    if let Ok(code) = canonicalize_code(raw, CodeKind::Diagnosis) {
        return Ok((code, CodeKind::Diagnosis));
    }
    if let Ok(code) = canonicalize_code(raw, CodeKind::Procedure) {
        return Ok((code, CodeKind::Procedure));
    }
    if raw.trim().is_empty() {
        return Err(IcdError::EmptyCode);
    }
    Err(IcdError::GrammarAnyKind {
        code: raw.to_string(),
    })
}

/// The lookup universe of canonical codes.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CodeDictionary {
    entries: BTreeMap<String, IcdCodeEntry>,
}

impl CodeDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert an already-canonical entry. A duplicate with an identical
    /// description is a no-op; a conflicting description is an error.
    pub fn insert(&mut self, entry: IcdCodeEntry) -> Result<(), IcdError> {
        match self.entries.get(&entry.code) {
            Some(existing) if existing.description != entry.description => {
                Err(IcdError::ConflictingDuplicate {
                    code: entry.code,
                    first: existing.description.clone(),
                    second: entry.description,
                })
            }
            Some(_) => Ok(()),
            None => {
                self.entries.insert(entry.code.clone(), entry);
                Ok(())
            }
        }
    }

    pub fn get(&self, code: &str) -> Option<&IcdCodeEntry> {
        self.entries.get(code)
    }

    pub fn contains(&self, code: &str) -> bool {
        self.entries.contains_key(code)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &IcdCodeEntry> {
        self.entries.values()
    }
}

/// A dictionary row that failed the grammar, reported instead of dropped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: usize,
    pub raw_code: String,
    pub reason: String,
}

/// Result of loading a dictionary file: the valid entries plus every row
/// that was rejected.
#[derive(Debug, Clone)]
pub struct DictionaryLoad {
    pub dictionary: CodeDictionary,
    pub rejected: Vec<RejectedRow>,
}

/// Load a delimited UTF-8 dictionary file with header `code,description,kind`.
/// Rows whose code fails the grammar land in `rejected`; a duplicate code with
/// a conflicting description aborts the load.
pub fn load_dictionary(path: &Path) -> Result<DictionaryLoad, IcdError> {
    let file = std::fs::File::open(path).map_err(|source| IcdError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);

    let mut dictionary = CodeDictionary::new();
    let mut rejected = Vec::new();

    for (idx, record) in reader.records().enumerate() {
        // +2: header row plus 1-based numbering.
        let line = idx + 2;
        let record = record.map_err(|e| IcdError::MalformedRow {
            line,
            message: e.to_string(),
        })?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let raw_code = record.get(0).unwrap_or("").to_string();
        let description = record.get(1).unwrap_or("").to_string();
        if raw_code.is_empty() || description.is_empty() {
            return Err(IcdError::MalformedRow {
                line,
                message: "row must have a code and a description".to_string(),
            });
        }
        let kind_field = record.get(2).unwrap_or("");
        let canonical = if kind_field.is_empty() {
            canonicalize_any(&raw_code)
        } else {
            match CodeKind::parse(kind_field) {
                Some(kind) => canonicalize_code(&raw_code, kind).map(|code| (code, kind)),
                None => {
                    return Err(IcdError::MalformedRow {
                        line,
                        message: format!("unknown code kind {kind_field:?}"),
                    })
                }
            }
        };
        match canonical {
            Ok((code, kind)) => dictionary.insert(IcdCodeEntry {
                code,
                description,
                kind,
            })?,
            Err(err) => rejected.push(RejectedRow {
                line,
                raw_code,
                reason: err.to_string(),
            }),
        }
    }

    Ok(DictionaryLoad {
        dictionary,
        rejected,
    })
}

/// An ordered set of candidate codes (the per-run external knowledge). The
/// size is the run's N_c.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSet {
    entries: Vec<IcdCodeEntry>,
    codes: BTreeSet<String>,
}

impl CandidateSet {
    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IcdCodeEntry] {
        &self.entries
    }

    pub fn contains(&self, code: &str) -> bool {
        self.codes.contains(code)
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.code.as_str())
    }
}

/// Take the first `n_c` codes from an ordered list, resolving each against the
/// dictionary. Unknown codes and short lists are errors.
pub fn build_candidate_set(
    dict: &CodeDictionary,
    codes: &[String],
    n_c: usize,
) -> Result<CandidateSet, IcdError> {
    if n_c == 0 {
        return Err(IcdError::EmptyCandidates);
    }
    let mut entries = Vec::with_capacity(n_c);
    let mut seen = BTreeSet::new();
    for raw in codes {
        let (code, _) = canonicalize_any(raw)?;
        let entry = dict
            .get(&code)
            .ok_or_else(|| IcdError::UnknownCode { code: code.clone() })?;
        if seen.insert(code) {
            entries.push(entry.clone());
        }
        if entries.len() == n_c {
            break;
        }
    }
    if entries.len() < n_c {
        return Err(IcdError::InsufficientCodes {
            requested: n_c,
            available: entries.len(),
        });
    }
    let codes = entries.iter().map(|e| e.code.clone()).collect();
    Ok(CandidateSet { entries, codes })
}

/// Render the external-knowledge block, byte-exact: two header lines then one
/// `<code> : <description>` line per candidate, in candidate order.
pub fn render_knowledge_block(cands: &CandidateSet) -> Result<String, IcdError> {
    if cands.is_empty() {
        return Err(IcdError::EmptyCandidates);
    }
    let mut block = String::new();
    block.push_str(KNOWLEDGE_HEADER);
    block.push('\n');
    block.push_str(KNOWLEDGE_SUBHEADER);
    for entry in cands.entries() {
        block.push('\n');
        block.push_str(&entry.code);
        block.push_str(" : ");
        block.push_str(&entry.description);
    }
    Ok(block)
}

/// Parse a rendered knowledge block back into (code, description) pairs.
pub fn parse_knowledge_block(block: &str) -> Result<Vec<(String, String)>, IcdError> {
    let mut lines = block.lines().enumerate();
    match lines.next() {
        Some((_, line)) if line == KNOWLEDGE_HEADER => {}
        _ => {
            return Err(IcdError::MalformedKnowledgeBlock {
                line: 1,
                message: "missing header line".to_string(),
            })
        }
    }
    match lines.next() {
        Some((_, line)) if line == KNOWLEDGE_SUBHEADER => {}
        _ => {
            return Err(IcdError::MalformedKnowledgeBlock {
                line: 2,
                message: "missing candidate-codes line".to_string(),
            })
        }
    }
    let mut pairs = Vec::new();
    for (idx, line) in lines {
        let (code, description) =
            line.split_once(" : ")
                .ok_or_else(|| IcdError::MalformedKnowledgeBlock {
                    line: idx + 1,
                    message: format!("expected `<code> : <description>`, got {line:?}"),
                })?;
        pairs.push((code.to_string(), description.to_string()));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn entry(code: &str, description: &str, kind: CodeKind) -> IcdCodeEntry {
        IcdCodeEntry {
            code: code.to_string(),
            description: description.to_string(),
            kind,
        }
    }

    #[test]
    fn canonicalize_trims_whitespace() {
        assert_eq!(
            canonicalize_code(" 401.9 ", CodeKind::Diagnosis).unwrap(),
            "401.9"
        );
    }

    #[test]
    fn canonicalize_uppercases_prefixes() {
        assert_eq!(
            canonicalize_code("v58.61", CodeKind::Diagnosis).unwrap(),
            "V58.61"
        );
        assert_eq!(
            canonicalize_code("e812.0", CodeKind::Diagnosis).unwrap(),
            "E812.0"
        );
    }

    #[test]
    fn canonicalize_rejects_five_digit_root() {
        let err = canonicalize_code("99999", CodeKind::Diagnosis).unwrap_err();
        assert!(matches!(err, IcdError::Grammar { .. }), "got {err:?}");
        assert!(err.to_string().contains("99999"));
    }

    #[test]
    fn grammar_covers_reference_candidate_codes() {
        // Every code shown in the candidate list must pass its grammar.
        for code in ["401.9", "428.0", "427.31", "414.01"] {
            assert!(satisfies_grammar(code, CodeKind::Diagnosis), "{code}");
        }
        for code in ["38.93", "96.04", "96.6"] {
            assert!(satisfies_grammar(code, CodeKind::Procedure), "{code}");
        }
    }

    #[test]
    fn grammar_edges() {
        assert!(satisfies_grammar("401", CodeKind::Diagnosis));
        assert!(satisfies_grammar("V58", CodeKind::Diagnosis));
        assert!(satisfies_grammar("E812", CodeKind::Diagnosis));
        assert!(satisfies_grammar("E812.00", CodeKind::Diagnosis));
        assert!(!satisfies_grammar("401.", CodeKind::Diagnosis));
        assert!(!satisfies_grammar("401.123", CodeKind::Diagnosis));
        assert!(!satisfies_grammar("V5", CodeKind::Diagnosis));
        assert!(!satisfies_grammar("E81", CodeKind::Diagnosis));
        assert!(!satisfies_grammar("38.93", CodeKind::Diagnosis));
        assert!(!satisfies_grammar("401.9", CodeKind::Procedure));
        assert!(!satisfies_grammar("4a1", CodeKind::Diagnosis));
        assert!(!satisfies_grammar("", CodeKind::Diagnosis));
    }

    #[test]
    fn canonicalize_is_idempotent() {
        for raw in [" 401.9 ", "v58.61", "e812.0", "38.93", "96.6"] {
            let (once, kind) = canonicalize_any(raw).unwrap();
            let twice = canonicalize_code(&once, kind).unwrap();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn canonicalize_any_disambiguates_kind() {
        assert_eq!(
            canonicalize_any("38.93").unwrap(),
            ("38.93".to_string(), CodeKind::Procedure)
        );
        assert_eq!(
            canonicalize_any("401.9").unwrap(),
            ("401.9".to_string(), CodeKind::Diagnosis)
        );
        assert!(canonicalize_any("99999").is_err());
        assert!(matches!(canonicalize_any("  "), Err(IcdError::EmptyCode)));
    }

    fn write_dict(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_dictionary_reference_rows() {
        let f = write_dict(
            "code,description,kind\n\
             401.9, Unspecified essential hypertension, diagnosis\n\
             38.93, Venous catheterization not elsewhere classified, procedure\n",
        );
        let load = load_dictionary(f.path()).unwrap();
        assert!(load.rejected.is_empty());
        assert_eq!(load.dictionary.len(), 2);
        let hyp = load.dictionary.get("401.9").unwrap();
        assert_eq!(hyp.description, "Unspecified essential hypertension");
        assert_eq!(hyp.kind, CodeKind::Diagnosis);
        let cath = load.dictionary.get("38.93").unwrap();
        assert_eq!(cath.kind, CodeKind::Procedure);
    }

    #[test]
    fn load_dictionary_empty_file() {
        let f = write_dict("code,description,kind\n");
        let load = load_dictionary(f.path()).unwrap();
        assert_eq!(load.dictionary.len(), 0);
        assert!(load.rejected.is_empty());
    }

    #[test]
    fn load_dictionary_reports_bad_codes() {
        let f = write_dict(
            "code,description,kind\n\
             401.9,Hypertension,diagnosis\n\
             99999,Bogus,diagnosis\n",
        );
        let load = load_dictionary(f.path()).unwrap();
        assert_eq!(load.dictionary.len(), 1);
        assert_eq!(load.rejected.len(), 1);
        assert_eq!(load.rejected[0].line, 3);
        assert_eq!(load.rejected[0].raw_code, "99999");
    }

    #[test]
    fn load_dictionary_conflicting_duplicate_is_error() {
        let f = write_dict(
            "code,description,kind\n\
             401.9,Hypertension,diagnosis\n\
             401.9,Something else,diagnosis\n",
        );
        assert!(matches!(
            load_dictionary(f.path()),
            Err(IcdError::ConflictingDuplicate { .. })
        ));
    }

    #[test]
    fn load_dictionary_identical_duplicate_is_kept_once() {
        let f = write_dict(
            "code,description,kind\n\
             401.9,Hypertension,diagnosis\n\
             401.9,Hypertension,diagnosis\n",
        );
        let load = load_dictionary(f.path()).unwrap();
        assert_eq!(load.dictionary.len(), 1);
    }

    #[test]
    fn load_dictionary_missing_file() {
        assert!(matches!(
            load_dictionary(Path::new("/nonexistent/icd9.csv")),
            Err(IcdError::Unreadable { .. })
        ));
    }

    fn small_dict() -> CodeDictionary {
        let mut d = CodeDictionary::new();
        d.insert(entry(
            "401.9",
            "Unspecified essential hypertension",
            CodeKind::Diagnosis,
        ))
        .unwrap();
        d.insert(entry(
            "38.93",
            "Venous catheterization, not elsewhere classified",
            CodeKind::Procedure,
        ))
        .unwrap();
        d.insert(entry(
            "428.0",
            "Congestive heart failure, unspecified",
            CodeKind::Diagnosis,
        ))
        .unwrap();
        d
    }

    #[test]
    fn candidate_set_takes_first_n() {
        let d = small_dict();
        let codes: Vec<String> = vec!["401.9".into(), "38.93".into(), "428.0".into()];
        let set = build_candidate_set(&d, &codes, 2).unwrap();
        assert_eq!(set.size(), 2);
        assert_eq!(set.entries()[0].code, "401.9");
        assert_eq!(set.entries()[1].code, "38.93");
        assert!(!set.contains("428.0"));
    }

    #[test]
    fn candidate_set_singleton() {
        let d = small_dict();
        let set = build_candidate_set(&d, &["401.9".to_string()], 1).unwrap();
        assert_eq!(set.size(), 1);
    }

    #[test]
    fn candidate_set_of_fifty() {
        let mut d = CodeDictionary::new();
        let mut codes = Vec::new();
        for i in 0..60u32 {
            let code = format!("{:03}.{}", 100 + i, i % 10);
            d.insert(entry(&code, &format!("label {i}"), CodeKind::Diagnosis))
                .unwrap();
            codes.push(code);
        }
        let set = build_candidate_set(&d, &codes, 50).unwrap();
        assert_eq!(set.size(), 50);
    }

    #[test]
    fn candidate_set_insufficient_codes() {
        let d = small_dict();
        let codes: Vec<String> = vec!["401.9".into(), "38.93".into()];
        let err = build_candidate_set(&d, &codes, 50).unwrap_err();
        assert!(matches!(
            err,
            IcdError::InsufficientCodes {
                requested: 50,
                available: 2
            }
        ));
    }

    #[test]
    fn candidate_set_unknown_code() {
        let d = small_dict();
        let err = build_candidate_set(&d, &["250.00".to_string()], 1).unwrap_err();
        assert!(matches!(err, IcdError::UnknownCode { .. }));
    }

    #[test]
    fn knowledge_block_exact_lines() {
        let d = small_dict();
        let set = build_candidate_set(&d, &["401.9".to_string()], 1).unwrap();
        let block = render_knowledge_block(&set).unwrap();
        assert_eq!(
            block,
            "Please only use ICD-9 codes that are listed below:\n\
             Candidate Codes:\n\
             401.9 : Unspecified essential hypertension"
        );
    }

    #[test]
    fn knowledge_block_procedure_line() {
        let d = small_dict();
        let set = build_candidate_set(&d, &["38.93".to_string()], 1).unwrap();
        let block = render_knowledge_block(&set).unwrap();
        assert!(block
            .lines()
            .any(|l| l == "38.93 : Venous catheterization, not elsewhere classified"));
    }

    #[test]
    fn knowledge_block_preserves_order_and_line_count() {
        let d = small_dict();
        let codes: Vec<String> = vec!["428.0".into(), "401.9".into()];
        let set = build_candidate_set(&d, &codes, 2).unwrap();
        let block = render_knowledge_block(&set).unwrap();
        let lines: Vec<&str> = block.lines().collect();
        assert_eq!(lines.len(), 2 + set.size());
        assert!(lines[2].starts_with("428.0 : "));
        assert!(lines[3].starts_with("401.9 : "));
    }

    #[test]
    fn knowledge_block_round_trip() {
        let d = small_dict();
        let codes: Vec<String> = vec!["401.9".into(), "38.93".into(), "428.0".into()];
        let set = build_candidate_set(&d, &codes, 3).unwrap();
        let block = render_knowledge_block(&set).unwrap();
        let parsed = parse_knowledge_block(&block).unwrap();
        let recovered: Vec<&str> = parsed.iter().map(|(c, _)| c.as_str()).collect();
        assert_eq!(recovered, set.codes().collect::<Vec<_>>());
    }

    #[test]
    fn dictionary_membership_matches_loads() {
        let d = small_dict();
        assert!(d.contains("401.9"));
        assert!(!d.contains("999.99"));
        assert_eq!(d.get("401.9").unwrap().code, "401.9");
    }
}
