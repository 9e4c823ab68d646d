//! Tolerant extraction of structured payloads from free-form model output.
//!
//! Strategy, in order: parse the raw text (or a fenced/balanced region of it)
//! as JSON, retrying with relaxed syntax (single quotes, trailing commas);
//! if no JSON region carries code objects, fall back to a linear key/value
//! scan that recovers `"code": ... "explanation": ...` pairs from bare text.
//! Every path returns either a parse or a typed error — never a panic.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde_json::Value;
use thiserror::Error;

use crate::corpus::SoapNote;
use crate::icd::canonicalize_any;

use super::{AgentRole, CodeAssignment, ReviewVerdict, Verdict};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no structured region found in model output")]
    NoStructuredRegion,
    #[error("no parseable code assignment found in model output")]
    NoAssignments,
    #[error("review output has no structured region and mentions none of the codes under review")]
    EmptyReview,
}

/// Dispute phrasings that mark an explanation as contesting its code.
pub const DEFAULT_DISPUTE_PATTERNS: &[&str] =
    &["no evidence", "not documented", "not supported", "disagree"];

#[derive(Debug, Clone, Default)]
struct RawCodeObject {
    code: String,
    explanation: Option<String>,
    verdict: Option<String>,
}

fn strip_code_fence(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    let content_start = after.find('\n')? + 1;
    let content = &after[content_start..];
    let end = content.find("```")?;
    Some(content[..end].trim())
}

/// Largest balanced `{...}` or `[...]` region starting at the first bracket.
fn balanced_region(text: &str) -> Option<&str> {
    let start = text.find(['{', '['])?;
    let bytes = text.as_bytes();
    let mut in_string = false;
    let mut escape = false;
    let mut stack: Vec<u8> = Vec::new();
    let mut last_end = None;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escape {
                escape = false;
            } else if b == b'\\' {
                escape = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => stack.push(b'}'),
            b'[' => stack.push(b']'),
            b'}' | b']' => {
                if stack.last() == Some(&b) {
                    stack.pop();
                    if stack.is_empty() {
                        last_end = Some(start + offset + 1);
                    }
                } else {
                    break;
                }
            }
            _ => {}
        }
    }
    last_end.map(|end| &text[start..end])
}

/// Rewrite relaxed JSON into strict JSON: single-quoted strings become
/// double-quoted (escaping embedded double quotes) and trailing commas are
/// dropped.
fn relax_json(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars().peekable();
    let mut delimiter: Option<char> = None;
    let mut escape = false;
    while let Some(c) = chars.next() {
        match delimiter {
            Some(d) => {
                if escape {
                    out.push(c);
                    escape = false;
                } else if c == '\\' {
                    out.push(c);
                    escape = true;
                } else if c == d {
                    out.push('"');
                    delimiter = None;
                } else if c == '"' {
                    out.push_str("\\\"");
                } else {
                    out.push(c);
                }
            }
            None => match c {
                '"' | '\'' => {
                    delimiter = Some(c);
                    out.push('"');
                }
                ',' => {
                    let mut ahead = chars.clone();
                    let next = loop {
                        match ahead.next() {
                            Some(n) if n.is_whitespace() => continue,
                            other => break other,
                        }
                    };
                    if !matches!(next, Some('}') | Some(']')) {
                        out.push(',');
                    }
                }
                _ => out.push(c),
            },
        }
    }
    out
}

/// Best-effort JSON value extraction from free-form output.
fn extract_json_value(raw: &str) -> Option<Value> {
    let trimmed = raw.trim();
    if let Ok(v) = serde_json::from_str(trimmed) {
        return Some(v);
    }
    if let Some(fenced) = strip_code_fence(trimmed) {
        if let Ok(v) = serde_json::from_str(fenced) {
            return Some(v);
        }
        if let Ok(v) = serde_json::from_str(&relax_json(fenced)) {
            return Some(v);
        }
    }
    if let Some(region) = balanced_region(trimmed) {
        if let Ok(v) = serde_json::from_str(region) {
            return Some(v);
        }
        if let Ok(v) = serde_json::from_str(&relax_json(region)) {
            return Some(v);
        }
    }
    let relaxed = relax_json(trimmed);
    if let Ok(v) = serde_json::from_str(&relaxed) {
        return Some(v);
    }
    if let Some(region) = balanced_region(&relaxed) {
        if let Ok(v) = serde_json::from_str(region) {
            return Some(v);
        }
    }
    None
}

fn get_ci<'a>(map: &'a serde_json::Map<String, Value>, key: &str) -> Option<&'a Value> {
    map.iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(key))
        .map(|(_, v)| v)
}

fn value_to_string(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn collect_code_objects(value: &Value, out: &mut Vec<RawCodeObject>) {
    match value {
        Value::Array(items) => {
            for item in items {
                collect_code_objects(item, out);
            }
        }
        Value::Object(map) => {
            if let Some(code) = get_ci(map, "code") {
                out.push(RawCodeObject {
                    code: value_to_string(code),
                    explanation: get_ci(map, "explanation").map(value_to_string),
                    verdict: get_ci(map, "verdict").map(value_to_string),
                });
            } else {
                for v in map.values() {
                    collect_code_objects(v, out);
                }
            }
        }
        _ => {}
    }
}

fn key_value_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r#"(?i)["'](code|explanation|verdict)["']\s*:\s*(?:"((?:[^"\\]|\\.)*)"|'((?:[^'\\]|\\.)*)'|([0-9]+(?:\.[0-9]+)?))"#,
        )
        .expect("static regex compiles")
    })
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// Linear scan for code/explanation/verdict key-value pairs in bare text
/// (handles outputs with no brackets at all, as in transcript snippets).
fn scan_code_objects(raw: &str) -> Vec<RawCodeObject> {
    let mut objects = Vec::new();
    let mut current: Option<RawCodeObject> = None;
    for cap in key_value_regex().captures_iter(raw) {
        let value = cap
            .get(2)
            .or_else(|| cap.get(3))
            .or_else(|| cap.get(4))
            .map(|m| unescape(m.as_str()))
            .unwrap_or_default();
        match cap[1].to_ascii_lowercase().as_str() {
            "code" => {
                if let Some(done) = current.take() {
                    objects.push(done);
                }
                current = Some(RawCodeObject {
                    code: value,
                    explanation: None,
                    verdict: None,
                });
            }
            "explanation" => {
                if let Some(obj) = current.as_mut() {
                    if obj.explanation.is_none() {
                        obj.explanation = Some(value);
                    }
                }
            }
            "verdict" => {
                if let Some(obj) = current.as_mut() {
                    if obj.verdict.is_none() {
                        obj.verdict = Some(value);
                    }
                }
            }
            _ => {}
        }
    }
    if let Some(done) = current.take() {
        objects.push(done);
    }
    objects
}

/// Extract raw code objects; the bool is true when the output was an explicit
/// (possibly empty) structured region rather than a bare-text recovery.
fn extract_code_objects(raw: &str) -> (Vec<RawCodeObject>, bool) {
    if let Some(value) = extract_json_value(raw) {
        let mut objects = Vec::new();
        collect_code_objects(&value, &mut objects);
        if !objects.is_empty() {
            return (objects, true);
        }
        if matches!(&value, Value::Array(items) if items.is_empty()) {
            return (Vec::new(), true);
        }
    }
    (scan_code_objects(raw), false)
}

#[derive(Debug, Clone)]
pub struct ParsedAssignments {
    pub assignments: Vec<CodeAssignment>,
    pub warnings: Vec<String>,
}

/// Parse a code-assignment list, tolerant of surrounding prose, trailing
/// commas, and single quotes. Grammar-violating codes are dropped with a
/// warning; duplicates merge keeping the first explanation. An explicit empty
/// list parses to an empty result; finding nothing at all is an error.
pub fn parse_code_list(raw: &str, source_role: AgentRole) -> Result<ParsedAssignments, ParseError> {
    let (objects, explicit) = extract_code_objects(raw);
    if objects.is_empty() {
        if explicit {
            return Ok(ParsedAssignments {
                assignments: Vec::new(),
                warnings: Vec::new(),
            });
        }
        return Err(ParseError::NoAssignments);
    }
    let mut warnings = Vec::new();
    let mut assignments: Vec<CodeAssignment> = Vec::new();
    for obj in objects {
        let canonical = match canonicalize_any(&obj.code) {
            Ok((code, _)) => code,
            Err(_) => {
                warnings.push(format!(
                    "dropped code {:?}: violates the ICD-9 grammar",
                    obj.code
                ));
                continue;
            }
        };
        if let Some(existing) = assignments.iter().find(|a| a.code == canonical) {
            let _ = existing;
            warnings.push(format!(
                "duplicate code {canonical} merged; kept the first explanation"
            ));
            continue;
        }
        let explanation = match &obj.explanation {
            Some(text) if !text.trim().is_empty() => text.clone(),
            _ => {
                warnings.push(format!("code {canonical} has no explanation"));
                String::new()
            }
        };
        assignments.push(CodeAssignment {
            code: canonical,
            explanation,
            source_role,
        });
    }
    Ok(ParsedAssignments {
        assignments,
        warnings,
    })
}

fn soap_key(map: &serde_json::Map<String, Value>, key: &str, warnings: &mut Vec<String>) -> String {
    match get_ci(map, key) {
        Some(v) => value_to_string(v),
        None => {
            warnings.push(format!("missing SOAP section {key:?}"));
            String::new()
        }
    }
}

/// Parse a four-section SOAP object; keys matched case-insensitively, missing
/// keys become empty sections with a warning.
pub fn parse_soap(raw: &str, note_id: &str) -> Result<(SoapNote, Vec<String>), ParseError> {
    let value = extract_json_value(raw).ok_or(ParseError::NoStructuredRegion)?;
    let map = find_object(&value).ok_or(ParseError::NoStructuredRegion)?;
    let mut warnings = Vec::new();
    let soap = SoapNote {
        note_id: note_id.to_string(),
        subjective: soap_key(map, "Subjective", &mut warnings),
        objective: soap_key(map, "Objective", &mut warnings),
        assessment: soap_key(map, "Assessment", &mut warnings),
        plan: soap_key(map, "Plan", &mut warnings),
    };
    Ok((soap, warnings))
}

/// Parse a generated assessment-and-plan object into a SOAP note whose
/// subjective/objective sections are intentionally empty.
pub fn parse_assessment_plan(
    raw: &str,
    note_id: &str,
) -> Result<(SoapNote, Vec<String>), ParseError> {
    let value = extract_json_value(raw).ok_or(ParseError::NoStructuredRegion)?;
    let map = find_object(&value).ok_or(ParseError::NoStructuredRegion)?;
    let mut warnings = Vec::new();
    let soap = SoapNote {
        note_id: note_id.to_string(),
        subjective: String::new(),
        objective: String::new(),
        assessment: soap_key(map, "Assessment", &mut warnings),
        plan: soap_key(map, "Plan", &mut warnings),
    };
    Ok((soap, warnings))
}

fn find_object(value: &Value) -> Option<&serde_json::Map<String, Value>> {
    match value {
        Value::Object(map) => Some(map),
        Value::Array(items) => items.iter().find_map(find_object),
        _ => None,
    }
}

/// Parse a review turn. Primary path: the per-code `verdict` field. Fallback:
/// an explanation matching a dispute pattern contests the code. Codes absent
/// from the response are accepted with a warning.
pub fn parse_review(
    raw: &str,
    codes_under_review: &[String],
    dispute_patterns: &[String],
) -> Result<(ReviewVerdict, Vec<String>), ParseError> {
    let (objects, _) = extract_code_objects(raw);
    let mut by_code: BTreeMap<String, &RawCodeObject> = BTreeMap::new();
    for obj in &objects {
        if let Ok((code, _)) = canonicalize_any(&obj.code) {
            by_code.entry(code).or_insert(obj);
        }
    }
    if objects.is_empty() && !codes_under_review.iter().any(|c| raw.contains(c.as_str())) {
        return Err(ParseError::EmptyReview);
    }

    let lower_patterns: Vec<String> = dispute_patterns.iter().map(|p| p.to_lowercase()).collect();
    let disputes = |text: &str| -> bool {
        let lower = text.to_lowercase();
        lower_patterns.iter().any(|p| lower.contains(p.as_str()))
    };

    let mut warnings = Vec::new();
    let mut per_code = BTreeMap::new();
    for code in codes_under_review {
        let verdict = match by_code.get(code) {
            Some(obj) => {
                let explanation = obj.explanation.clone().unwrap_or_default();
                match obj.verdict.as_deref().map(str::trim) {
                    Some(v) if v.eq_ignore_ascii_case("contest") => Verdict::Contest {
                        reason: explanation,
                    },
                    Some(v) if v.eq_ignore_ascii_case("accept") => Verdict::Accept,
                    Some(other) => {
                        warnings.push(format!(
                            "code {code}: unknown verdict {other:?}, falling back to dispute patterns"
                        ));
                        if disputes(&explanation) {
                            Verdict::Contest {
                                reason: explanation,
                            }
                        } else {
                            Verdict::Accept
                        }
                    }
                    None => {
                        if disputes(&explanation) {
                            Verdict::Contest {
                                reason: explanation,
                            }
                        } else {
                            Verdict::Accept
                        }
                    }
                }
            }
            None => {
                // Prose fallback: judge the line mentioning the code, if any.
                let line = raw.lines().find(|l| l.contains(code.as_str()));
                match line {
                    Some(line) if disputes(line) => Verdict::Contest {
                        reason: line.trim().to_string(),
                    },
                    _ => {
                        warnings.push(format!(
                            "code {code} absent from review response; treated as accepted"
                        ));
                        Verdict::Accept
                    }
                }
            }
        };
        per_code.insert(code.clone(), verdict);
    }
    Ok((ReviewVerdict { per_code }, warnings))
}
