//! Role prompt templates and the machine-readable output-format suffixes.
//!
//! The role texts are stored as assets and embedded verbatim; rendering never
//! edits them except for the confrontation-strategy removal, which deletes
//! exactly the strategy sentences.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::AgentRole;

pub const SOAP_FORMATTER_TEMPLATE: &str = include_str!("../../assets/prompts/soap_formatter.txt");
pub const PATIENT_TEMPLATE: &str = include_str!("../../assets/prompts/patient.txt");
pub const PHYSICIAN_V1_TEMPLATE: &str = include_str!("../../assets/prompts/physician_v1.txt");
pub const PHYSICIAN_V2_TEMPLATE: &str = include_str!("../../assets/prompts/physician_v2.txt");
pub const PHYSICIAN_V3_TEMPLATE: &str = include_str!("../../assets/prompts/physician_v3.txt");
pub const CODER_TEMPLATE: &str = include_str!("../../assets/prompts/coder.txt");
pub const REVIEWER_TEMPLATE: &str = include_str!("../../assets/prompts/reviewer.txt");
pub const ADJUSTER_TEMPLATE: &str = include_str!("../../assets/prompts/adjuster.txt");

/// Strategy sentence pushing the coding role to maximize coverage; present in
/// the coder and physician-v3 templates.
pub const CONFRONTATION_CODING_SENTENCE: &str =
    "You assign as many as possible ICD-9 codes and explain the reasons for each code.";

/// Strategy sentence telling the patient to police overbilling.
pub const CONFRONTATION_PATIENT_SENTENCE: &str =
    "You also check the ICD-9 codes to avoid being overbilled.";

pub const CODE_LIST_SUFFIX: &str = "Respond with a JSON list of objects, one object per assigned code, in exactly this form:\n[{\"code\": \"<ICD-9 code>\", \"explanation\": \"<reason, citing the note where possible>\"}]\nOutput the JSON list and nothing else.";

pub const REVIEW_SUFFIX: &str = "Respond with a JSON list of objects, one object per reviewed code, in exactly this form:\n[{\"code\": \"<ICD-9 code>\", \"verdict\": \"accept\" or \"contest\", \"explanation\": \"<reason>\"}]\nOutput the JSON list and nothing else.";

pub const SOAP_SUFFIX: &str = "Respond with a single JSON object containing exactly the keys \"Subjective\", \"Objective\", \"Assessment\" and \"Plan\". Output the JSON object and nothing else.";

pub const ASSESSMENT_PLAN_SUFFIX: &str = "Respond with a single JSON object containing exactly the keys \"Assessment\" and \"Plan\". Output the JSON object and nothing else.";

/// Reminder appended to re-asks after an unparseable reply.
pub const LIST_RETRY_REMINDER: &str = "Respond only with the list.";
pub const OBJECT_RETRY_REMINDER: &str = "Respond only with the JSON object.";

/// Remove one sentence from a template, collapsing the separator space it
/// leaves behind. Returns the template unchanged when the sentence is absent.
pub fn remove_sentence(template: &str, sentence: &str) -> String {
    let Some(idx) = template.find(sentence) else {
        return template.to_string();
    };
    let mut before = &template[..idx];
    let after = &template[idx + sentence.len()..];
    if after.starts_with(' ') && before.ends_with(' ') {
        before = &before[..before.len() - 1];
    } else if after.is_empty() {
        before = before.trim_end();
    }
    format!("{before}{after}")
}

/// SHA-256 checksum of every role template, recorded in run manifests.
pub fn prompt_checksums() -> BTreeMap<String, String> {
    AgentRole::all()
        .iter()
        .map(|role| {
            let mut hasher = Sha256::new();
            hasher.update(role.template().as_bytes());
            (role.to_string(), format!("{:x}", hasher.finalize()))
        })
        .collect()
}
