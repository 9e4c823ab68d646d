//! Agent roles: verbatim prompt rendering, gateway invocation, and response
//! parsing into assignments, SOAP notes, or review verdicts.

pub mod parse;
pub mod prompts;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SoapNote;
use crate::gateway::{
    counter::truncate_to_budget, CompletionProvider, CompletionRequest, TokenCounter,
};

pub use parse::{
    parse_assessment_plan, parse_code_list, parse_review, parse_soap, ParseError,
    ParsedAssignments, DEFAULT_DISPUTE_PATTERNS,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("role {role} is missing context field {field}")]
    MissingContext {
        role: AgentRole,
        field: &'static str,
    },
    #[error(transparent)]
    Gateway(#[from] crate::gateway::GatewayError),
}

/// The eight prompt-bearing roles. The three physician variants are distinct
/// roles because each maps to exactly one verbatim template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    SoapFormatter,
    Patient,
    PhysicianV1,
    PhysicianV2,
    PhysicianV3,
    Coder,
    Reviewer,
    Adjuster,
}

/// What a role's reply parses into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    CodeList,
    Review,
    Soap,
    AssessmentPlan,
}

impl AgentRole {
    pub fn all() -> [AgentRole; 8] {
        [
            AgentRole::SoapFormatter,
            AgentRole::Patient,
            AgentRole::PhysicianV1,
            AgentRole::PhysicianV2,
            AgentRole::PhysicianV3,
            AgentRole::Coder,
            AgentRole::Reviewer,
            AgentRole::Adjuster,
        ]
    }

    pub fn template(&self) -> &'static str {
        match self {
            AgentRole::SoapFormatter => prompts::SOAP_FORMATTER_TEMPLATE,
            AgentRole::Patient => prompts::PATIENT_TEMPLATE,
            AgentRole::PhysicianV1 => prompts::PHYSICIAN_V1_TEMPLATE,
            AgentRole::PhysicianV2 => prompts::PHYSICIAN_V2_TEMPLATE,
            AgentRole::PhysicianV3 => prompts::PHYSICIAN_V3_TEMPLATE,
            AgentRole::Coder => prompts::CODER_TEMPLATE,
            AgentRole::Reviewer => prompts::REVIEWER_TEMPLATE,
            AgentRole::Adjuster => prompts::ADJUSTER_TEMPLATE,
        }
    }

    pub fn output_kind(&self) -> OutputKind {
        match self {
            AgentRole::SoapFormatter => OutputKind::Soap,
            AgentRole::Patient | AgentRole::PhysicianV1 => OutputKind::Review,
            AgentRole::PhysicianV2 => OutputKind::AssessmentPlan,
            AgentRole::PhysicianV3
            | AgentRole::Coder
            | AgentRole::Reviewer
            | AgentRole::Adjuster => OutputKind::CodeList,
        }
    }

    /// Roles whose output is a code list receive the external-knowledge block.
    pub fn receives_knowledge(&self) -> bool {
        self.output_kind() == OutputKind::CodeList
    }

    fn suffix(&self) -> &'static str {
        match self.output_kind() {
            OutputKind::CodeList => prompts::CODE_LIST_SUFFIX,
            OutputKind::Review => prompts::REVIEW_SUFFIX,
            OutputKind::Soap => prompts::SOAP_SUFFIX,
            OutputKind::AssessmentPlan => prompts::ASSESSMENT_PLAN_SUFFIX,
        }
    }

    fn retry_reminder(&self) -> &'static str {
        match self.output_kind() {
            OutputKind::CodeList | OutputKind::Review => prompts::LIST_RETRY_REMINDER,
            OutputKind::Soap | OutputKind::AssessmentPlan => prompts::OBJECT_RETRY_REMINDER,
        }
    }

    fn confrontation_sentence(&self) -> Option<&'static str> {
        match self {
            AgentRole::Coder | AgentRole::PhysicianV3 => {
                Some(prompts::CONFRONTATION_CODING_SENTENCE)
            }
            AgentRole::Patient => Some(prompts::CONFRONTATION_PATIENT_SENTENCE),
            _ => None,
        }
    }

    pub fn parse_name(s: &str) -> Option<AgentRole> {
        match s.trim().to_ascii_lowercase().as_str() {
            "soap_formatter" | "soap-formatter" | "soapformatter" => Some(AgentRole::SoapFormatter),
            "patient" => Some(AgentRole::Patient),
            "physician_v1" | "physician-v1" | "physicianv1" | "physician" => {
                Some(AgentRole::PhysicianV1)
            }
            "physician_v2" | "physician-v2" | "physicianv2" => Some(AgentRole::PhysicianV2),
            "physician_v3" | "physician-v3" | "physicianv3" => Some(AgentRole::PhysicianV3),
            "coder" => Some(AgentRole::Coder),
            "reviewer" => Some(AgentRole::Reviewer),
            "adjuster" | "adjustor" => Some(AgentRole::Adjuster),
            _ => None,
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            AgentRole::SoapFormatter => "soap_formatter",
            AgentRole::Patient => "patient",
            AgentRole::PhysicianV1 => "physician_v1",
            AgentRole::PhysicianV2 => "physician_v2",
            AgentRole::PhysicianV3 => "physician_v3",
            AgentRole::Coder => "coder",
            AgentRole::Reviewer => "reviewer",
            AgentRole::Adjuster => "adjuster",
        };
        write!(f, "{name}")
    }
}

/// One (code, explanation, source role) triple — the atomic agent output.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CodeAssignment {
    pub code: String,
    pub explanation: String,
    pub source_role: AgentRole,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Contest { reason: String },
}

/// Per-code accept/contest decisions from one reviewing turn.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewVerdict {
    pub per_code: std::collections::BTreeMap<String, Verdict>,
}

impl ReviewVerdict {
    /// True iff at least one code is contested.
    pub fn overall_objection(&self) -> bool {
        self.per_code
            .values()
            .any(|v| matches!(v, Verdict::Contest { .. }))
    }

    pub fn contested(&self) -> impl Iterator<Item = (&String, &str)> {
        self.per_code.iter().filter_map(|(code, v)| match v {
            Verdict::Contest { reason } => Some((code, reason.as_str())),
            Verdict::Accept => None,
        })
    }
}

/// One objection carried to the adjuster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Objection {
    pub role: AgentRole,
    pub code: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TurnPayload {
    Assignments { assignments: Vec<CodeAssignment> },
    Soap { soap: SoapNote },
    Review { review: ReviewVerdict },
    ParseFailed { error: String },
}

/// An immutable transcript entry for one request/response exchange. Token
/// counts come from the provider and are deterministic under replay/cache,
/// so results containing turns stay byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurn {
    pub role: AgentRole,
    pub digest: String,
    pub system_prompt: String,
    pub user_messages: Vec<String>,
    pub raw_response: String,
    pub payload: TurnPayload,
    pub parse_warnings: Vec<String>,
    pub note_truncated: bool,
    pub prompt_tokens: usize,
    pub response_tokens: usize,
}

/// Everything a role's message builder may need. The workflow fills only the
/// fields relevant to the roles it runs.
#[derive(Debug, Clone, Default)]
pub struct PromptContext<'a> {
    pub note_id: &'a str,
    pub note_text: Option<&'a str>,
    pub subjective: Option<&'a str>,
    pub objective: Option<&'a str>,
    pub generated_assessment: Option<&'a str>,
    pub generated_plan: Option<&'a str>,
    pub gold_assessment: Option<&'a str>,
    pub gold_plan: Option<&'a str>,
    pub prior_codes: Option<&'a [CodeAssignment]>,
    pub objections: Option<&'a [Objection]>,
    /// Rendered knowledge block; present only when external knowledge is on.
    pub knowledge_block: Option<&'a str>,
    pub confrontation: bool,
}

/// A user message, marked truncatable when it carries EHR-derived content
/// that may be cut to fit the token budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptMessage {
    pub text: String,
    pub truncatable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub messages: Vec<PromptMessage>,
}

/// Render prior assignments for a reviewing or adjusting turn, in the same
/// object shape the agents are asked to emit.
pub fn render_assignments(codes: &[CodeAssignment]) -> String {
    let mut out = String::from("[");
    for (i, a) in codes.iter().enumerate() {
        if i > 0 {
            out.push_str(",\n ");
        }
        out.push_str(
            &serde_json::json!({"code": a.code, "explanation": a.explanation}).to_string(),
        );
    }
    out.push(']');
    out
}

fn render_objections(objections: &[Objection]) -> String {
    let mut out = String::new();
    for (i, o) in objections.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("- {} contests {}: {}", o.role, o.code, o.reason));
    }
    out
}

fn require<'a, T>(value: Option<T>, role: AgentRole, field: &'static str) -> Result<T, AgentError>
where
    T: 'a,
{
    value.ok_or(AgentError::MissingContext { role, field })
}

fn ap_block(assessment: &str, plan: &str) -> String {
    format!("Assessment: {assessment}\nPlan: {plan}")
}

/// Build the system prompt and user messages for one role. The system prompt
/// is the verbatim role text (minus the strategy sentences when confrontation
/// is off), then the knowledge block for coding-capable roles, then the
/// structured-output suffix.
pub fn render_prompt(role: AgentRole, ctx: &PromptContext) -> Result<RenderedPrompt, AgentError> {
    let mut system = if ctx.confrontation {
        role.template().to_string()
    } else {
        match role.confrontation_sentence() {
            Some(sentence) => prompts::remove_sentence(role.template(), sentence),
            None => role.template().to_string(),
        }
    };
    if role.receives_knowledge() {
        if let Some(block) = ctx.knowledge_block {
            system.push_str("\n\n");
            system.push_str(block);
        }
    }
    system.push_str("\n\n");
    system.push_str(role.suffix());

    let note = |field: &'static str| require(ctx.note_text, role, field);
    let codes = |field: &'static str| require(ctx.prior_codes, role, field);

    let messages = match role {
        AgentRole::SoapFormatter | AgentRole::Coder => vec![PromptMessage {
            text: note("note_text")?.to_string(),
            truncatable: true,
        }],
        AgentRole::Reviewer => vec![
            PromptMessage {
                text: note("note_text")?.to_string(),
                truncatable: true,
            },
            PromptMessage {
                text: format!(
                    "ICD-9 codes assigned by the coder:\n{}",
                    render_assignments(codes("prior_codes")?)
                ),
                truncatable: false,
            },
        ],
        AgentRole::Patient | AgentRole::PhysicianV1 => vec![
            PromptMessage {
                text: note("note_text")?.to_string(),
                truncatable: true,
            },
            PromptMessage {
                text: format!(
                    "Assigned ICD-9 codes under review:\n{}",
                    render_assignments(codes("prior_codes")?)
                ),
                truncatable: false,
            },
        ],
        AgentRole::PhysicianV2 => {
            let subjective = require(ctx.subjective, role, "subjective")?;
            let objective = require(ctx.objective, role, "objective")?;
            vec![PromptMessage {
                text: format!("Subjective:\n{subjective}\n\nObjective:\n{objective}"),
                truncatable: true,
            }]
        }
        AgentRole::PhysicianV3 => {
            let gen_a = require(ctx.generated_assessment, role, "generated_assessment")?;
            let gen_p = require(ctx.generated_plan, role, "generated_plan")?;
            let gold_a = require(ctx.gold_assessment, role, "gold_assessment")?;
            let gold_p = require(ctx.gold_plan, role, "gold_plan")?;
            vec![
                PromptMessage {
                    text: format!("Generated assessment and plan:\n{}", ap_block(gen_a, gen_p)),
                    truncatable: false,
                },
                PromptMessage {
                    text: format!(
                        "Gold standard assessment and plan:\n{}",
                        ap_block(gold_a, gold_p)
                    ),
                    truncatable: true,
                },
            ]
        }
        AgentRole::Adjuster => vec![
            PromptMessage {
                text: note("note_text")?.to_string(),
                truncatable: true,
            },
            PromptMessage {
                text: format!(
                    "Reviewed ICD-9 codes:\n{}",
                    render_assignments(codes("prior_codes")?)
                ),
                truncatable: false,
            },
            PromptMessage {
                text: format!(
                    "Objections raised:\n{}",
                    render_objections(require(ctx.objections, role, "objections")?)
                ),
                truncatable: false,
            },
        ],
    };
    Ok(RenderedPrompt { system, messages })
}

/// Gateway parameters shared by every turn in a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatewayParams {
    pub model_id: String,
    pub temperature: f64,
    pub token_budget: usize,
    pub max_response_tokens: usize,
}

impl Default for GatewayParams {
    fn default() -> Self {
        Self {
            model_id: "gpt-4".to_string(),
            temperature: crate::gateway::DEFAULT_TEMPERATURE,
            token_budget: crate::gateway::DEFAULT_TOKEN_BUDGET,
            max_response_tokens: 1000,
        }
    }
}

/// All attempts of one agent invocation; the last turn carries the outcome.
#[derive(Debug, Clone)]
pub struct AgentExchange {
    pub turns: Vec<AgentTurn>,
}

impl AgentExchange {
    pub fn payload(&self) -> &TurnPayload {
        &self
            .turns
            .last()
            .expect("an exchange records at least one turn")
            .payload
    }
}

fn parse_payload(
    role: AgentRole,
    raw: &str,
    ctx: &PromptContext,
    dispute_patterns: &[String],
) -> Result<(TurnPayload, Vec<String>), ParseError> {
    match role.output_kind() {
        OutputKind::CodeList => {
            let parsed = parse_code_list(raw, role)?;
            Ok((
                TurnPayload::Assignments {
                    assignments: parsed.assignments,
                },
                parsed.warnings,
            ))
        }
        OutputKind::Soap => {
            let (soap, warnings) = parse_soap(raw, ctx.note_id)?;
            Ok((TurnPayload::Soap { soap }, warnings))
        }
        OutputKind::AssessmentPlan => {
            let (soap, warnings) = parse_assessment_plan(raw, ctx.note_id)?;
            Ok((TurnPayload::Soap { soap }, warnings))
        }
        OutputKind::Review => {
            let codes: Vec<String> = ctx
                .prior_codes
                .unwrap_or(&[])
                .iter()
                .map(|a| a.code.clone())
                .collect();
            let (review, warnings) = parse_review(raw, &codes, dispute_patterns)?;
            Ok((TurnPayload::Review { review }, warnings))
        }
    }
}

/// Render, truncate, complete, and parse one agent turn, re-asking up to
/// `retry_budget` times on unparseable output. Gateway failures surface as
/// errors with no turn; parse failures past the budget are recorded in the
/// final turn's payload.
pub fn run_agent(
    role: AgentRole,
    ctx: &PromptContext,
    gateway: &dyn CompletionProvider,
    counter: &dyn TokenCounter,
    params: &GatewayParams,
    retry_budget: usize,
    dispute_patterns: &[String],
) -> Result<AgentExchange, AgentError> {
    let rendered = render_prompt(role, ctx)?;
    let mut turns = Vec::new();

    for attempt in 0..=retry_budget {
        let mut reminders = Vec::new();
        for _ in 0..attempt {
            reminders.push(role.retry_reminder().to_string());
        }

        // Everything except the truncatable message is fixed overhead.
        let mut fixed: Vec<&str> = vec![rendered.system.as_str()];
        let mut note_body: Option<&str> = None;
        for msg in &rendered.messages {
            if msg.truncatable && note_body.is_none() {
                note_body = Some(&msg.text);
            } else {
                fixed.push(&msg.text);
            }
        }
        for reminder in &reminders {
            fixed.push(reminder.as_str());
        }

        let mut truncated = false;
        let mut user_messages = Vec::with_capacity(rendered.messages.len() + reminders.len());
        for msg in &rendered.messages {
            if msg.truncatable && Some(msg.text.as_str()) == note_body {
                let outcome = truncate_to_budget(
                    &msg.text,
                    &fixed,
                    params.max_response_tokens,
                    params.token_budget,
                    counter,
                )?;
                truncated = outcome.truncated;
                user_messages.push(outcome.text);
            } else {
                user_messages.push(msg.text.clone());
            }
        }
        user_messages.extend(reminders.iter().cloned());

        let request = CompletionRequest {
            system_prompt: rendered.system.clone(),
            user_messages,
            temperature: params.temperature,
            max_response_tokens: params.max_response_tokens,
            model_id: params.model_id.clone(),
            token_budget: params.token_budget,
        };
        let digest = request.cache_key().0;
        let response = crate::gateway::complete(&request, gateway)?;

        match parse_payload(role, &response.text, ctx, dispute_patterns) {
            Ok((payload, parse_warnings)) => {
                turns.push(AgentTurn {
                    role,
                    digest,
                    system_prompt: request.system_prompt,
                    user_messages: request.user_messages,
                    raw_response: response.text,
                    payload,
                    parse_warnings,
                    note_truncated: truncated,
                    prompt_tokens: response.prompt_tokens,
                    response_tokens: response.response_tokens,
                });
                return Ok(AgentExchange { turns });
            }
            Err(err) => {
                turns.push(AgentTurn {
                    role,
                    digest,
                    system_prompt: request.system_prompt,
                    user_messages: request.user_messages,
                    raw_response: response.text,
                    payload: TurnPayload::ParseFailed {
                        error: err.to_string(),
                    },
                    parse_warnings: Vec::new(),
                    note_truncated: truncated,
                    prompt_tokens: response.prompt_tokens,
                    response_tokens: response.response_tokens,
                });
            }
        }
    }
    Ok(AgentExchange { turns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ApproxCounter, GatewayError, ReplayProvider};

    fn ctx_with_note<'a>(note: &'a str) -> PromptContext<'a> {
        PromptContext {
            note_id: "n1",
            note_text: Some(note),
            confrontation: true,
            ..Default::default()
        }
    }

    #[test]
    fn coder_prompt_contains_verbatim_template_and_suffix() {
        let rendered = render_prompt(AgentRole::Coder, &ctx_with_note("Note text.")).unwrap();
        assert!(rendered.system.contains("You are an ICD-9 coder."));
        assert!(rendered.system.contains(prompts::CODE_LIST_SUFFIX));
        assert_eq!(rendered.messages.len(), 1);
        assert!(rendered.messages[0].truncatable);
    }

    #[test]
    fn knowledge_block_only_for_coding_roles() {
        let block = "Please only use ICD-9 codes that are listed below:\nCandidate Codes:\n401.9 : Unspecified essential hypertension";
        let assignments = vec![CodeAssignment {
            code: "401.9".into(),
            explanation: "HTN".into(),
            source_role: AgentRole::Coder,
        }];
        let mut ctx = ctx_with_note("Note.");
        ctx.knowledge_block = Some(block);
        ctx.prior_codes = Some(&assignments);

        let coder = render_prompt(AgentRole::Coder, &ctx).unwrap();
        assert!(coder.system.contains("Candidate Codes:"));
        let patient = render_prompt(AgentRole::Patient, &ctx).unwrap();
        assert!(!patient.system.contains("Candidate Codes:"));
    }

    #[test]
    fn knowledge_off_means_no_candidate_section() {
        let rendered = render_prompt(AgentRole::Coder, &ctx_with_note("Note.")).unwrap();
        assert!(!rendered.system.contains("Candidate Codes:"));
    }

    #[test]
    fn soap_formatter_prompt_has_format_instruction() {
        let rendered = render_prompt(AgentRole::SoapFormatter, &ctx_with_note("Note.")).unwrap();
        assert!(rendered.system.contains("format the note in the SOAP"));
    }

    #[test]
    fn confrontation_off_removes_exactly_the_strategy_sentences() {
        let on = render_prompt(AgentRole::Coder, &ctx_with_note("Note.")).unwrap();
        let mut ctx = ctx_with_note("Note.");
        ctx.confrontation = false;
        let off = render_prompt(AgentRole::Coder, &ctx).unwrap();
        assert!(on.system.contains(prompts::CONFRONTATION_CODING_SENTENCE));
        assert!(!off.system.contains(prompts::CONFRONTATION_CODING_SENTENCE));
        // Removing the sentence (and its separator space) from the on-variant
        // reproduces the off-variant exactly.
        let expected = on
            .system
            .replace(&format!(" {}", prompts::CONFRONTATION_CODING_SENTENCE), "");
        assert_eq!(off.system, expected);
    }

    #[test]
    fn missing_context_is_reported() {
        let err = render_prompt(AgentRole::Coder, &PromptContext::default()).unwrap_err();
        match err {
            AgentError::MissingContext { role, field } => {
                assert_eq!(role, AgentRole::Coder);
                assert_eq!(field, "note_text");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn adjuster_sees_codes_and_objections() {
        let assignments = vec![CodeAssignment {
            code: "401.9".into(),
            explanation: "HTN".into(),
            source_role: AgentRole::Reviewer,
        }];
        let objections = vec![Objection {
            role: AgentRole::Patient,
            code: "401.9".into(),
            reason: "No evidence of hypertension found in the text.".into(),
        }];
        let mut ctx = ctx_with_note("Note.");
        ctx.prior_codes = Some(&assignments);
        ctx.objections = Some(&objections);
        let rendered = render_prompt(AgentRole::Adjuster, &ctx).unwrap();
        assert_eq!(rendered.messages.len(), 3);
        assert!(rendered.messages[1].text.contains("401.9"));
        assert!(rendered.messages[2].text.contains("patient contests 401.9"));
    }

    #[test]
    fn run_agent_parses_scripted_coder_output() {
        let replay = ReplayProvider::new();
        replay.script_rule(
            "You are an ICD-9 coder.",
            [r#"[{"code": "401.9", "explanation": "Hypertension"}, {"code": "569.81", "explanation": "Discharge Diagnosis: Peptic ulcer"}]"#],
        );
        let exchange = run_agent(
            AgentRole::Coder,
            &ctx_with_note("Note text."),
            &replay,
            &ApproxCounter,
            &GatewayParams::default(),
            2,
            &[],
        )
        .unwrap();
        assert_eq!(exchange.turns.len(), 1);
        match exchange.payload() {
            TurnPayload::Assignments { assignments } => assert_eq!(assignments.len(), 2),
            other => panic!("unexpected payload {other:?}"),
        }
    }

    #[test]
    fn run_agent_retries_then_succeeds() {
        let replay = ReplayProvider::new();
        replay.script_rule(
            "You are an ICD-9 coder.",
            [
                "sorry, I cannot produce codes right now",
                r#"[{"code": "401.9", "explanation": "HTN"}]"#,
            ],
        );
        let exchange = run_agent(
            AgentRole::Coder,
            &ctx_with_note("Note text."),
            &replay,
            &ApproxCounter,
            &GatewayParams::default(),
            2,
            &[],
        )
        .unwrap();
        assert_eq!(exchange.turns.len(), 2, "transcript records both attempts");
        assert!(matches!(
            exchange.turns[0].payload,
            TurnPayload::ParseFailed { .. }
        ));
        assert!(matches!(
            exchange.turns[1].payload,
            TurnPayload::Assignments { .. }
        ));
        // The re-ask carries the terse reminder.
        assert!(exchange.turns[1]
            .user_messages
            .iter()
            .any(|m| m == prompts::LIST_RETRY_REMINDER));
        assert_eq!(replay.calls(), 2);
    }

    #[test]
    fn run_agent_exhausts_retry_budget() {
        let replay = ReplayProvider::new();
        replay.script_rule(
            "You are an ICD-9 coder.",
            ["garbage", "more garbage", "still garbage"],
        );
        let exchange = run_agent(
            AgentRole::Coder,
            &ctx_with_note("Note text."),
            &replay,
            &ApproxCounter,
            &GatewayParams::default(),
            2,
            &[],
        )
        .unwrap();
        assert_eq!(exchange.turns.len(), 3);
        assert!(matches!(
            exchange.payload(),
            TurnPayload::ParseFailed { .. }
        ));
    }

    #[test]
    fn gateway_error_propagates_without_a_turn() {
        let replay = ReplayProvider::new(); // nothing scripted
        let err = run_agent(
            AgentRole::Coder,
            &ctx_with_note("Note text."),
            &replay,
            &ApproxCounter,
            &GatewayParams::default(),
            1,
            &[],
        )
        .unwrap_err();
        assert!(matches!(
            err,
            AgentError::Gateway(GatewayError::Unscripted { .. })
        ));
    }

    #[test]
    fn prompt_token_estimate_respects_budget() {
        let huge_note = "This was documented in the chart. ".repeat(4000);
        let replay = ReplayProvider::new();
        replay.script_rule(
            "You are an ICD-9 coder.",
            [r#"[{"code": "401.9", "explanation": "HTN"}]"#],
        );
        let params = GatewayParams {
            token_budget: 8000,
            max_response_tokens: 500,
            ..Default::default()
        };
        let ctx = ctx_with_note(&huge_note);
        let exchange = run_agent(
            AgentRole::Coder,
            &ctx,
            &replay,
            &ApproxCounter,
            &params,
            0,
            &[],
        )
        .unwrap();
        let turn = &exchange.turns[0];
        assert!(turn.note_truncated);
        let estimate: usize = std::iter::once(turn.system_prompt.as_str())
            .chain(turn.user_messages.iter().map(String::as_str))
            .map(|t| ApproxCounter.count(t))
            .sum();
        assert!(estimate + params.max_response_tokens <= params.token_budget);
    }

    #[test]
    fn role_names_round_trip() {
        for role in AgentRole::all() {
            let name = role.to_string();
            assert_eq!(AgentRole::parse_name(&name), Some(role), "{name}");
        }
        assert_eq!(AgentRole::parse_name("adjustor"), Some(AgentRole::Adjuster));
    }
}
