//! MAC-I and MAC-II workflow state machines over agent turns: review,
//! appeal/adjudication, ablation agent subsets, and final code assembly.

pub mod batch;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    run_agent, AgentRole, AgentTurn, CodeAssignment, GatewayParams, Objection, PromptContext,
    TurnPayload, DEFAULT_DISPUTE_PATTERNS,
};
use crate::corpus::{NoteRecord, SoapNote};
use crate::gateway::{CompletionProvider, TokenCounter};
use crate::icd::{render_knowledge_block, CandidateSet};

pub use batch::{run_batch, RunManifest};

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("invalid workflow config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkflowMode {
    Mac1,
    Mac2,
}

impl WorkflowMode {
    /// The role that produces the initial code list in this mode.
    pub fn coding_role(&self) -> AgentRole {
        match self {
            WorkflowMode::Mac1 => AgentRole::Coder,
            WorkflowMode::Mac2 => AgentRole::PhysicianV3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WorkflowConfig {
    pub mode: WorkflowMode,
    pub agent_set: BTreeSet<AgentRole>,
    pub confrontation: bool,
    pub external_knowledge: bool,
    pub candidate_set: Option<CandidateSet>,
    pub gateway: GatewayParams,
    pub parallelism: usize,
    pub retry_budget: usize,
    pub dispute_patterns: Vec<String>,
}

impl WorkflowConfig {
    /// Full MAC-I agent set.
    pub fn mac1(candidate_set: Option<CandidateSet>) -> Self {
        Self {
            mode: WorkflowMode::Mac1,
            agent_set: [
                AgentRole::Coder,
                AgentRole::Reviewer,
                AgentRole::Patient,
                AgentRole::PhysicianV1,
                AgentRole::Adjuster,
            ]
            .into_iter()
            .collect(),
            confrontation: true,
            external_knowledge: candidate_set.is_some(),
            candidate_set,
            gateway: GatewayParams::default(),
            parallelism: 1,
            retry_budget: 2,
            dispute_patterns: DEFAULT_DISPUTE_PATTERNS
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    /// Full MAC-II agent set.
    pub fn mac2(candidate_set: Option<CandidateSet>) -> Self {
        let mut cfg = Self::mac1(candidate_set);
        cfg.mode = WorkflowMode::Mac2;
        cfg.agent_set = [
            AgentRole::SoapFormatter,
            AgentRole::PhysicianV2,
            AgentRole::PhysicianV3,
            AgentRole::Patient,
            AgentRole::PhysicianV1,
            AgentRole::Adjuster,
        ]
        .into_iter()
        .collect();
        cfg
    }

    pub fn validate(&self) -> Result<(), WorkflowError> {
        let coding_role = self.mode.coding_role();
        if !self.agent_set.contains(&coding_role) {
            return Err(WorkflowError::InvalidConfig(format!(
                "agent_set must contain the coding role {coding_role} for this mode"
            )));
        }
        if self.agent_set.contains(&AgentRole::Adjuster)
            && !self.agent_set.contains(&AgentRole::Patient)
            && !self.agent_set.contains(&AgentRole::PhysicianV1)
        {
            return Err(WorkflowError::InvalidConfig(
                "adjuster requires at least one reviewing role (patient or physician_v1)"
                    .to_string(),
            ));
        }
        if self.external_knowledge {
            match &self.candidate_set {
                Some(set) if !set.is_empty() => {}
                _ => {
                    return Err(WorkflowError::InvalidConfig(
                        "external_knowledge requires a non-empty candidate set".to_string(),
                    ))
                }
            }
        }
        if !(0.0..=2.0).contains(&self.gateway.temperature) {
            return Err(WorkflowError::InvalidConfig(format!(
                "temperature {} outside [0, 2]",
                self.gateway.temperature
            )));
        }
        if self.gateway.token_budget == 0 {
            return Err(WorkflowError::InvalidConfig(
                "token_budget must be at least 1".to_string(),
            ));
        }
        if self.parallelism == 0 {
            return Err(WorkflowError::InvalidConfig(
                "parallelism must be at least 1".to_string(),
            ));
        }
        Ok(())
    }

    fn knowledge_block(&self) -> Option<String> {
        if !self.external_knowledge {
            return None;
        }
        self.candidate_set
            .as_ref()
            .and_then(|set| render_knowledge_block(set).ok())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum WorkflowStatus {
    Complete,
    Failed { reason: String },
}

impl WorkflowStatus {
    pub fn is_complete(&self) -> bool {
        matches!(self, WorkflowStatus::Complete)
    }
}

/// A final code dropped by the candidate-set filter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HallucinationEvent {
    pub role: AgentRole,
    pub code: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowResult {
    pub note_id: String,
    pub final_codes: Vec<CodeAssignment>,
    pub transcript: Vec<AgentTurn>,
    pub adjuster_invoked: bool,
    pub objections: Vec<Objection>,
    pub hallucinations: Vec<HallucinationEvent>,
    pub status: WorkflowStatus,
}

impl WorkflowResult {
    pub fn final_code_set(&self) -> BTreeSet<String> {
        self.final_codes.iter().map(|a| a.code.clone()).collect()
    }
}

/// Partition assignments by candidate-set membership; the rejected side is
/// logged as hallucination events.
pub fn knowledge_filter(
    codes: Vec<CodeAssignment>,
    cands: &CandidateSet,
) -> (Vec<CodeAssignment>, Vec<CodeAssignment>) {
    codes.into_iter().partition(|a| cands.contains(&a.code))
}

/// Immutable per-note environment; the mutable accumulators live in
/// `RunState` so prompt contexts can borrow from here freely.
struct Env<'a> {
    note: &'a NoteRecord,
    cfg: &'a WorkflowConfig,
    gateway: &'a dyn CompletionProvider,
    counter: &'a dyn TokenCounter,
    knowledge: Option<String>,
}

#[derive(Default)]
struct RunState {
    transcript: Vec<AgentTurn>,
    objections: Vec<Objection>,
    hallucinations: Vec<HallucinationEvent>,
    adjuster_invoked: bool,
}

impl<'a> Env<'a> {
    fn new(
        note: &'a NoteRecord,
        cfg: &'a WorkflowConfig,
        gateway: &'a dyn CompletionProvider,
        counter: &'a dyn TokenCounter,
    ) -> Self {
        Self {
            note,
            cfg,
            gateway,
            counter,
            knowledge: cfg.knowledge_block(),
        }
    }

    fn has(&self, role: AgentRole) -> bool {
        self.cfg.agent_set.contains(&role)
    }

    fn base_ctx(&self) -> PromptContext<'_> {
        PromptContext {
            note_id: &self.note.note_id,
            confrontation: self.cfg.confrontation,
            knowledge_block: self.knowledge.as_deref(),
            ..Default::default()
        }
    }

    /// Run one role, appending every attempt to the transcript. An
    /// unrecoverable parse failure or gateway error becomes the note's
    /// failure reason.
    fn invoke(
        &self,
        state: &mut RunState,
        role: AgentRole,
        ctx: &PromptContext,
    ) -> Result<TurnPayload, String> {
        match run_agent(
            role,
            ctx,
            self.gateway,
            self.counter,
            &self.cfg.gateway,
            self.cfg.retry_budget,
            &self.cfg.dispute_patterns,
        ) {
            Ok(exchange) => {
                let payload = exchange.payload().clone();
                state.transcript.extend(exchange.turns);
                match payload {
                    TurnPayload::ParseFailed { error } => Err(format!(
                        "{role}: unparseable output after retries ({error})"
                    )),
                    other => Ok(other),
                }
            }
            Err(err) => Err(format!("{role}: {err}")),
        }
    }

    fn expect_assignments(
        &self,
        state: &mut RunState,
        role: AgentRole,
        ctx: &PromptContext,
    ) -> Result<Vec<CodeAssignment>, String> {
        match self.invoke(state, role, ctx)? {
            TurnPayload::Assignments { assignments } => Ok(assignments),
            other => Err(format!("{role}: unexpected payload kind {other:?}")),
        }
    }

    /// Patient and physician reviews are independent: each sees the note and
    /// the reviewed codes, never the other's verdict.
    fn run_reviews(&self, state: &mut RunState, current: &[CodeAssignment]) -> Result<(), String> {
        if current.is_empty() {
            return Ok(()); // nothing to contest
        }
        for role in [AgentRole::Patient, AgentRole::PhysicianV1] {
            if !self.has(role) {
                continue;
            }
            let mut ctx = self.base_ctx();
            ctx.note_text = Some(&self.note.text);
            ctx.prior_codes = Some(current);
            match self.invoke(state, role, &ctx)? {
                TurnPayload::Review { review } => {
                    for (code, reason) in review.contested() {
                        state.objections.push(Objection {
                            role,
                            code: code.clone(),
                            reason: reason.to_string(),
                        });
                    }
                }
                other => return Err(format!("{role}: unexpected payload kind {other:?}")),
            }
        }
        Ok(())
    }

    /// Invoke the adjuster at most once, only on objection; its output list
    /// is final verbatim.
    fn maybe_adjudicate(
        &self,
        state: &mut RunState,
        current: Vec<CodeAssignment>,
    ) -> Result<Vec<CodeAssignment>, String> {
        if state.objections.is_empty() || !self.has(AgentRole::Adjuster) {
            return Ok(current);
        }
        let objections = state.objections.clone();
        let mut ctx = self.base_ctx();
        ctx.note_text = Some(&self.note.text);
        ctx.prior_codes = Some(&current);
        ctx.objections = Some(&objections);
        let adjusted = self.expect_assignments(state, AgentRole::Adjuster, &ctx)?;
        state.adjuster_invoked = true;
        Ok(adjusted)
    }

    fn finalize(&self, mut state: RunState, current: Vec<CodeAssignment>) -> WorkflowResult {
        let final_codes = if self.cfg.external_knowledge {
            let cands = self
                .cfg
                .candidate_set
                .as_ref()
                .expect("validated: knowledge requires candidates");
            let (kept, rejected) = knowledge_filter(current, cands);
            for assignment in rejected {
                log::warn!(
                    "note {}: hallucinated code {} from {} excluded by candidate filter",
                    self.note.note_id,
                    assignment.code,
                    assignment.source_role
                );
                state.hallucinations.push(HallucinationEvent {
                    role: assignment.source_role,
                    code: assignment.code,
                    reason: "code not in the candidate set".to_string(),
                });
            }
            kept
        } else {
            current
        };
        let mut final_codes = final_codes;
        final_codes.sort_by(|a, b| a.code.cmp(&b.code));
        final_codes.dedup_by(|a, b| a.code == b.code);
        WorkflowResult {
            note_id: self.note.note_id.clone(),
            final_codes,
            transcript: state.transcript,
            adjuster_invoked: state.adjuster_invoked,
            objections: state.objections,
            hallucinations: state.hallucinations,
            status: WorkflowStatus::Complete,
        }
    }

    fn fail(&self, state: RunState, reason: String) -> WorkflowResult {
        WorkflowResult {
            note_id: self.note.note_id.clone(),
            final_codes: Vec::new(),
            transcript: state.transcript,
            adjuster_invoked: state.adjuster_invoked,
            objections: state.objections,
            hallucinations: state.hallucinations,
            status: WorkflowStatus::Failed { reason },
        }
    }
}

/// MAC-I: coder → reviewer (replaces) → patient/physician reviews →
/// adjudication on objection → candidate filter.
pub fn run_mac1(
    note: &NoteRecord,
    cfg: &WorkflowConfig,
    gateway: &dyn CompletionProvider,
    counter: &dyn TokenCounter,
) -> WorkflowResult {
    debug_assert!(cfg.mode == WorkflowMode::Mac1);
    let env = Env::new(note, cfg, gateway, counter);
    let mut state = RunState::default();

    let mut ctx = env.base_ctx();
    ctx.note_text = Some(&note.text);
    let mut current = match env.expect_assignments(&mut state, AgentRole::Coder, &ctx) {
        Ok(codes) => codes,
        Err(reason) => return env.fail(state, reason),
    };

    if env.has(AgentRole::Reviewer) {
        let mut ctx = env.base_ctx();
        ctx.note_text = Some(&note.text);
        ctx.prior_codes = Some(&current);
        // The reviewer's output replaces the coder's, it is not merged.
        current = match env.expect_assignments(&mut state, AgentRole::Reviewer, &ctx) {
            Ok(codes) => codes,
            Err(reason) => return env.fail(state, reason),
        };
    }

    if let Err(reason) = env.run_reviews(&mut state, &current) {
        return env.fail(state, reason);
    }
    match env.maybe_adjudicate(&mut state, current) {
        Ok(final_current) => env.finalize(state, final_current),
        Err(reason) => env.fail(state, reason),
    }
}

/// MAC-II: SOAP conversion (skipped when a cached form exists) → physician
/// generates A+P from S+O → physician v3 compares against the gold A+P and
/// codes → reviews → adjudication → candidate filter.
pub fn run_mac2(
    note: &NoteRecord,
    cached_soap: Option<&SoapNote>,
    cfg: &WorkflowConfig,
    gateway: &dyn CompletionProvider,
    counter: &dyn TokenCounter,
) -> WorkflowResult {
    debug_assert!(cfg.mode == WorkflowMode::Mac2);
    let env = Env::new(note, cfg, gateway, counter);
    let mut state = RunState::default();

    let soap = match cached_soap {
        Some(soap) => soap.clone(),
        None => {
            let mut ctx = env.base_ctx();
            ctx.note_text = Some(&note.text);
            match env.invoke(&mut state, AgentRole::SoapFormatter, &ctx) {
                Ok(TurnPayload::Soap { soap }) => soap,
                Ok(other) => {
                    return env.fail(
                        state,
                        format!("soap_formatter: unexpected payload {other:?}"),
                    )
                }
                Err(reason) => return env.fail(state, reason),
            }
        }
    };
    if soap.is_degenerate() {
        return env.fail(
            state,
            "degenerate SOAP conversion: subjective and objective are both empty".to_string(),
        );
    }

    let generated = if env.has(AgentRole::PhysicianV2) {
        let mut ctx = env.base_ctx();
        ctx.subjective = Some(&soap.subjective);
        ctx.objective = Some(&soap.objective);
        match env.invoke(&mut state, AgentRole::PhysicianV2, &ctx) {
            Ok(TurnPayload::Soap { soap }) => soap,
            Ok(other) => {
                return env.fail(state, format!("physician_v2: unexpected payload {other:?}"))
            }
            Err(reason) => return env.fail(state, reason),
        }
    } else {
        SoapNote {
            note_id: note.note_id.clone(),
            ..Default::default()
        }
    };

    let mut ctx = env.base_ctx();
    ctx.generated_assessment = Some(&generated.assessment);
    ctx.generated_plan = Some(&generated.plan);
    ctx.gold_assessment = Some(&soap.assessment);
    ctx.gold_plan = Some(&soap.plan);
    let current = match env.expect_assignments(&mut state, AgentRole::PhysicianV3, &ctx) {
        Ok(codes) => codes,
        Err(reason) => return env.fail(state, reason),
    };

    if let Err(reason) = env.run_reviews(&mut state, &current) {
        return env.fail(state, reason);
    }
    match env.maybe_adjudicate(&mut state, current) {
        Ok(final_current) => env.finalize(state, final_current),
        Err(reason) => env.fail(state, reason),
    }
}

/// Dispatch on the configured mode.
pub fn run_workflow(
    note: &NoteRecord,
    cached_soap: Option<&SoapNote>,
    cfg: &WorkflowConfig,
    gateway: &dyn CompletionProvider,
    counter: &dyn TokenCounter,
) -> WorkflowResult {
    match cfg.mode {
        WorkflowMode::Mac1 => run_mac1(note, cfg, gateway, counter),
        WorkflowMode::Mac2 => run_mac2(note, cached_soap, cfg, gateway, counter),
    }
}
