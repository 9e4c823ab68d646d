//! Multi-agent ICD-9 coding engine.
//!
//! Five LLM-backed roles (patient, physician, coder, reviewer, adjuster)
//! cooperate and contest code assignments over clinical notes through two
//! workflow modes: MAC-I, where the coder leads and the reviewer revises,
//! and MAC-II, where a physician regenerates the assessment-and-plan from
//! the SOAP structure and self-corrects before coding. The crate also ships
//! the supporting pieces a full run needs: the ICD-9 code universe and
//! external-knowledge blocks, corpus ingestion with top-k/rare subset
//! construction, a completion gateway with caching and deterministic replay,
//! and multi-label plus evidence-matching evaluation.

pub mod agents;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod icd;
pub mod workflow;

pub use agents::{AgentRole, CodeAssignment, GatewayParams};
pub use corpus::{Corpus, NoteRecord, SoapNote};
pub use gateway::{CacheProvider, CompletionProvider, ReplayProvider};
pub use icd::{CandidateSet, CodeDictionary};
pub use workflow::{run_batch, WorkflowConfig, WorkflowMode, WorkflowResult};
