//! Formative feedback on short progress reports.
//!
//! The crate turns a report draft into a task/evidence/status table, either
//! through a chat-completion LLM or through a deterministic rule oracle,
//! records every interaction in an append-only log and computes the usage
//! funnel and task statistics over that log.
//!
//! Module map:
//!
//! * [`feedback`] – prompt resources, response parsing and the canonical table format.
//! * [`mock`] – the rule oracle that answers drafts written in a small line grammar.
//! * [`gateway`] – provider configuration, the HTTP chat-completion client and retries.
//! * [`store`] – the JSONL interaction log.
//! * [`analytics`] – funnel, histograms, task and category distributions, exports.
//! * [`synth`] – seeded synthetic cohorts driven through the rule oracle.

pub mod analytics;
pub mod feedback;
pub mod gateway;
pub mod mock;
pub mod store;
pub mod synth;

pub use feedback::{
    build_prompt, error_count, parse_feedback, serialize_table, system_prompt, DraftError,
    FeedbackTable, Field, ParseError, PromptVersion, ReportDraft, TaskCategory, TaskItem,
    TaskStatus, ViolationReason, MAX_DRAFT_CHARS,
};
pub use gateway::{FeedbackGateway, GatewayError, ProviderConfig, ProviderKind};
pub use store::{EventStore, InteractionKind, InteractionRecord, JsonlStore, MemoryStore, NewRecord, RecordId, StoreError};
