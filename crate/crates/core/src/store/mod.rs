//! Append-only log of student interactions.
//!
//! Every feedback request and final submission becomes one immutable
//! [`InteractionRecord`]. [`JsonlStore`] persists them as one JSON object per
//! line, one file per round; [`MemoryStore`] keeps them in memory for tests
//! and analytics over generated cohorts.

mod jsonl;
mod state;

use std::fmt;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::feedback::{FeedbackTable, PromptVersion};

pub use jsonl::{read_round_file, JsonlStore, LogLine};
use state::StoreState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(pub u64);

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    FeedbackRequest,
    FinalSubmission,
}

/// A record before the store has assigned its id.
#[derive(Debug, Clone, PartialEq)]
pub struct NewRecord {
    pub student_id: String,
    pub round_id: String,
    pub kind: InteractionKind,
    pub draft_text: String,
    /// Present only for feedback requests that got a parsed table.
    pub table: Option<FeedbackTable>,
    /// Prompt version in force, also for failed requests.
    pub prompt_version: Option<PromptVersion>,
    /// Why the provider failed, for feedback requests without a table.
    pub provider_error: Option<String>,
    /// Raw provider output kept for failed requests where an answer arrived.
    pub raw_response: Option<String>,
    pub timestamp: DateTime<Utc>,
}

impl NewRecord {
    pub fn feedback(student_id: &str, round_id: &str, draft_text: &str, table: FeedbackTable) -> Self {
        NewRecord {
            student_id: student_id.to_string(),
            round_id: round_id.to_string(),
            kind: InteractionKind::FeedbackRequest,
            draft_text: draft_text.to_string(),
            prompt_version: Some(table.prompt_version),
            table: Some(table),
            provider_error: None,
            raw_response: None,
            timestamp: Utc::now(),
        }
    }

    pub fn failed_feedback(
        student_id: &str,
        round_id: &str,
        draft_text: &str,
        prompt_version: PromptVersion,
        reason: &str,
    ) -> Self {
        NewRecord {
            student_id: student_id.to_string(),
            round_id: round_id.to_string(),
            kind: InteractionKind::FeedbackRequest,
            draft_text: draft_text.to_string(),
            table: None,
            prompt_version: Some(prompt_version),
            provider_error: Some(reason.to_string()),
            raw_response: None,
            timestamp: Utc::now(),
        }
    }

    pub fn submission(student_id: &str, round_id: &str, draft_text: &str) -> Self {
        NewRecord {
            student_id: student_id.to_string(),
            round_id: round_id.to_string(),
            kind: InteractionKind::FinalSubmission,
            draft_text: draft_text.to_string(),
            table: None,
            prompt_version: None,
            provider_error: None,
            raw_response: None,
            timestamp: Utc::now(),
        }
    }

    pub fn at(mut self, timestamp: DateTime<Utc>) -> Self {
        self.timestamp = timestamp;
        self
    }
}

/// One logged interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub record_id: RecordId,
    pub student_id: String,
    pub round_id: String,
    pub kind: InteractionKind,
    pub draft_text: String,
    pub table: Option<FeedbackTable>,
    /// Always `error_count(table)` when a table is present.
    pub error_count: Option<usize>,
    pub prompt_version: Option<PromptVersion>,
    pub provider_error: Option<String>,
    pub raw_response: Option<String>,
    /// Millisecond precision, UTC.
    pub timestamp: DateTime<Utc>,
}

impl InteractionRecord {
    pub fn is_feedback(&self) -> bool {
        self.kind == InteractionKind::FeedbackRequest
    }

    pub fn is_submission(&self) -> bool {
        self.kind == InteractionKind::FinalSubmission
    }

    pub fn draft_sha256(&self) -> String {
        sha256_hex(&self.draft_text)
    }
}

pub(crate) fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage full while writing {path}")]
    StorageFull { path: PathBuf },
    #[error("corrupt store {path}: line {line} (byte offset {offset}): {reason}")]
    CorruptStore {
        path: PathBuf,
        line: usize,
        offset: u64,
        reason: String,
    },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Storage backend for interaction records.
pub trait EventStore: Send + Sync {
    /// Appends a record and returns the id assigned to it.
    fn append(&self, record: NewRecord) -> Result<RecordId, StoreError>;

    /// Records of a round, optionally narrowed to one student and/or kind,
    /// ordered by timestamp then id.
    fn query(
        &self,
        round_id: &str,
        student_id: Option<&str>,
        kind: Option<InteractionKind>,
    ) -> Result<Vec<InteractionRecord>, StoreError>;

    /// Round ids with at least one record, sorted.
    fn rounds(&self) -> Result<Vec<String>, StoreError>;

    /// Total number of records across all rounds.
    fn len(&self) -> Result<usize, StoreError>;

    fn is_empty(&self) -> Result<bool, StoreError> {
        Ok(self.len()? == 0)
    }
}

/// Round ids become file names, so they are restricted to `[A-Za-z0-9_.-]`
/// and may not start with a dot.
pub fn valid_round_id(round_id: &str) -> bool {
    !round_id.is_empty()
        && round_id.len() <= 128
        && !round_id.starts_with('.')
        && round_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// In-memory store.
#[derive(Debug, Default)]
pub struct MemoryStore {
    state: std::sync::Mutex<StoreState>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store pre-filled with `records` in order.
    pub fn with_records(records: impl IntoIterator<Item = NewRecord>) -> Result<Self, StoreError> {
        let store = Self::new();
        for r in records {
            store.append(r)?;
        }
        Ok(store)
    }

    /// Every record of every round.
    pub fn all(&self) -> Vec<InteractionRecord> {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).all()
    }
}

impl EventStore for MemoryStore {
    fn append(&self, record: NewRecord) -> Result<RecordId, StoreError> {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let record = state.prepare(record)?;
        Ok(state.commit(record))
    }

    fn query(
        &self,
        round_id: &str,
        student_id: Option<&str>,
        kind: Option<InteractionKind>,
    ) -> Result<Vec<InteractionRecord>, StoreError> {
        Ok(self
            .state
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .query(round_id, student_id, kind))
    }

    fn rounds(&self) -> Result<Vec<String>, StoreError> {
        Ok(self.state.lock().unwrap_or_else(|e| e.into_inner()).rounds())
    }

    fn len(&self) -> Result<usize, StoreError> {
        Ok(self.state.lock().unwrap_or_else(|e| e.into_inner()).len())
    }
}
