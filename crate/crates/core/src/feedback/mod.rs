//! Feedback tables: domain types, prompt construction, response parsing and
//! the canonical JSON table format.

mod parse;
mod prompt;
mod table;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use parse::{extract_tasks_object, parse_feedback, Field, ParseError, ViolationReason};
pub use prompt::{build_prompt, system_prompt, DraftError};
pub use table::{error_count, serialize_table};

/// Longest accepted draft, in Unicode scalar values.
pub const MAX_DRAFT_CHARS: usize = 2100;

/// Evidence sentinel for tasks without acceptable evidence.
pub const NO_EVIDENCE: &str = "No evidence could be identified";

/// Evidence sentinel for tasks reported as ongoing (V2 only).
pub const TASK_IN_PROGRESS: &str = "Task in progress";

/// Which system prompt produced a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVersion {
    /// Tasks, evidence and OK/ERROR.
    V1,
    /// Adds the five task categories and the IN PROGRESS status.
    V2,
}

impl PromptVersion {
    pub const ALL: [PromptVersion; 2] = [PromptVersion::V1, PromptVersion::V2];

    pub fn has_categories(self) -> bool {
        matches!(self, PromptVersion::V2)
    }

    pub fn allows_in_progress(self) -> bool {
        matches!(self, PromptVersion::V2)
    }
}

impl fmt::Display for PromptVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptVersion::V1 => "v1",
            PromptVersion::V2 => "v2",
        })
    }
}

impl FromStr for PromptVersion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "v1" | "1" => Ok(PromptVersion::V1),
            "v2" | "2" => Ok(PromptVersion::V2),
            other => Err(format!("unknown prompt version `{other}` (expected v1 or v2)")),
        }
    }
}

/// Status of one task row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskStatus {
    Ok,
    Error,
    InProgress,
}

impl TaskStatus {
    pub const ALL: [TaskStatus; 3] = [TaskStatus::Ok, TaskStatus::Error, TaskStatus::InProgress];

    /// Canonical wire form: `OK`, `ERROR` or `IN PROGRESS`.
    pub fn as_str(self) -> &'static str {
        match self {
            TaskStatus::Ok => "OK",
            TaskStatus::Error => "ERROR",
            TaskStatus::InProgress => "IN PROGRESS",
        }
    }

    /// Lenient parse: case-insensitive, `_`/`-`/space interchangeable,
    /// trailing punctuation ignored (the prompts themselves write `"ERROR."`).
    pub fn parse_lenient(raw: &str) -> Option<TaskStatus> {
        let folded = fold_token(raw);
        match folded.as_str() {
            "OK" => Some(TaskStatus::Ok),
            "ERROR" => Some(TaskStatus::Error),
            "IN PROGRESS" => Some(TaskStatus::InProgress),
            _ => None,
        }
    }
}

impl fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for TaskStatus {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TaskStatus {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        TaskStatus::parse_lenient(&raw)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown status `{raw}`")))
    }
}

/// Task category, only produced by the V2 prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskCategory {
    Study,
    Implementation,
    Writing,
    Organization,
    Meeting,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 5] = [
        TaskCategory::Study,
        TaskCategory::Implementation,
        TaskCategory::Writing,
        TaskCategory::Organization,
        TaskCategory::Meeting,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskCategory::Study => "Study",
            TaskCategory::Implementation => "Implementation",
            TaskCategory::Writing => "Writing",
            TaskCategory::Organization => "Organization",
            TaskCategory::Meeting => "Meeting",
        }
    }

    /// Case-insensitive, tolerant of trailing punctuation (`"Study."`).
    pub fn parse_lenient(raw: &str) -> Option<TaskCategory> {
        let folded = fold_token(raw);
        TaskCategory::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(&folded))
    }
}

impl fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for TaskCategory {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TaskCategory {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        TaskCategory::parse_lenient(&raw)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown category `{raw}`")))
    }
}

/// Uppercases, maps `_`/`-` to spaces, collapses whitespace and drops
/// trailing punctuation.
fn fold_token(raw: &str) -> String {
    let trimmed = raw
        .trim()
        .trim_end_matches(|c: char| c.is_ascii_punctuation() && c != ')')
        .trim();
    let spaced: String = trimmed
        .chars()
        .map(|c| if c == '_' || c == '-' { ' ' } else { c.to_ascii_uppercase() })
        .collect();
    spaced.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One row of a feedback table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskItem {
    #[serde(rename = "Task")]
    pub task: String,
    #[serde(rename = "Evidence")]
    pub evidence: String,
    #[serde(rename = "Category", default, skip_serializing_if = "Option::is_none")]
    pub category: Option<TaskCategory>,
    #[serde(rename = "Status")]
    pub status: TaskStatus,
}

/// Ordered task rows plus where they came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackTable {
    pub tasks: Vec<TaskItem>,
    pub prompt_version: PromptVersion,
    pub provider_id: String,
    /// Provider output exactly as received.
    pub raw_response: String,
}

impl FeedbackTable {
    pub fn error_count(&self) -> usize {
        error_count(self)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// A student's report draft for one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportDraft {
    pub text: String,
    pub student_id: String,
    pub round_id: String,
    pub created_at: DateTime<Utc>,
}

impl ReportDraft {
    pub fn new(text: impl Into<String>, student_id: impl Into<String>, round_id: impl Into<String>) -> Self {
        ReportDraft {
            text: text.into(),
            student_id: student_id.into(),
            round_id: round_id.into(),
            created_at: Utc::now(),
        }
    }

    /// Length in Unicode scalar values.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    pub fn validate(&self) -> Result<(), DraftError> {
        validate_draft_text(&self.text)
    }
}

/// Checks the draft is non-blank and at most [`MAX_DRAFT_CHARS`] characters.
pub fn validate_draft_text(text: &str) -> Result<(), DraftError> {
    if text.trim().is_empty() {
        return Err(DraftError::EmptyDraft);
    }
    let len = text.chars().count();
    if len > MAX_DRAFT_CHARS {
        return Err(DraftError::DraftTooLong(len));
    }
    Ok(())
}
