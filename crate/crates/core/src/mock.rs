//! Deterministic rule oracle standing in for the LLM.
//!
//! Only lines starting with `-` are read. Each one follows the grammar
//!
//! ```text
//! - <description> [(evidence: <text>)] [(category: <name>)] [(in progress)]
//! ```
//!
//! where the parenthesised clauses may come in any order at the end of the
//! line. Every bullet yields exactly one row, decided by the first matching
//! rule:
//!
//! 1. unauthored: the description mentions `we `, `the group`, `helped` or
//!    `assisted` → ERROR, description kept with the version's unauthored tag;
//! 2. vague: fewer than three words → ERROR, task replaced by the version's
//!    vague marker;
//! 3. missing evidence → IN PROGRESS under V2 when flagged `(in progress)`,
//!    ERROR otherwise. Under V1 evidence must mention produced material
//!    ([`V1_MATERIAL_KEYWORDS`]);
//! 4. otherwise OK.
//!
//! Under V2 every row gets a category: the `(category: ...)` hint when it
//! names a known category, else the first match in [`CATEGORY_KEYWORDS`].
//! This is test infrastructure; it does not try to mimic model judgement.

use crate::feedback::{
    serialize_table, FeedbackTable, PromptVersion, ReportDraft, TaskCategory, TaskItem, TaskStatus,
    NO_EVIDENCE, TASK_IN_PROGRESS,
};

/// Provider id recorded on tables produced by the oracle.
pub const MOCK_PROVIDER_ID: &str = "mock-rules";

pub const UNAUTHORED_MARKERS: [&str; 4] = ["we ", "the group", "helped", "assisted"];

pub const V1_MATERIAL_KEYWORDS: [&str; 8] =
    ["http", "code", "report", "table", "text", "drawing", "repository", "reference"];

/// Checked in order; the first category with a matching keyword wins.
pub const CATEGORY_KEYWORDS: [(TaskCategory, &[&str]); 5] = [
    (TaskCategory::Study, &["study", "research", "test"]),
    (
        TaskCategory::Implementation,
        &["implement", "develop", "prototype", "assemble", "machin"],
    ),
    (TaskCategory::Writing, &["write", "report", "document"]),
    (TaskCategory::Organization, &["organiz", "schedul", "contact"]),
    (TaskCategory::Meeting, &["meeting"]),
];

pub const DEFAULT_CATEGORY: TaskCategory = TaskCategory::Implementation;

/// Minimum word count for a description not to be vague.
pub const MIN_DESCRIPTION_WORDS: usize = 3;

/// One bullet of a structured draft.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StructuredDraftLine {
    pub description: String,
    pub evidence: Option<String>,
    pub category_hint: Option<TaskCategory>,
    pub in_progress: bool,
}

/// Parses every `-` bullet of `text`; other lines are ignored.
pub fn parse_structured_draft(text: &str) -> Vec<StructuredDraftLine> {
    text.lines()
        .filter_map(|line| line.trim_start().strip_prefix('-'))
        .map(parse_line)
        .collect()
}

fn parse_line(body: &str) -> StructuredDraftLine {
    let mut rest = body.trim();
    let mut out = StructuredDraftLine::default();
    while let Some((head, inner)) = split_trailing_group(rest) {
        if let Some(ev) = strip_key(inner, "evidence") {
            let ev = ev.trim();
            if !ev.is_empty() {
                out.evidence = Some(ev.to_string());
            }
        } else if let Some(cat) = strip_key(inner, "category") {
            out.category_hint = TaskCategory::parse_lenient(cat);
        } else if inner.split_whitespace().collect::<Vec<_>>().join(" ").eq_ignore_ascii_case("in progress") {
            out.in_progress = true;
        } else {
            break;
        }
        rest = head.trim_end();
    }
    out.description = rest.to_string();
    out
}

/// `(key: value)` → `value`, matching `key` case-insensitively.
fn strip_key<'a>(inner: &'a str, key: &str) -> Option<&'a str> {
    let trimmed = inner.trim_start();
    let head = trimmed.get(..key.len())?;
    if !head.eq_ignore_ascii_case(key) {
        return None;
    }
    trimmed[key.len()..].trim_start().strip_prefix(':')
}

/// Splits `text` into the part before its final balanced `( ... )` group and
/// the group's contents. `None` if `text` does not end with a balanced group.
fn split_trailing_group(text: &str) -> Option<(&str, &str)> {
    if !text.ends_with(')') {
        return None;
    }
    let mut depth = 0usize;
    for (i, c) in text.char_indices().rev() {
        match c {
            ')' => depth += 1,
            '(' => {
                depth -= 1;
                if depth == 0 {
                    return Some((&text[..i], &text[i + 1..text.len() - 1]));
                }
            }
            _ => {}
        }
    }
    None
}

fn is_unauthored(description: &str) -> bool {
    let lowered = description.to_lowercase();
    UNAUTHORED_MARKERS.iter().any(|m| lowered.contains(m))
}

fn is_vague(description: &str) -> bool {
    description.split_whitespace().count() < MIN_DESCRIPTION_WORDS
}

fn is_material(evidence: &str) -> bool {
    let lowered = evidence.to_lowercase();
    V1_MATERIAL_KEYWORDS.iter().any(|k| lowered.contains(k))
}

/// Category from description keywords, falling back to [`DEFAULT_CATEGORY`].
pub fn keyword_category(description: &str) -> TaskCategory {
    let lowered = description.to_lowercase();
    CATEGORY_KEYWORDS
        .iter()
        .find(|(_, words)| words.iter().any(|w| lowered.contains(w)))
        .map(|(c, _)| *c)
        .unwrap_or(DEFAULT_CATEGORY)
}

fn unauthored_tag(version: PromptVersion) -> &'static str {
    match version {
        PromptVersion::V1 => "(Unauthored task)",
        PromptVersion::V2 => "(Unauthored task: mention only your own actions)",
    }
}

fn vague_marker(version: PromptVersion) -> &'static str {
    match version {
        PromptVersion::V1 => "Vague task",
        PromptVersion::V2 => "(Vague task: be specific about what was done)",
    }
}

/// Applies the oracle's rules to one bullet.
pub fn evaluate_line(line: &StructuredDraftLine, version: PromptVersion) -> TaskItem {
    let usable_evidence = line
        .evidence
        .as_deref()
        .filter(|ev| version == PromptVersion::V2 || is_material(ev));
    let evidence_or_sentinel = usable_evidence.unwrap_or(NO_EVIDENCE).to_string();
    let category = version
        .has_categories()
        .then(|| line.category_hint.unwrap_or_else(|| keyword_category(&line.description)));

    let (task, evidence, status) = if is_unauthored(&line.description) {
        (
            format!("{} {}", line.description, unauthored_tag(version)),
            evidence_or_sentinel,
            TaskStatus::Error,
        )
    } else if is_vague(&line.description) {
        (vague_marker(version).to_string(), evidence_or_sentinel, TaskStatus::Error)
    } else if usable_evidence.is_none() {
        if version.allows_in_progress() && line.in_progress {
            (line.description.clone(), TASK_IN_PROGRESS.to_string(), TaskStatus::InProgress)
        } else {
            (line.description.clone(), NO_EVIDENCE.to_string(), TaskStatus::Error)
        }
    } else {
        (line.description.clone(), evidence_or_sentinel, TaskStatus::Ok)
    };

    TaskItem {
        task,
        evidence,
        category,
        status,
    }
}

/// Oracle feedback as a table.
pub fn mock_table(draft: &ReportDraft, version: PromptVersion) -> FeedbackTable {
    let tasks = parse_structured_draft(&draft.text)
        .iter()
        .map(|line| evaluate_line(line, version))
        .collect();
    let mut table = FeedbackTable {
        tasks,
        prompt_version: version,
        provider_id: MOCK_PROVIDER_ID.to_string(),
        raw_response: String::new(),
    };
    table.raw_response = serialize_table(&table);
    table
}

/// Oracle feedback as provider output text (canonical table JSON).
pub fn mock_feedback(draft: &ReportDraft, version: PromptVersion) -> String {
    mock_table(draft, version).raw_response
}
