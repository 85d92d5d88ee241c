use std::fmt;

use serde_json::{Map, Value};
use thiserror::Error;

use super::{FeedbackTable, PromptVersion, TaskCategory, TaskItem, TaskStatus, NO_EVIDENCE, TASK_IN_PROGRESS};

/// A field of a task object, as named on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    /// The array element itself.
    Element,
    Task,
    Evidence,
    Category,
    Status,
}

impl Field {
    pub fn key(self) -> &'static str {
        match self {
            Field::Element => "<element>",
            Field::Task => "Task",
            Field::Evidence => "Evidence",
            Field::Category => "Category",
            Field::Status => "Status",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationReason {
    NotAnObject,
    Missing,
    NotAString,
    Empty,
    UnknownValue(String),
    /// Valid value, but not under this prompt version.
    NotAllowedInVersion(PromptVersion),
}

impl fmt::Display for ViolationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationReason::NotAnObject => f.write_str("element is not an object"),
            ViolationReason::Missing => f.write_str("missing"),
            ViolationReason::NotAString => f.write_str("not a string"),
            ViolationReason::Empty => f.write_str("empty"),
            ViolationReason::UnknownValue(v) => write!(f, "unknown value `{v}`"),
            ViolationReason::NotAllowedInVersion(v) => write!(f, "not allowed under prompt {v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no JSON object with a \"tasks\" array found in provider output")]
    NoJsonFound,
    #[error("task {index}: field {field}: {reason}")]
    SchemaViolation {
        index: usize,
        field: Field,
        reason: ViolationReason,
    },
}

impl ParseError {
    fn violation(index: usize, field: Field, reason: ViolationReason) -> Self {
        ParseError::SchemaViolation { index, field, reason }
    }
}

/// Parses provider output into a validated table.
///
/// The output may wrap the JSON in code fences or prose. The first balanced
/// `{...}` block that parses as an object with a top-level `"tasks"` array is
/// used; every element is validated against `version`'s schema. Unknown keys
/// are ignored.
pub fn parse_feedback(
    raw: &str,
    version: PromptVersion,
    provider_id: &str,
) -> Result<FeedbackTable, ParseError> {
    let object = extract_tasks_object(raw).ok_or(ParseError::NoJsonFound)?;
    let Some(Value::Array(elements)) = object.get("tasks") else {
        unreachable!("extract_tasks_object only yields objects with a tasks array");
    };
    let tasks = elements
        .iter()
        .enumerate()
        .map(|(i, element)| parse_task(i, element, version))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeedbackTable {
        tasks,
        prompt_version: version,
        provider_id: provider_id.to_string(),
        raw_response: raw.to_string(),
    })
}

/// Finds the first JSON object in `raw` that has a top-level `"tasks"` array.
pub fn extract_tasks_object(raw: &str) -> Option<Map<String, Value>> {
    let bytes = raw.as_bytes();
    for (start, _) in raw.match_indices('{') {
        let Some(end) = balanced_end(bytes, start) else {
            continue;
        };
        if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(&raw[start..=end]) {
            if matches!(map.get("tasks"), Some(Value::Array(_))) {
                return Some(map);
            }
        }
    }
    None
}

/// Index of the `}` closing the brace at `start`, honouring JSON strings.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + offset);
                }
            }
            _ => {}
        }
    }
    None
}

fn lookup(obj: &Map<String, Value>, field: Field) -> Option<&Value> {
    let key = field.key();
    obj.get(key).or_else(|| {
        obj.iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(key))
            .map(|(_, v)| v)
    })
}

fn required_str(
    index: usize,
    obj: &Map<String, Value>,
    field: Field,
) -> Result<&str, ParseError> {
    match lookup(obj, field) {
        None => Err(ParseError::violation(index, field, ViolationReason::Missing)),
        Some(Value::String(s)) if s.trim().is_empty() => {
            Err(ParseError::violation(index, field, ViolationReason::Empty))
        }
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(ParseError::violation(index, field, ViolationReason::NotAString)),
    }
}

fn parse_task(index: usize, element: &Value, version: PromptVersion) -> Result<TaskItem, ParseError> {
    let Value::Object(obj) = element else {
        return Err(ParseError::violation(index, Field::Element, ViolationReason::NotAnObject));
    };
    let task = required_str(index, obj, Field::Task)?;
    let evidence = required_str(index, obj, Field::Evidence)?;

    let category = if version.has_categories() {
        let raw = required_str(index, obj, Field::Category)?;
        Some(TaskCategory::parse_lenient(raw).ok_or_else(|| {
            ParseError::violation(index, Field::Category, ViolationReason::UnknownValue(raw.to_string()))
        })?)
    } else {
        if lookup(obj, Field::Category).is_some() {
            return Err(ParseError::violation(
                index,
                Field::Category,
                ViolationReason::NotAllowedInVersion(version),
            ));
        }
        None
    };

    let raw_status = required_str(index, obj, Field::Status)?;
    let status = TaskStatus::parse_lenient(raw_status).ok_or_else(|| {
        ParseError::violation(index, Field::Status, ViolationReason::UnknownValue(raw_status.to_string()))
    })?;
    if status == TaskStatus::InProgress && !version.allows_in_progress() {
        return Err(ParseError::violation(
            index,
            Field::Status,
            ViolationReason::NotAllowedInVersion(version),
        ));
    }

    Ok(TaskItem {
        task: task.to_string(),
        evidence: canonical_evidence(evidence, status),
        category,
        status,
    })
}

/// Maps near-miss sentinels (`"No evidence could be identified."`) to the
/// canonical strings; any other evidence text is kept verbatim.
fn canonical_evidence(evidence: &str, status: TaskStatus) -> String {
    let sentinel = match status {
        TaskStatus::Error => NO_EVIDENCE,
        TaskStatus::InProgress => TASK_IN_PROGRESS,
        TaskStatus::Ok => return evidence.to_string(),
    };
    let stripped = evidence.trim().trim_end_matches('.').trim_end();
    if stripped.eq_ignore_ascii_case(sentinel) {
        sentinel.to_string()
    } else {
        evidence.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_TASK: &str =
        r#"{"tasks":[{"Task":"Implemented login","Evidence":"repo link","Status":"OK"}]}"#;

    #[test]
    fn empty_list() {
        let t = parse_feedback(r#"{"tasks": []}"#, PromptVersion::V1, "p").unwrap();
        assert!(t.tasks.is_empty());
        assert_eq!(t.prompt_version, PromptVersion::V1);
        assert_eq!(t.provider_id, "p");
    }

    #[test]
    fn fenced_block_with_prose() {
        let raw = format!("Sure! Here is the analysis:\n```json\n{ONE_TASK}\n```\nLet me know.");
        let t = parse_feedback(&raw, PromptVersion::V1, "p").unwrap();
        assert_eq!(
            t.tasks,
            vec![TaskItem {
                task: "Implemented login".into(),
                evidence: "repo link".into(),
                category: None,
                status: TaskStatus::Ok,
            }]
        );
        assert_eq!(t.raw_response, raw);
    }

    #[test]
    fn unknown_status_is_violation() {
        let raw = r#"{"tasks":[{"Task":"x","Evidence":"y","Status":"MAYBE"}]}"#;
        assert_eq!(
            parse_feedback(raw, PromptVersion::V1, "p"),
            Err(ParseError::SchemaViolation {
                index: 0,
                field: Field::Status,
                reason: ViolationReason::UnknownValue("MAYBE".into()),
            })
        );
    }

    #[test]
    fn no_json() {
        assert_eq!(parse_feedback("I could not do it", PromptVersion::V1, "p"), Err(ParseError::NoJsonFound));
        assert_eq!(parse_feedback("{\"tasks\": [", PromptVersion::V1, "p"), Err(ParseError::NoJsonFound));
        assert_eq!(parse_feedback("{\"tasks\": 3}", PromptVersion::V1, "p"), Err(ParseError::NoJsonFound));
    }

    #[test]
    fn skips_objects_without_tasks() {
        let raw = format!("{{note}} then {{\"meta\": 1}} and finally {ONE_TASK}");
        let t = parse_feedback(&raw, PromptVersion::V1, "p").unwrap();
        assert_eq!(t.tasks.len(), 1);
    }

    #[test]
    fn braces_inside_strings() {
        let raw = r#"{"tasks":[{"Task":"wrote } and {","Evidence":"a \"}\" b","Status":"ERROR"}]}"#;
        let t = parse_feedback(raw, PromptVersion::V1, "p").unwrap();
        assert_eq!(t.tasks[0].task, "wrote } and {");
        assert_eq!(t.tasks[0].evidence, "a \"}\" b");
    }

    #[test]
    fn version_gating() {
        let cat = r#"{"tasks":[{"Task":"x","Evidence":"y","Category":"Study","Status":"OK"}]}"#;
        assert_eq!(
            parse_feedback(cat, PromptVersion::V1, "p"),
            Err(ParseError::SchemaViolation {
                index: 0,
                field: Field::Category,
                reason: ViolationReason::NotAllowedInVersion(PromptVersion::V1),
            })
        );
        let prog = r#"{"tasks":[{"Task":"x","Evidence":"Task in progress","Status":"IN PROGRESS"}]}"#;
        assert_eq!(
            parse_feedback(prog, PromptVersion::V1, "p"),
            Err(ParseError::SchemaViolation {
                index: 0,
                field: Field::Status,
                reason: ViolationReason::NotAllowedInVersion(PromptVersion::V1),
            })
        );
        let missing_cat = r#"{"tasks":[{"Task":"x","Evidence":"y","Status":"OK"}]}"#;
        assert!(matches!(
            parse_feedback(missing_cat, PromptVersion::V2, "p"),
            Err(ParseError::SchemaViolation { field: Field::Category, reason: ViolationReason::Missing, .. })
        ));
        let bad_cat = r#"{"tasks":[{"Task":"x","Evidence":"y","Category":"Lunch","Status":"OK"}]}"#;
        assert!(matches!(
            parse_feedback(bad_cat, PromptVersion::V2, "p"),
            Err(ParseError::SchemaViolation { field: Field::Category, reason: ViolationReason::UnknownValue(_), .. })
        ));
    }

    #[test]
    fn v2_normalizes_category_and_status() {
        let raw = r#"{"tasks":[
            {"Task":"a","Evidence":"Task in progress.","Category":"Study.","Status":"In_Progress"},
            {"Task":"b","Evidence":"No evidence could be identified.","Category":"meeting","Status":"error."}
        ]}"#;
        let t = parse_feedback(raw, PromptVersion::V2, "p").unwrap();
        assert_eq!(t.tasks[0].category, Some(TaskCategory::Study));
        assert_eq!(t.tasks[0].status, TaskStatus::InProgress);
        assert_eq!(t.tasks[0].evidence, TASK_IN_PROGRESS);
        assert_eq!(t.tasks[1].category, Some(TaskCategory::Meeting));
        assert_eq!(t.tasks[1].status, TaskStatus::Error);
        assert_eq!(t.tasks[1].evidence, NO_EVIDENCE);
    }

    #[test]
    fn missing_and_mistyped_fields() {
        let cases = [
            (r#"{"tasks":[{"Evidence":"y","Status":"OK"}]}"#, Field::Task, ViolationReason::Missing),
            (r#"{"tasks":[{"Task":"x","Status":"OK"}]}"#, Field::Evidence, ViolationReason::Missing),
            (r#"{"tasks":[{"Task":"x","Evidence":"y"}]}"#, Field::Status, ViolationReason::Missing),
            (r#"{"tasks":[{"Task":7,"Evidence":"y","Status":"OK"}]}"#, Field::Task, ViolationReason::NotAString),
            (r#"{"tasks":[{"Task":" ","Evidence":"y","Status":"OK"}]}"#, Field::Task, ViolationReason::Empty),
            (r#"{"tasks":["x"]}"#, Field::Element, ViolationReason::NotAnObject),
        ];
        for (raw, field, reason) in cases {
            assert_eq!(
                parse_feedback(raw, PromptVersion::V1, "p"),
                Err(ParseError::SchemaViolation { index: 0, field, reason }),
                "{raw}"
            );
        }
    }

    #[test]
    fn violation_index_points_at_offending_element() {
        let raw = r#"{"tasks":[
            {"Task":"x","Evidence":"y","Status":"OK"},
            {"Task":"x","Evidence":"y","Status":"OK"},
            {"Task":"x","Evidence":"y","Status":"NOPE"}]}"#;
        assert!(matches!(
            parse_feedback(raw, PromptVersion::V1, "p"),
            Err(ParseError::SchemaViolation { index: 2, field: Field::Status, .. })
        ));
    }

    #[test]
    fn extra_keys_ignored_and_keys_case_insensitive() {
        let raw = r#"{"tasks":[{"task":"x","EVIDENCE":"y","Status":"OK","Confidence":0.4}]}"#;
        let t = parse_feedback(raw, PromptVersion::V1, "p").unwrap();
        assert_eq!(t.tasks[0].task, "x");
        assert_eq!(t.tasks[0].evidence, "y");
    }
}
