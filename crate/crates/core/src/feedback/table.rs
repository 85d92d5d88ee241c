use serde::Serialize;

use super::{FeedbackTable, TaskItem, TaskStatus};

/// Number of rows with status ERROR. IN PROGRESS rows are not errors.
pub fn error_count(table: &FeedbackTable) -> usize {
    table
        .tasks
        .iter()
        .filter(|t| t.status == TaskStatus::Error)
        .count()
}

#[derive(Serialize)]
struct Wire<'a> {
    tasks: &'a [TaskItem],
}

/// Canonical JSON for a table: a top-level `"tasks"` array whose elements
/// carry `Task`, `Evidence`, `Category` (V2 only) and `Status`, pretty-printed
/// with two-space indentation. An empty table is `{"tasks": []}`.
pub fn serialize_table(table: &FeedbackTable) -> String {
    if table.tasks.is_empty() {
        return r#"{"tasks": []}"#.to_string();
    }
    serde_json::to_string_pretty(&Wire { tasks: &table.tasks })
        .expect("task rows are plain strings and always serialize")
}
