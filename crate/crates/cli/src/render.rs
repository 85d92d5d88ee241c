//! Plain-text tables for terminal output.

use std::collections::BTreeMap;
use std::fmt::Write;

use draftcheck_core::analytics::{CategoryDistribution, FunnelStats, TaskDistribution};
use draftcheck_core::FeedbackTable;

pub fn funnel(stats: &[FunnelStats]) -> String {
    let mut out = format!("{:<16} {:<11} {:>6} {:>10}\n", "round", "stage", "count", "attrition");
    for s in stats {
        for (i, (name, count)) in FunnelStats::STAGE_NAMES.iter().zip(s.stages()).enumerate() {
            let attrition = match i.checked_sub(1).and_then(|j| s.attrition[j]) {
                Some(a) => format!("{:.1}%", a * 100.0),
                None => "-".to_string(),
            };
            let _ = writeln!(out, "{:<16} {:<11} {:>6} {:>10}", s.round_id, name, count, attrition);
        }
        if s.used_without_submitting > 0 {
            let _ = writeln!(out, "{:<16} ({} used feedback without submitting)", s.round_id, s.used_without_submitting);
        }
    }
    out
}

pub fn histogram(round: &str, hist: &BTreeMap<usize, f64>, normalized: bool) -> String {
    let mut out = format!("{round}: students per number of feedback requests\n");
    if hist.is_empty() {
        out.push_str("(no feedback requests)\n");
    }
    for (bucket, value) in hist {
        let v = if normalized { format!("{value:.4}") } else { format!("{value}") };
        let _ = writeln!(out, "{bucket:>4} {v:>8}");
    }
    out
}

pub fn tasks(dist: &TaskDistribution) -> String {
    let mut out = format!("{}: tasks per report\n", dist.round_id);
    for (count, students) in &dist.histogram {
        let _ = writeln!(out, "{count:>4} tasks {students:>5} students");
    }
    if dist.outliers.is_empty() {
        out.push_str("no outliers\n");
    }
    for o in &dist.outliers {
        let _ = writeln!(out, "outlier {} {} tasks ({:?})", o.student_id, o.count, o.reason);
    }
    if !dist.uncovered.is_empty() {
        let _ = writeln!(out, "{} submitters without a feedback table", dist.uncovered.len());
    }
    out
}

pub fn categories(dist: &CategoryDistribution) -> String {
    let mut out = format!("{}: distinct categories per report\n", dist.round_id);
    for (count, students) in &dist.histogram {
        let _ = writeln!(out, "{count:>4} categories {students:>5} students");
    }
    for (category, students) in &dist.students_per_category {
        let _ = writeln!(out, "{:<15} {students:>5} students", category.as_str());
    }
    if !dist.uncovered.is_empty() {
        let _ = writeln!(out, "{} submitters without a feedback table", dist.uncovered.len());
    }
    out
}

pub fn table(table: &FeedbackTable) -> String {
    let mut out = String::new();
    for (i, t) in table.tasks.iter().enumerate() {
        let category = t.category.map(|c| format!(" [{}]", c.as_str())).unwrap_or_default();
        let _ = writeln!(out, "{:>2}. {:<11} {}{}", i + 1, t.status.as_str(), t.task, category);
        let _ = writeln!(out, "    evidence: {}", t.evidence);
    }
    let _ = writeln!(out, "{} tasks, {} errors", table.tasks.len(), table.error_count());
    out
}
