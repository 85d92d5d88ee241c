//! Usage funnel, interaction histograms and task/category distributions
//! computed from a round's interaction records.
//!
//! Every function is a pure function of the record slice; records of other
//! rounds are ignored.

pub mod export;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::{FeedbackTable, PromptVersion, TaskCategory};
use crate::store::{InteractionKind, InteractionRecord};

/// Students with more tasks than this are flagged [`OutlierReason::TooMany`].
pub const TOO_MANY_TASKS_ABOVE: usize = 8;
/// Students with exactly this many tasks are flagged [`OutlierReason::TooFew`].
pub const TOO_FEW_TASKS: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyticsError {
    #[error("round `{0}` has no submissions to normalize by")]
    NormalizationImpossible(String),
    #[error("round `{round_id}` ran prompt {version}, which has no task categories")]
    VersionUnsupported { round_id: String, version: PromptVersion },
}

/// Per-student view of one round, in timestamp order.
#[derive(Debug, Default, Clone)]
struct StudentActivity<'a> {
    submissions: usize,
    requests: usize,
    tables: Vec<&'a FeedbackTable>,
}

impl StudentActivity<'_> {
    fn first_errors(&self) -> Option<usize> {
        self.tables.first().map(|t| t.error_count())
    }

    fn last_errors(&self) -> Option<usize> {
        self.tables.last().map(|t| t.error_count())
    }

    /// Last table strictly fewer errors than the first.
    fn corrected(&self) -> bool {
        self.tables.len() >= 2
            && matches!((self.first_errors(), self.last_errors()), (Some(f), Some(l)) if l < f)
    }
}

fn activity<'a>(records: &'a [InteractionRecord], round_id: &str) -> BTreeMap<&'a str, StudentActivity<'a>> {
    let mut sorted: Vec<&InteractionRecord> = records.iter().filter(|r| r.round_id == round_id).collect();
    sorted.sort_by_key(|a| (a.timestamp, a.record_id));
    let mut out: BTreeMap<&str, StudentActivity> = BTreeMap::new();
    for r in sorted {
        let entry = out.entry(r.student_id.as_str()).or_default();
        match r.kind {
            InteractionKind::FinalSubmission => entry.submissions += 1,
            InteractionKind::FeedbackRequest => {
                entry.requests += 1;
                if let Some(t) = &r.table {
                    entry.tables.push(t);
                }
            }
        }
    }
    out
}

/// Four nested stages of the usage funnel for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelStats {
    pub round_id: String,
    /// Students with at least one final submission.
    pub submitted: usize,
    /// Submitters with at least one feedback request.
    pub used: usize,
    /// Submitters with at least two feedback requests.
    pub interacted: usize,
    /// Interacting submitters whose last table has fewer errors than their first.
    pub corrected: usize,
    /// Fraction lost at submitted→used, used→interacted, interacted→corrected;
    /// `None` when the earlier stage is empty.
    pub attrition: [Option<f64>; 3],
    /// Students who requested feedback but never submitted. Not part of the funnel.
    pub used_without_submitting: usize,
}

impl FunnelStats {
    pub fn stages(&self) -> [usize; 4] {
        [self.submitted, self.used, self.interacted, self.corrected]
    }

    pub const STAGE_NAMES: [&'static str; 4] = ["submitted", "used", "interacted", "corrected"];
}

fn attrition(from: usize, to: usize) -> Option<f64> {
    (from > 0).then(|| 1.0 - to as f64 / from as f64)
}

pub fn compute_funnel(records: &[InteractionRecord], round_id: &str) -> FunnelStats {
    let students = activity(records, round_id);
    let mut stats = FunnelStats {
        round_id: round_id.to_string(),
        submitted: 0,
        used: 0,
        interacted: 0,
        corrected: 0,
        attrition: [None; 3],
        used_without_submitting: 0,
    };
    for a in students.values() {
        if a.submissions == 0 {
            if a.requests > 0 {
                stats.used_without_submitting += 1;
            }
            continue;
        }
        stats.submitted += 1;
        if a.requests >= 1 {
            stats.used += 1;
        }
        if a.requests >= 2 {
            stats.interacted += 1;
            if a.corrected() {
                stats.corrected += 1;
            }
        }
    }
    stats.attrition = [
        attrition(stats.submitted, stats.used),
        attrition(stats.used, stats.interacted),
        attrition(stats.interacted, stats.corrected),
    ];
    stats
}

/// Number of students per feedback-request count (students with zero
/// requests are not bucketed).
pub fn interaction_counts(records: &[InteractionRecord], round_id: &str) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for a in activity(records, round_id).values().filter(|a| a.requests > 0) {
        *hist.entry(a.requests).or_insert(0) += 1;
    }
    hist
}

/// [`interaction_counts`] as values, optionally divided by the round's
/// number of submitting students.
pub fn interaction_histogram(
    records: &[InteractionRecord],
    round_id: &str,
    normalized: bool,
) -> Result<BTreeMap<usize, f64>, AnalyticsError> {
    let counts = interaction_counts(records, round_id);
    let divisor = if normalized {
        let submitted = compute_funnel(records, round_id).submitted;
        if submitted == 0 {
            return Err(AnalyticsError::NormalizationImpossible(round_id.to_string()));
        }
        submitted as f64
    } else {
        1.0
    };
    Ok(counts.into_iter().map(|(k, v)| (k, v as f64 / divisor)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutlierReason {
    TooMany,
    TooFew,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskOutlier {
    pub student_id: String,
    pub count: usize,
    pub reason: OutlierReason,
}

pub fn classify_task_count(count: usize) -> Option<OutlierReason> {
    if count > TOO_MANY_TASKS_ABOVE {
        Some(OutlierReason::TooMany)
    } else if count == TOO_FEW_TASKS {
        Some(OutlierReason::TooFew)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDistribution {
    pub round_id: String,
    pub per_student_task_count: BTreeMap<String, usize>,
    /// Task count → number of students.
    pub histogram: BTreeMap<usize, usize>,
    pub outliers: Vec<TaskOutlier>,
    /// Submitters without any successful feedback request.
    pub uncovered: Vec<String>,
}

/// Task counts of submitting students, taken from their last successful
/// feedback table.
pub fn task_distribution(records: &[InteractionRecord], round_id: &str) -> TaskDistribution {
    let mut dist = TaskDistribution {
        round_id: round_id.to_string(),
        per_student_task_count: BTreeMap::new(),
        histogram: BTreeMap::new(),
        outliers: Vec::new(),
        uncovered: Vec::new(),
    };
    for (student, a) in activity(records, round_id) {
        if a.submissions == 0 {
            continue;
        }
        let Some(last) = a.tables.last() else {
            dist.uncovered.push(student.to_string());
            continue;
        };
        let count = last.tasks.len();
        dist.per_student_task_count.insert(student.to_string(), count);
        *dist.histogram.entry(count).or_insert(0) += 1;
        if let Some(reason) = classify_task_count(count) {
            dist.outliers.push(TaskOutlier {
                student_id: student.to_string(),
                count,
                reason,
            });
        }
    }
    dist
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryDistribution {
    pub round_id: String,
    /// Distinct categories (0..=5) in each submitter's last successful table.
    pub per_student_category_count: BTreeMap<String, usize>,
    /// Distinct-category count → number of students.
    pub histogram: BTreeMap<usize, usize>,
    /// How many covered students touched each category at least once.
    pub students_per_category: BTreeMap<TaskCategory, usize>,
    pub uncovered: Vec<String>,
}

/// Distinct task categories per submitting student. Only defined for rounds
/// whose tables come from the V2 prompt.
pub fn category_distribution(
    records: &[InteractionRecord],
    round_id: &str,
) -> Result<CategoryDistribution, AnalyticsError> {
    let v1_table = records
        .iter()
        .filter(|r| r.round_id == round_id)
        .filter_map(|r| r.table.as_ref())
        .find(|t| !t.prompt_version.has_categories());
    if let Some(t) = v1_table {
        return Err(AnalyticsError::VersionUnsupported {
            round_id: round_id.to_string(),
            version: t.prompt_version,
        });
    }

    let mut dist = CategoryDistribution {
        round_id: round_id.to_string(),
        per_student_category_count: BTreeMap::new(),
        histogram: BTreeMap::new(),
        students_per_category: BTreeMap::new(),
        uncovered: Vec::new(),
    };
    for (student, a) in activity(records, round_id) {
        if a.submissions == 0 {
            continue;
        }
        let Some(last) = a.tables.last() else {
            dist.uncovered.push(student.to_string());
            continue;
        };
        let distinct: BTreeSet<TaskCategory> = last.tasks.iter().filter_map(|t| t.category).collect();
        for c in &distinct {
            *dist.students_per_category.entry(*c).or_insert(0) += 1;
        }
        dist.per_student_category_count.insert(student.to_string(), distinct.len());
        *dist.histogram.entry(distinct.len()).or_insert(0) += 1;
    }
    Ok(dist)
}
