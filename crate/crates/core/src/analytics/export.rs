//! CSV exports. JSON exports are the serde forms of the analytics types.
//!
//! Column schemas:
//!
//! | export      | columns                                      |
//! |-------------|----------------------------------------------|
//! | funnel      | `round_id,stage,count,attrition`             |
//! | histogram   | `round_id,bucket,value`                      |
//! | tasks       | `round_id,student_id,task_count,outlier`     |
//! | categories  | `round_id,student_id,category_count`         |
//!
//! `attrition` is empty for the first stage and for stages whose previous
//! stage is empty; `outlier` is `TooMany`, `TooFew` or empty.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{classify_task_count, CategoryDistribution, FunnelStats, TaskDistribution};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramPoint {
    pub bucket: usize,
    pub value: f64,
}

/// Histogram as `(bucket, value)` pairs in bucket order.
pub fn histogram_points(hist: &BTreeMap<usize, f64>) -> Vec<HistogramPoint> {
    hist.iter()
        .map(|(&bucket, &value)| HistogramPoint { bucket, value })
        .collect()
}

/// Integer histogram widened to `f64` values.
pub fn counts_as_f64(hist: &BTreeMap<usize, usize>) -> BTreeMap<usize, f64> {
    hist.iter().map(|(&k, &v)| (k, v as f64)).collect()
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("in-memory CSV writer cannot fail");
    String::from_utf8(bytes).expect("CSV of UTF-8 fields is UTF-8")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn funnel_csv(stats: &[FunnelStats]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["round_id", "stage", "count", "attrition"]).unwrap();
    for s in stats {
        for (i, (name, count)) in FunnelStats::STAGE_NAMES.iter().zip(s.stages()).enumerate() {
            let attrition = if i == 0 { String::new() } else { fmt_opt(s.attrition[i - 1]) };
            w.write_record([s.round_id.as_str(), name, &count.to_string(), &attrition]).unwrap();
        }
    }
    finish(w)
}

pub fn histogram_csv(round_id: &str, hist: &BTreeMap<usize, f64>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["round_id", "bucket", "value"]).unwrap();
    for p in histogram_points(hist) {
        w.write_record([round_id, &p.bucket.to_string(), &p.value.to_string()]).unwrap();
    }
    finish(w)
}

pub fn tasks_csv(dist: &TaskDistribution) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["round_id", "student_id", "task_count", "outlier"]).unwrap();
    for (student, &count) in &dist.per_student_task_count {
        let flag = classify_task_count(count).map(|r| format!("{r:?}")).unwrap_or_default();
        w.write_record([dist.round_id.as_str(), student, &count.to_string(), &flag]).unwrap();
    }
    finish(w)
}

pub fn categories_csv(dist: &CategoryDistribution) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["round_id", "student_id", "category_count"]).unwrap();
    for (student, &count) in &dist.per_student_category_count {
        w.write_record([dist.round_id.as_str(), student, &count.to_string()]).unwrap();
    }
    finish(w)
}
