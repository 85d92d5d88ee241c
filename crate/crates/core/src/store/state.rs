use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::{DateTime, Utc};

use super::{valid_round_id, InteractionKind, InteractionRecord, NewRecord, RecordId, StoreError};
use crate::feedback::error_count;

/// Indexed records plus id and clock bookkeeping shared by both backends.
#[derive(Debug)]
pub(crate) struct StoreState {
    next_id: u64,
    ids: HashSet<u64>,
    last_ts: HashMap<(String, String), DateTime<Utc>>,
    rounds: BTreeMap<String, Vec<InteractionRecord>>,
}

impl Default for StoreState {
    fn default() -> Self {
        StoreState {
            next_id: 1,
            ids: HashSet::new(),
            last_ts: HashMap::new(),
            rounds: BTreeMap::new(),
        }
    }
}

pub(crate) fn truncate_to_millis(ts: DateTime<Utc>) -> DateTime<Utc> {
    DateTime::from_timestamp_millis(ts.timestamp_millis()).unwrap_or(ts)
}

impl StoreState {
    /// Validates `new` and turns it into the record that would be committed.
    ///
    /// Timestamps are truncated to milliseconds and clamped so that each
    /// (student, round) stream never goes backwards.
    pub(crate) fn prepare(&self, new: NewRecord) -> Result<InteractionRecord, StoreError> {
        if !valid_round_id(&new.round_id) {
            return Err(StoreError::InvalidRecord(format!("invalid round id `{}`", new.round_id)));
        }
        if new.student_id.trim().is_empty() {
            return Err(StoreError::InvalidRecord("empty student id".into()));
        }
        if new.table.is_some() && new.kind != InteractionKind::FeedbackRequest {
            return Err(StoreError::InvalidRecord("only feedback requests carry a table".into()));
        }
        let mut timestamp = truncate_to_millis(new.timestamp);
        if let Some(last) = self.last_ts.get(&(new.student_id.clone(), new.round_id.clone())) {
            timestamp = timestamp.max(*last);
        }
        let prompt_version = new.table.as_ref().map(|t| t.prompt_version).or(new.prompt_version);
        Ok(InteractionRecord {
            record_id: RecordId(self.next_id),
            error_count: new.table.as_ref().map(error_count),
            student_id: new.student_id,
            round_id: new.round_id,
            kind: new.kind,
            draft_text: new.draft_text,
            table: new.table,
            prompt_version,
            provider_error: new.provider_error,
            raw_response: new.raw_response,
            timestamp,
        })
    }

    pub(crate) fn commit(&mut self, record: InteractionRecord) -> RecordId {
        let id = record.record_id;
        self.next_id = self.next_id.max(id.0 + 1);
        self.ids.insert(id.0);
        let key = (record.student_id.clone(), record.round_id.clone());
        let ts = self.last_ts.entry(key).or_insert(record.timestamp);
        *ts = (*ts).max(record.timestamp);
        self.rounds.entry(record.round_id.clone()).or_default().push(record);
        id
    }

    /// Adds a record read back from storage. Fails on a duplicate id.
    pub(crate) fn replay(&mut self, record: InteractionRecord) -> Result<(), String> {
        if self.ids.contains(&record.record_id.0) {
            return Err(format!("duplicate record_id {}", record.record_id));
        }
        self.commit(record);
        Ok(())
    }

    pub(crate) fn query(
        &self,
        round_id: &str,
        student_id: Option<&str>,
        kind: Option<InteractionKind>,
    ) -> Vec<InteractionRecord> {
        let mut out: Vec<InteractionRecord> = self
            .rounds
            .get(round_id)
            .into_iter()
            .flatten()
            .filter(|r| student_id.is_none_or(|s| r.student_id == s))
            .filter(|r| kind.is_none_or(|k| r.kind == k))
            .cloned()
            .collect();
        out.sort_by_key(|a| (a.timestamp, a.record_id));
        out
    }

    pub(crate) fn rounds(&self) -> Vec<String> {
        self.rounds.keys().cloned().collect()
    }

    pub(crate) fn len(&self) -> usize {
        self.rounds.values().map(Vec::len).sum()
    }

    pub(crate) fn all(&self) -> Vec<InteractionRecord> {
        self.rounds.values().flatten().cloned().collect()
    }
}
