use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::state::StoreState;
use super::{sha256_hex, EventStore, InteractionKind, InteractionRecord, NewRecord, RecordId, StoreError};
use crate::feedback::{error_count, FeedbackTable, PromptVersion, TaskItem};

const EXTENSION: &str = "jsonl";

/// One line of a round log file. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub record_id: u64,
    pub student_id: String,
    pub round_id: String,
    pub kind: InteractionKind,
    /// RFC 3339, UTC, millisecond precision.
    pub timestamp: String,
    pub draft_sha256: String,
    pub draft_text: String,
    pub prompt_version: Option<PromptVersion>,
    pub provider_id: Option<String>,
    pub tasks: Option<Vec<TaskItem>>,
    pub error_count: Option<usize>,
    pub raw_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_error: Option<String>,
}

impl LogLine {
    pub fn from_record(r: &InteractionRecord) -> Self {
        LogLine {
            record_id: r.record_id.0,
            student_id: r.student_id.clone(),
            round_id: r.round_id.clone(),
            kind: r.kind,
            timestamp: r.timestamp.to_rfc3339_opts(SecondsFormat::Millis, true),
            draft_sha256: r.draft_sha256(),
            draft_text: r.draft_text.clone(),
            prompt_version: r.prompt_version,
            provider_id: r.table.as_ref().map(|t| t.provider_id.clone()),
            tasks: r.table.as_ref().map(|t| t.tasks.clone()),
            error_count: r.error_count,
            raw_response: r
                .table
                .as_ref()
                .map(|t| t.raw_response.clone())
                .or_else(|| r.raw_response.clone()),
            provider_error: r.provider_error.clone(),
        }
    }

    /// Checks internal consistency and rebuilds the record.
    pub fn into_record(self) -> Result<InteractionRecord, String> {
        let timestamp = DateTime::parse_from_rfc3339(&self.timestamp)
            .map_err(|e| format!("bad timestamp `{}`: {e}", self.timestamp))?
            .with_timezone(&Utc);
        if sha256_hex(&self.draft_text) != self.draft_sha256 {
            return Err("draft_sha256 does not match draft_text".into());
        }
        let (table, raw_response) = match self.tasks {
            Some(tasks) => {
                if self.kind != InteractionKind::FeedbackRequest {
                    return Err("tasks present on a final submission".into());
                }
                let prompt_version = self.prompt_version.ok_or("tasks present without prompt_version")?;
                let provider_id = self.provider_id.ok_or("tasks present without provider_id")?;
                let table = FeedbackTable {
                    tasks,
                    prompt_version,
                    provider_id,
                    raw_response: self.raw_response.unwrap_or_default(),
                };
                if self.error_count != Some(error_count(&table)) {
                    return Err(format!(
                        "stored error_count {:?} differs from table's {}",
                        self.error_count,
                        error_count(&table)
                    ));
                }
                (Some(table), None)
            }
            None => {
                if self.error_count.is_some() {
                    return Err("error_count present without tasks".into());
                }
                (None, self.raw_response)
            }
        };
        Ok(InteractionRecord {
            record_id: RecordId(self.record_id),
            student_id: self.student_id,
            round_id: self.round_id,
            kind: self.kind,
            draft_text: self.draft_text,
            error_count: table.as_ref().map(error_count),
            table,
            prompt_version: self.prompt_version,
            provider_error: self.provider_error,
            raw_response,
            timestamp,
        })
    }
}

/// Result of reading one round file.
#[derive(Debug)]
pub struct RoundFile {
    pub records: Vec<InteractionRecord>,
    /// Length of the committed prefix when the file ends in an unterminated line.
    pub torn_at: Option<u64>,
}

/// Reads and validates a round log.
///
/// An unterminated final line is a write that never completed: it is skipped
/// with a warning. Any malformed terminated line is a [`StoreError::CorruptStore`].
pub fn read_round_file(path: &Path) -> Result<RoundFile, StoreError> {
    let bytes = fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let expected_round = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let corrupt = |line: usize, offset: usize, reason: String| StoreError::CorruptStore {
        path: path.to_path_buf(),
        line,
        offset: offset as u64,
        reason,
    };

    let mut records = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    let mut torn_at = None;
    while offset < bytes.len() {
        line_no += 1;
        let Some(len) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            tracing::warn!(
                path = %path.display(),
                line = line_no,
                offset,
                "ignoring unterminated final line (incomplete write)"
            );
            torn_at = Some(offset as u64);
            break;
        };
        let raw = &bytes[offset..offset + len];
        let text = std::str::from_utf8(raw).map_err(|e| corrupt(line_no, offset, format!("invalid UTF-8: {e}")))?;
        let line: LogLine =
            serde_json::from_str(text).map_err(|e| corrupt(line_no, offset, format!("malformed JSON: {e}")))?;
        if line.round_id != expected_round {
            return Err(corrupt(
                line_no,
                offset,
                format!("round_id `{}` in file for round `{expected_round}`", line.round_id),
            ));
        }
        records.push(line.into_record().map_err(|reason| corrupt(line_no, offset, reason))?);
        offset += len + 1;
    }
    Ok(RoundFile { records, torn_at })
}

struct Inner {
    state: StoreState,
    writers: HashMap<String, File>,
    torn: HashMap<String, u64>,
}

/// Directory of `<round_id>.jsonl` files, one JSON object per LF-terminated line.
///
/// All records are loaded at open; appends go to disk first and are fsynced
/// before they become visible to queries. One writer per directory.
pub struct JsonlStore {
    dir: PathBuf,
    durable: bool,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for JsonlStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonlStore").field("dir", &self.dir).finish()
    }
}

impl JsonlStore {
    /// Opens (creating if needed) the store at `dir` and replays every round file.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io {
            path: dir.clone(),
            source,
        })?;
        let mut state = StoreState::default();
        let mut torn = HashMap::new();
        for path in round_files(&dir)? {
            let round = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let file = read_round_file(&path)?;
            for (i, record) in file.records.into_iter().enumerate() {
                state.replay(record).map_err(|reason| StoreError::CorruptStore {
                    path: path.clone(),
                    line: i + 1,
                    offset: 0,
                    reason,
                })?;
            }
            if let Some(at) = file.torn_at {
                torn.insert(round, at);
            }
        }
        Ok(JsonlStore {
            dir,
            durable: true,
            inner: Mutex::new(Inner {
                state,
                writers: HashMap::new(),
                torn,
            }),
        })
    }

    /// Skips the fsync after each append. For bulk fixture generation.
    pub fn without_fsync(mut self) -> Self {
        self.durable = false;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn round_path(&self, round_id: &str) -> PathBuf {
        self.dir.join(format!("{round_id}.{EXTENSION}"))
    }

    /// Every record of every round.
    pub fn all(&self) -> Vec<InteractionRecord> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).state.all()
    }

    fn io_err(path: &Path, source: std::io::Error) -> StoreError {
        if source.kind() == ErrorKind::StorageFull {
            StoreError::StorageFull {
                path: path.to_path_buf(),
            }
        } else {
            StoreError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

fn round_files(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let entries = fs::read_dir(dir).map_err(|source| StoreError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| StoreError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some(EXTENSION) && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

impl EventStore for JsonlStore {
    fn append(&self, record: NewRecord) -> Result<RecordId, StoreError> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let record = inner.state.prepare(record)?;
        let mut line = serde_json::to_string(&LogLine::from_record(&record))
            .map_err(|e| StoreError::InvalidRecord(e.to_string()))?;
        line.push('\n');

        let round = record.round_id.clone();
        let path = self.round_path(&round);
        if !inner.writers.contains_key(&round) {
            if let Some(at) = inner.torn.remove(&round) {
                tracing::warn!(path = %path.display(), at, "truncating incomplete final line");
                let f = OpenOptions::new().write(true).open(&path).map_err(|e| Self::io_err(&path, e))?;
                f.set_len(at).map_err(|e| Self::io_err(&path, e))?;
            }
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Self::io_err(&path, e))?;
            inner.writers.insert(round.clone(), f);
        }
        let file = inner.writers.get_mut(&round).expect("writer inserted above");
        let before = file.metadata().map_err(|e| Self::io_err(&path, e))?.len();
        let written = file
            .write_all(line.as_bytes())
            .and_then(|_| if self.durable { file.sync_data() } else { Ok(()) });
        if let Err(e) = written {
            // Roll back a partial line so later appends stay well-formed.
            let _ = file.set_len(before);
            return Err(Self::io_err(&path, e));
        }
        Ok(inner.state.commit(record))
    }

    fn query(
        &self,
        round_id: &str,
        student_id: Option<&str>,
        kind: Option<InteractionKind>,
    ) -> Result<Vec<InteractionRecord>, StoreError> {
        Ok(self
            .inner
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .state
            .query(round_id, student_id, kind))
    }

    fn rounds(&self) -> Result<Vec<String>, StoreError> {
        Ok(self.inner.lock().unwrap_or_else(|e| e.into_inner()).state.rounds())
    }

    fn len(&self) -> Result<usize, StoreError> {
        Ok(self.inner.lock().unwrap_or_else(|e| e.into_inner()).state.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::{TaskStatus, NO_EVIDENCE};
    use chrono::TimeZone;

    fn ts(secs: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_740_000_000 + secs, 0).unwrap()
    }

    fn table() -> FeedbackTable {
        FeedbackTable {
            tasks: vec![
                TaskItem {
                    task: "implemented login".into(),
                    evidence: "code".into(),
                    category: None,
                    status: TaskStatus::Ok,
                },
                TaskItem {
                    task: "Vague task".into(),
                    evidence: NO_EVIDENCE.into(),
                    category: None,
                    status: TaskStatus::Error,
                },
            ],
            prompt_version: PromptVersion::V1,
            provider_id: "mock-rules".into(),
            raw_response: "{raw}".into(),
        }
    }

    #[test]
    fn empty_store_queries_empty() {
        let dir = tempfile::tempdir().unwrap();
        let store = JsonlStore::open(dir.path()).unwrap();
        assert!(store.query("round1", None, None).unwrap().is_empty());
        assert_eq!(store.len().unwrap(), 0);
    }

    #[test]
    fn first_append_assigns_id() {
        let dir = tempfile::tempdir().unwrap();
        let store = JsonlStore::open(dir.path()).unwrap();
        let id = store.append(NewRecord::submission("s1", "round1", "text").at(ts(0))).unwrap();
        assert_eq!(id, RecordId(1));
        assert_eq!(store.len().unwrap(), 1);
    }

    #[test]
    fn order_preserved_and_fields_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = JsonlStore::open(dir.path()).unwrap();
        store.append(NewRecord::feedback("s1", "round1", "draft one", table()).at(ts(0))).unwrap();
        store.append(NewRecord::submission("s1", "round1", "draft two").at(ts(5))).unwrap();
        let reopened = JsonlStore::open(dir.path()).unwrap();
        let recs = reopened.query("round1", Some("s1"), None).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].draft_text, "draft one");
        assert_eq!(recs[0].table.as_ref().unwrap(), &table());
        assert_eq!(recs[0].error_count, Some(1));
        assert_eq!(recs[1].kind, InteractionKind::FinalSubmission);
        assert_eq!(recs, store.query("round1", Some("s1"), None).unwrap());
    }

    #[test]
    fn ids_continue_after_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = JsonlStore::open(dir.path()).unwrap();
            store.append(NewRecord::submission("s1", "r1", "a").at(ts(0))).unwrap();
            store.append(NewRecord::submission("s2", "r2", "b").at(ts(0))).unwrap();
        }
        let store = JsonlStore::open(dir.path()).unwrap();
        let id = store.append(NewRecord::submission("s3", "r1", "c").at(ts(1))).unwrap();
        assert_eq!(id, RecordId(3));
        assert_eq!(store.rounds().unwrap(), vec!["r1".to_string(), "r2".to_string()]);
    }

    #[test]
    fn line_schema_fields() {
        let dir = tempfile::tempdir().unwrap();
        let store = JsonlStore::open(dir.path()).unwrap();
        store.append(NewRecord::feedback("s1", "round1", "draft", table()).at(ts(0))).unwrap();
        let text = fs::read_to_string(store.round_path("round1")).unwrap();
        assert!(text.ends_with('\n'));
        let v: serde_json::Value = serde_json::from_str(text.trim_end()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        for k in [
            "record_id", "student_id", "round_id", "kind", "timestamp", "draft_sha256", "draft_text",
            "prompt_version", "provider_id", "tasks", "error_count",
        ] {
            assert!(keys.contains(&k), "{k}");
        }
        assert_eq!(v["kind"], "feedback_request");
        assert_eq!(v["timestamp"], "2025-02-19T21:20:00.000Z");
        assert_eq!(v["prompt_version"], "v1");
        assert_eq!(v["tasks"][1]["Status"], "ERROR");
        assert_eq!(v["draft_sha256"], "7743ce348d9284d677a185f33295b92266cc435a5b5f775029b300066d26693a");
    }

    #[test]
    fn torn_tail_ignored_then_repaired() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = JsonlStore::open(dir.path()).unwrap();
            store.append(NewRecord::submission("s1", "r1", "a").at(ts(0))).unwrap();
        }
        let path = dir.path().join("r1.jsonl");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"record_id":2,"student_"#).unwrap();
        drop(f);

        let store = JsonlStore::open(dir.path()).unwrap();
        assert_eq!(store.len().unwrap(), 1);
        let id = store.append(NewRecord::submission("s2", "r1", "b").at(ts(1))).unwrap();
        assert_eq!(id, RecordId(2));
        let reopened = JsonlStore::open(dir.path()).unwrap();
        assert_eq!(reopened.len().unwrap(), 2);
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 2);
    }

    #[test]
    fn malformed_middle_line_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = JsonlStore::open(dir.path()).unwrap();
            store.append(NewRecord::submission("s1", "r1", "a").at(ts(0))).unwrap();
        }
        let path = dir.path().join("r1.jsonl");
        let good = fs::read_to_string(&path).unwrap();
        fs::write(&path, format!("{good}not json\n{good}")).unwrap();
        match JsonlStore::open(dir.path()) {
            Err(StoreError::CorruptStore { line, offset, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(offset, good.len() as u64);
            }
            other => panic!("expected CorruptStore, got {other:?}"),
        }
    }

    #[test]
    fn tampered_error_count_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = JsonlStore::open(dir.path()).unwrap();
            store.append(NewRecord::feedback("s1", "r1", "a", table()).at(ts(0))).unwrap();
        }
        let path = dir.path().join("r1.jsonl");
        let text = fs::read_to_string(&path).unwrap().replace("\"error_count\":1", "\"error_count\":0");
        fs::write(&path, text).unwrap();
        assert!(matches!(JsonlStore::open(dir.path()), Err(StoreError::CorruptStore { line: 1, .. })));
    }

    #[test]
    fn duplicate_ids_across_files_are_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = JsonlStore::open(dir.path()).unwrap();
            store.append(NewRecord::submission("s1", "r1", "a").at(ts(0))).unwrap();
        }
        let line = fs::read_to_string(dir.path().join("r1.jsonl")).unwrap();
        fs::write(dir.path().join("r2.jsonl"), line.replace("\"r1\"", "\"r2\"")).unwrap();
        assert!(matches!(JsonlStore::open(dir.path()), Err(StoreError::CorruptStore { .. })));
    }

    #[test]
    fn timestamps_clamped_per_stream() {
        let store = crate::store::MemoryStore::new();
        store.append(NewRecord::submission("s1", "r1", "a").at(ts(10))).unwrap();
        store.append(NewRecord::submission("s1", "r1", "b").at(ts(5))).unwrap();
        store.append(NewRecord::submission("s2", "r1", "c").at(ts(5))).unwrap();
        let recs = store.query("r1", Some("s1"), None).unwrap();
        assert_eq!(recs[1].timestamp, ts(10));
        let other = store.query("r1", Some("s2"), None).unwrap();
        assert_eq!(other[0].timestamp, ts(5));
    }

    #[test]
    fn invalid_records_rejected() {
        let store = crate::store::MemoryStore::new();
        assert!(matches!(
            store.append(NewRecord::submission("s1", "../etc", "a")),
            Err(StoreError::InvalidRecord(_))
        ));
        let mut bad = NewRecord::submission("s1", "r1", "a");
        bad.table = Some(table());
        assert!(matches!(store.append(bad), Err(StoreError::InvalidRecord(_))));
    }
}
