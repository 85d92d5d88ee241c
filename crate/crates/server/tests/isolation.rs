//! Random interleavings of several students: histories never mix students,
//! every 2xx answer matches one stored record, and attempt numbers equal the
//! stored request counts.

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use draftcheck_core::{EventStore, InteractionKind, MemoryStore, PromptVersion, ProviderConfig};
use draftcheck_server::{router, AppState, FeedbackResponse, History, RoundConfig, ServiceConfig};
use http_body_util::BodyExt;
use proptest::prelude::*;
use tower::ServiceExt;

const STUDENTS: [&str; 3] = ["alice", "bob", "carol"];
const DRAFTS: [&str; 3] = [
    "- we assembled the frame (evidence: photo)\n- ordered parts",
    "- assembled the aluminium frame myself (evidence: photo of the frame)",
    "   ",
];

fn config() -> ServiceConfig {
    ServiceConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        store_dir: "unused".into(),
        dev_mode: true,
        student_header: "x-student-id".into(),
        static_dir: None,
        rounds: vec![RoundConfig {
            id: "r".into(),
            opens_at: None,
            closes_at: None,
            provider: ProviderConfig::mock(PromptVersion::V2),
        }],
    }
}

async fn call(app: &axum::Router, method: &str, uri: String, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body.to_string())).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn students_never_see_each_other(ops in prop::collection::vec((0usize..3, 0usize..3, any::<bool>()), 0..25)) {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async {
            let store = Arc::new(MemoryStore::new());
            let app = router(AppState::new(&config(), store.clone()).unwrap(), None);
            let mut ok = 0;
            for &(s, d, is_submit) in &ops {
                let action = if is_submit { "submit" } else { "feedback" };
                let (status, body) = call(&app, "POST", format!("/api/rounds/r/students/{}/{action}", STUDENTS[s]), DRAFTS[d]).await;
                if status.is_success() {
                    ok += 1;
                    if !is_submit {
                        let r: FeedbackResponse = serde_json::from_slice(&body).unwrap();
                        let stored = store.query("r", Some(STUDENTS[s]), Some(InteractionKind::FeedbackRequest)).unwrap();
                        assert_eq!(r.attempt_number, stored.len());
                    }
                }
            }
            assert_eq!(store.len().unwrap(), ok);

            for student in STUDENTS {
                let (_, body) = call(&app, "GET", format!("/api/rounds/r/students/{student}/history"), "").await;
                let h: History = serde_json::from_slice(&body).unwrap();
                let own: Vec<_> = store
                    .query("r", Some(student), Some(InteractionKind::FeedbackRequest))
                    .unwrap()
                    .into_iter()
                    .map(|r| r.record_id)
                    .collect();
                assert_eq!(h.student_id, student);
                assert_eq!(h.attempts.iter().map(|a| a.record_id).collect::<Vec<_>>(), own);
                let submitted = !store.query("r", Some(student), Some(InteractionKind::FinalSubmission)).unwrap().is_empty();
                assert_eq!(h.submitted, submitted);
            }
        });
    }
}
