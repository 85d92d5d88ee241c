//! The HTTP provider against a local chat-completions stub.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use draftcheck_core::{FeedbackGateway, GatewayError, PromptVersion, ProviderConfig, ReportDraft};
use serde_json::{json, Value};

const KEY_VAR: &str = "DRAFTCHECK_TEST_STUB_KEY";

#[derive(Clone)]
struct Stub {
    hits: Arc<AtomicUsize>,
    bodies: Arc<std::sync::Mutex<Vec<Value>>>,
    status: StatusCode,
    content: Option<String>,
}

async fn handler(State(stub): State<Stub>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    stub.hits.fetch_add(1, Ordering::SeqCst);
    stub.bodies.lock().unwrap().push(body);
    let auth = headers.get("authorization").and_then(|v| v.to_str().ok());
    if auth != Some("Bearer sekret") {
        return (StatusCode::UNAUTHORIZED, Json(json!({"error": "bad key"})));
    }
    if !stub.status.is_success() {
        return (stub.status, Json(json!({"error": "stub failure"})));
    }
    match &stub.content {
        Some(c) => (StatusCode::OK, Json(json!({"choices": [{"message": {"role": "assistant", "content": c}}]}))),
        None => (StatusCode::OK, Json(json!({"unexpected": true}))),
    }
}

async fn spawn(status: StatusCode, content: Option<&str>) -> (String, Stub) {
    let stub = Stub {
        hits: Arc::default(),
        bodies: Arc::default(),
        status,
        content: content.map(str::to_string),
    };
    let app = Router::new().route("/v1/chat/completions", post(handler)).with_state(stub.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1/chat/completions"), stub)
}

fn gateway(url: &str, key_var: &str, version: PromptVersion) -> FeedbackGateway {
    std::env::set_var(KEY_VAR, "sekret");
    let mut config = ProviderConfig::http(url.parse().unwrap(), "stub-model", key_var, version);
    config.retry_base_ms = 5;
    config.timeout_secs = 5.0;
    FeedbackGateway::from_config(config).unwrap()
}

fn draft() -> ReportDraft {
    ReportDraft::new("- implemented the parser module (evidence: repo)", "s001", "r1")
}

#[tokio::test]
async fn empty_table_carries_model_name() {
    let (url, stub) = spawn(StatusCode::OK, Some("```json\n{\"tasks\": []}\n```")).await;
    let gw = gateway(&url, KEY_VAR, PromptVersion::V1);
    let table = gw.request_feedback(&draft()).await.unwrap();
    assert!(table.tasks.is_empty());
    assert_eq!(table.provider_id, "stub-model");
    assert_eq!(table.prompt_version, PromptVersion::V1);
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);

    let body = stub.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["messages"][0]["content"], draftcheck_core::system_prompt(PromptVersion::V1));
    assert_eq!(body["messages"][1]["content"], draft().text);
}

#[tokio::test]
async fn server_errors_are_retried_then_reported() {
    let (url, stub) = spawn(StatusCode::INTERNAL_SERVER_ERROR, None).await;
    let gw = gateway(&url, KEY_VAR, PromptVersion::V2);
    let err = gw.request_feedback(&draft()).await.unwrap_err();
    assert!(matches!(err, GatewayError::ProviderUnavailable(_)), "{err:?}");
    assert_eq!(err.code(), "provider_unavailable");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
    assert_eq!(gw.provider().attempts_made(), 3);
}

#[tokio::test]
async fn unparseable_answer_is_not_retried() {
    let answer = "I'm sorry, I can't produce a table for this report.";
    let (url, stub) = spawn(StatusCode::OK, Some(answer)).await;
    let gw = gateway(&url, KEY_VAR, PromptVersion::V2);
    let err = gw.request_feedback(&draft()).await.unwrap_err();
    assert_eq!(err.code(), "provider_unparseable");
    assert_eq!(err.raw_response(), Some(answer));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn schema_violation_keeps_raw_answer() {
    let answer = r#"{"tasks":[{"Task":"a","Evidence":"b","Status":"OK"}]}"#;
    let (url, stub) = spawn(StatusCode::OK, Some(answer)).await;
    let gw = gateway(&url, KEY_VAR, PromptVersion::V2);
    let err = gw.request_feedback(&draft()).await.unwrap_err();
    match err {
        GatewayError::ProviderResponseUnparseable { raw, detail } => {
            assert_eq!(raw, answer);
            assert!(detail.contains("Category"), "{detail}");
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn envelope_without_content_is_unparseable() {
    let (url, stub) = spawn(StatusCode::OK, None).await;
    let gw = gateway(&url, KEY_VAR, PromptVersion::V1);
    let err = gw.request_feedback(&draft()).await.unwrap_err();
    assert_eq!(err.code(), "provider_unparseable");
    assert!(err.raw_response().unwrap().contains("unexpected"));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn wrong_key_is_an_auth_failure() {
    std::env::set_var("DRAFTCHECK_TEST_WRONG_KEY", "nope");
    let (url, stub) = spawn(StatusCode::OK, Some("{\"tasks\": []}")).await;
    let gw = gateway(&url, "DRAFTCHECK_TEST_WRONG_KEY", PromptVersion::V1);
    let err = gw.request_feedback(&draft()).await.unwrap_err();
    assert!(matches!(err, GatewayError::AuthFailure(_)), "{err:?}");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn missing_key_variable_never_reaches_the_network() {
    let (url, stub) = spawn(StatusCode::OK, Some("{\"tasks\": []}")).await;
    let gw = gateway(&url, "DRAFTCHECK_TEST_UNSET_KEY", PromptVersion::V1);
    let err = gw.request_feedback(&draft()).await.unwrap_err();
    assert_eq!(err.code(), "auth_failure");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 0);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let (url, stub) = spawn(StatusCode::BAD_REQUEST, None).await;
    let gw = gateway(&url, KEY_VAR, PromptVersion::V1);
    let err = gw.request_feedback(&draft()).await.unwrap_err();
    assert_eq!(err.code(), "provider_unavailable");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn unreachable_endpoint_is_unavailable() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    drop(listener);
    let gw = gateway(&url, KEY_VAR, PromptVersion::V1);
    let err = gw.request_feedback(&draft()).await.unwrap_err();
    assert_eq!(err.code(), "provider_unavailable");
    assert_eq!(gw.provider().attempts_made(), 3);
}

#[tokio::test]
async fn invalid_drafts_are_rejected_before_any_call() {
    let (url, stub) = spawn(StatusCode::OK, Some("{\"tasks\": []}")).await;
    let gw = gateway(&url, KEY_VAR, PromptVersion::V1);
    let empty = ReportDraft::new("  \n ", "s", "r");
    assert_eq!(gw.request_feedback(&empty).await.unwrap_err().code(), "empty_draft");
    let long = ReportDraft::new("x".repeat(2101), "s", "r");
    assert_eq!(gw.request_feedback(&long).await.unwrap_err().code(), "draft_too_long");
    let limit = ReportDraft::new("é".repeat(2100), "s", "r");
    assert!(gw.request_feedback(&limit).await.is_ok());
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}
