//! HTTP backend behavior against a live local server: status
//! classification, retry flow through the annotation engine, and auth
//! header handling.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::net::TcpListener;

use concord::annotator::backend::{Backend, BackendError, CallContext, ChatMessage, ChatRequest};
use concord::annotator::journal::JournalWriter;
use concord::annotator::{annotate_corpus, AnnotationItem, RetryPolicy, RunConfig, RunStatus};
use concord::taxonomy::PromptKind;

async fn serve(app: Router) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    addr
}

fn completion(content: &str) -> Json<Value> {
    Json(json!({
        "choices": [{
            "finish_reason": "stop",
            "message": { "role": "assistant", "content": content }
        }]
    }))
}

fn request() -> ChatRequest {
    ChatRequest {
        model: "test-model".into(),
        temperature: 0.5,
        messages: vec![
            ChatMessage::system("label the input"),
            ChatMessage::user("User Input: I always mess things up"),
        ],
    }
}

fn ctx() -> CallContext<'static> {
    CallContext {
        item_id: "it-1",
        run_index: 0,
    }
}

#[tokio::test]
async fn happy_path_returns_message_content() {
    let app = Router::new().route(
        "/v1/chat/completions",
        post(|headers: HeaderMap, Json(body): Json<Value>| async move {
            assert_eq!(
                headers.get("authorization").unwrap().to_str().unwrap(),
                "Bearer sk-test"
            );
            assert_eq!(body["model"], "test-model");
            assert_eq!(body["messages"][0]["role"], "system");
            assert_eq!(body["messages"][1]["role"], "user");
            completion("Personalization")
        }),
    );
    let addr = serve(app).await;
    let backend = concord::annotator::backend::HttpBackend::new(
        format!("http://{addr}/v1/chat/completions"),
        Some("sk-test".into()),
    )
    .unwrap();
    let out = backend.complete(&request(), ctx()).await.unwrap();
    assert_eq!(out, "Personalization");
}

#[tokio::test]
async fn statuses_map_to_error_classes() {
    let app = Router::new()
        .route(
            "/rate",
            post(|| async {
                let mut headers = HeaderMap::new();
                headers.insert("retry-after", "7".parse().unwrap());
                (StatusCode::TOO_MANY_REQUESTS, headers, "slow down")
            }),
        )
        .route("/boom", post(|| async { (StatusCode::BAD_GATEWAY, "upstream died") }))
        .route("/nope", post(|| async { (StatusCode::BAD_REQUEST, "bad payload") }))
        .route(
            "/filtered",
            post(|| async {
                Json(json!({
                    "choices": [{ "finish_reason": "content_filter", "message": null }]
                }))
            }),
        );
    let addr = serve(app).await;
    let client = |path: &str| {
        concord::annotator::backend::HttpBackend::new(
            format!("http://{addr}/{path}"),
            None,
        )
        .unwrap()
    };

    match client("rate").complete(&request(), ctx()).await.unwrap_err() {
        BackendError::RateLimited {
            retry_after,
            message,
        } => {
            assert_eq!(retry_after, Some(std::time::Duration::from_secs(7)));
            assert_eq!(message, "slow down");
        }
        other => panic!("expected rate limit, got {other:?}"),
    }
    match client("boom").complete(&request(), ctx()).await.unwrap_err() {
        BackendError::Server { status, .. } => assert_eq!(status, 502),
        other => panic!("expected server error, got {other:?}"),
    }
    match client("nope").complete(&request(), ctx()).await.unwrap_err() {
        BackendError::Rejected { status, .. } => assert_eq!(status, 400),
        other => panic!("expected rejection, got {other:?}"),
    }
    match client("filtered").complete(&request(), ctx()).await.unwrap_err() {
        BackendError::Refused(_) => {}
        other => panic!("expected refusal, got {other:?}"),
    }
}

#[derive(Clone, Default)]
struct Flaky {
    calls: Arc<AtomicU32>,
}

async fn flaky_handler(State(state): State<Flaky>) -> axum::response::Response {
    // First request fails server-side; the retry succeeds.
    if state.calls.fetch_add(1, Ordering::SeqCst) == 0 {
        (StatusCode::INTERNAL_SERVER_ERROR, "try again").into_response()
    } else {
        completion("Mind Reading").into_response()
    }
}

fn fast_retry_config(endpoint: String) -> RunConfig {
    RunConfig {
        endpoint_url: endpoint,
        model: "test-model".into(),
        temperature: 0.5,
        prompt: PromptKind::Rlp,
        runs_per_item: 1,
        max_retries: 2,
        concurrency: 1,
        seed: 3,
        retry: RetryPolicy {
            base_delay: std::time::Duration::from_millis(1),
            max_delay: std::time::Duration::from_millis(5),
        },
        failure_budget: 0,
    }
}

#[tokio::test]
async fn engine_retries_transient_server_errors_end_to_end() {
    let state = Flaky::default();
    let app = Router::new()
        .route("/v1/chat/completions", post(flaky_handler))
        .with_state(state.clone());
    let addr = serve(app).await;

    let backend = concord::annotator::backend::HttpBackend::new(
        format!("http://{addr}/v1/chat/completions"),
        Some("sk-test".into()),
    )
    .unwrap();
    let items = vec![AnnotationItem {
        item_id: "it-1".into(),
        user_input: "he must think I'm useless".into(),
        golden_dominant: None,
        golden_secondary: None,
    }];
    let cfg = fast_retry_config(format!("http://{addr}/v1/chat/completions"));
    let dir = tempfile::tempdir().unwrap();
    let mut journal = JournalWriter::append_to(&dir.path().join("j.jsonl")).unwrap();
    let (records, summary) =
        annotate_corpus(&items, &cfg, &backend, &[], &mut journal, |_| {})
            .await
            .unwrap();

    assert_eq!(summary.ok, 1);
    assert_eq!(records[0].status, RunStatus::Ok);
    assert_eq!(records[0].raw_response, "Mind Reading");
    assert_eq!(state.calls.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn blank_content_exhausts_retries_and_fails_the_run() {
    let calls = Arc::new(AtomicU32::new(0));
    let counter = calls.clone();
    let app = Router::new().route(
        "/v1/chat/completions",
        post(move || {
            counter.fetch_add(1, Ordering::SeqCst);
            async { completion("") }
        }),
    );
    let addr = serve(app).await;

    let backend = concord::annotator::backend::HttpBackend::new(
        format!("http://{addr}/v1/chat/completions"),
        None,
    )
    .unwrap();
    let items = vec![AnnotationItem {
        item_id: "it-1".into(),
        user_input: "nothing works".into(),
        golden_dominant: None,
        golden_secondary: None,
    }];
    let cfg = fast_retry_config(format!("http://{addr}/v1/chat/completions"));
    let dir = tempfile::tempdir().unwrap();
    let mut journal = JournalWriter::append_to(&dir.path().join("j.jsonl")).unwrap();
    let (records, summary) =
        annotate_corpus(&items, &cfg, &backend, &[], &mut journal, |_| {})
            .await
            .unwrap();

    assert_eq!(summary.failed, 1);
    assert_eq!(records[0].status, RunStatus::Failed);
    assert!(records[0].warnings.iter().any(|w| w.contains("empty response")));
    // max_retries = 2 means three attempts in total.
    assert_eq!(calls.load(Ordering::SeqCst), 3);
}
