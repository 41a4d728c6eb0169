mod common;

use std::time::Duration;

use common::{completion, StubServer};
use promptbeam::llm::{Backend, BackendConfig, BackendKind, ChatRequest, HttpBackend, LlmError, RetryPolicy};

fn fast_retry(max_attempts: u32) -> RetryPolicy {
    RetryPolicy {
        max_attempts,
        initial_backoff: Duration::from_millis(1),
        max_backoff: Duration::from_millis(5),
    }
}

fn request() -> ChatRequest {
    ChatRequest {
        model: "test-model".into(),
        system: "You are terse.".into(),
        user: "What is 2+2?".into(),
        temperature: 0.0,
        max_tokens: 16,
    }
}

#[test]
fn sends_openai_chat_body_and_reads_first_choice() {
    let server = StubServer::start(vec![(200, completion("The answer is 4."))]);
    let backend = HttpBackend::new(&server.base_url, Some("sk-test".into()), fast_retry(1), Duration::from_secs(5)).unwrap();
    assert_eq!(backend.generate(&request()).unwrap(), "The answer is 4.");

    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    let r = &reqs[0];
    assert_eq!(r.method, "POST");
    assert_eq!(r.path, "/v1/chat/completions");
    assert_eq!(r.header("authorization"), Some("Bearer sk-test"));
    let body: serde_json::Value = serde_json::from_str(&r.body).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][0]["content"], "You are terse.");
    assert_eq!(body["messages"][1]["role"], "user");
    assert_eq!(body["messages"][1]["content"], "What is 2+2?");
    assert_eq!(body["messages"].as_array().unwrap().len(), 2);
    assert_eq!(body["temperature"].as_f64(), Some(0.0));
    assert_eq!(body["max_tokens"], 16);
}

#[test]
fn retries_rate_limits_and_server_errors() {
    let server = StubServer::start(vec![
        (429, r#"{"error":"slow down"}"#.into()),
        (503, r#"{"error":"busy"}"#.into()),
        (200, completion("ok")),
    ]);
    let backend = HttpBackend::new(&server.base_url, None, fast_retry(5), Duration::from_secs(5)).unwrap();
    assert_eq!(backend.generate(&request()).unwrap(), "ok");
    let reqs = server.requests();
    assert_eq!(reqs.len(), 3);
    assert!(reqs[0].header("authorization").is_none());
}

#[test]
fn client_errors_are_not_retried() {
    let server = StubServer::start(vec![(400, r#"{"error":"bad"}"#.into()), (200, completion("unused"))]);
    let backend = HttpBackend::new(&server.base_url, None, fast_retry(5), Duration::from_secs(5)).unwrap();
    match backend.generate(&request()) {
        Err(LlmError::Status { status: 400, .. }) => {}
        other => panic!("expected a 400 status error, got {other:?}"),
    }
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn gives_up_after_max_attempts() {
    let server = StubServer::start(vec![(429, "{}".into()), (429, "{}".into())]);
    let backend = HttpBackend::new(&server.base_url, None, fast_retry(2), Duration::from_secs(5)).unwrap();
    assert!(matches!(
        backend.generate(&request()),
        Err(LlmError::RetriesExhausted { attempts: 2, .. })
    ));
}

#[test]
fn config_reads_key_from_named_variable() {
    let server = StubServer::start(vec![(200, completion("fine"))]);
    std::env::set_var("PROMPTBEAM_WIRE_TEST_KEY", "sk-from-env");
    let mut cfg = BackendConfig::new(BackendKind::HttpOpenai);
    cfg.base_url = Some(format!("{}/", server.base_url));
    cfg.api_key_env = Some("PROMPTBEAM_WIRE_TEST_KEY".into());
    let backend = cfg.build().unwrap();
    let mut req = request();
    req.temperature = cfg.temperature;
    assert_eq!(backend.generate(&req).unwrap(), "fine");
    let reqs = server.requests();
    assert_eq!(reqs[0].path, "/v1/chat/completions");
    assert_eq!(reqs[0].header("authorization"), Some("Bearer sk-from-env"));
}

#[test]
fn malformed_body_is_a_decode_error() {
    let server = StubServer::start(vec![(200, r#"{"choices":[]}"#.into())]);
    let backend = HttpBackend::new(&server.base_url, None, fast_retry(3), Duration::from_secs(5)).unwrap();
    assert!(matches!(backend.generate(&request()), Err(LlmError::Decode(_))));
    assert_eq!(server.requests().len(), 1);
}
