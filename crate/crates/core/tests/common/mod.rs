#![allow(dead_code)]

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use promptbeam::corpus::{Category, Component, Corpus};
use promptbeam::llm::{BackendConfig, BackendKind};
use promptbeam::search::RunConfig;

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn data_corpus() -> PathBuf {
    workspace_root().join("data/corpus.jsonl")
}

pub fn write_corpus(dir: &Path, components: &[(&str, &str, Category)]) -> PathBuf {
    let corpus = Corpus::from_components(
        components
            .iter()
            .map(|(id, text, category)| Component {
                id: id.to_string(),
                text: text.to_string(),
                category: *category,
            })
            .collect(),
    )
    .unwrap();
    let path = dir.join("corpus.jsonl");
    let mut out = Vec::new();
    corpus.write_jsonl(&mut out).unwrap();
    fs::write(&path, out).unwrap();
    path
}

/// A two-option multiple choice task whose gold is always "A".
pub fn write_mc_task(dir: &Path, id: &str, prompt: &str, n: usize) -> PathBuf {
    let mut text = format!(
        r#"{{"id":"{id}","name":"{id}","metric":"accuracy","answer_kind":"multiple_choice","simple_task_prompt":"{prompt}"}}"#
    );
    for i in 0..n {
        text.push_str(&format!(
            "\n{{\"id\":\"{id}-{i:03}\",\"input\":\"Question {i} of {id}?\",\"choices\":[{{\"label\":\"A\"}},{{\"label\":\"B\"}}],\"gold\":\"A\"}}"
        ));
    }
    let path = dir.join(format!("{id}.jsonl"));
    fs::write(&path, text).unwrap();
    path
}

pub fn base_config(corpus: PathBuf, tasks: Vec<PathBuf>, backend: BackendConfig) -> RunConfig {
    let mut config = RunConfig::new(corpus, tasks, backend);
    config.cache.enabled = false;
    config
}

pub fn hash_mock() -> BackendConfig {
    BackendConfig::new(BackendKind::HashMock)
}

/// A small hash-mock config in TOML form over the bundled corpus.
pub fn write_hash_mock_toml(dir: &Path, steps: usize) -> PathBuf {
    let tasks_dir = dir.join("tasks");
    fs::create_dir_all(&tasks_dir).unwrap();
    let t1 = write_mc_task(&tasks_dir, "alpha", "Pick one.", 20);
    let t2 = write_mc_task(&tasks_dir, "beta", "Choose.", 20);
    let text = format!(
        r#"corpus = {corpus:?}
tasks = [{t1:?}, {t2:?}]
beam_size = 3
k = 3
steps = {steps}
shortlist_size = 8
seed = 11

[backend]
kind = "hash_mock"
parallelism = 4
"#,
        corpus = data_corpus().display().to_string(),
        t1 = t1.display().to_string(),
        t2 = t2.display().to_string(),
    );
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

#[derive(Debug, Clone)]
pub struct CapturedRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl CapturedRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// Minimal HTTP/1.1 server: answers the i-th connection with `replies[i]`
/// and records every request.
pub struct StubServer {
    pub base_url: String,
    pub requests: Arc<Mutex<Vec<CapturedRequest>>>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(replies: Vec<(u16, String)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        let handle = thread::spawn(move || {
            for (status, body) in replies {
                let (mut stream, _) = match listener.accept() {
                    Ok(s) => s,
                    Err(_) => return,
                };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let mut parts = request_line.split_whitespace();
                let method = parts.next().unwrap_or_default().to_string();
                let path = parts.next().unwrap_or_default().to_string();
                let mut headers = Vec::new();
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        let (k, v) = (k.trim().to_string(), v.trim().to_string());
                        if k.eq_ignore_ascii_case("content-length") {
                            content_length = v.parse().unwrap();
                        }
                        headers.push((k, v));
                    }
                }
                let mut body_bytes = vec![0u8; content_length];
                reader.read_exact(&mut body_bytes).unwrap();
                log.lock().unwrap().push(CapturedRequest {
                    method,
                    path,
                    headers,
                    body: String::from_utf8(body_bytes).unwrap(),
                });
                let reason = match status {
                    200 => "OK",
                    400 => "Bad Request",
                    429 => "Too Many Requests",
                    _ => "Error",
                };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(response.as_bytes()).unwrap();
                stream.flush().unwrap();
            }
        });
        StubServer {
            base_url,
            requests,
            handle: Some(handle),
        }
    }

    pub fn requests(&self) -> Vec<CapturedRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        // Unblock a pending accept so the thread can exit.
        let _ = std::net::TcpStream::connect(self.base_url.trim_start_matches("http://"));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

pub fn completion(content: &str) -> String {
    serde_json::json!({
        "id": "cmpl-1",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
    })
    .to_string()
}
