#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;

use pmd::backends::{Backend, ScriptedBackend, SyntheticBackend};
use pmd::config::FileConfig;
use pmd::dataset::load_dataset;
use pmd::orchestrator::{Engine, RunConfig};
use pmd_core::ranking::RankingMode;
use pmd_core::summary::ExampleResult;
use pmd_core::{Example, YesNo};
use serde_json::{json, Value};

pub fn synthetic_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/synthetic")
}

/// Name and run configuration of every golden summary.
pub fn golden_runs() -> Vec<(String, RunConfig)> {
    let base = FileConfig::load(&synthetic_dir().join("config.json")).unwrap().run;
    let mut runs = Vec::new();
    for mode in RankingMode::ALL {
        for icl in [false, true] {
            let name = if icl {
                format!("{}_icl", mode.as_str())
            } else {
                mode.as_str().to_string()
            };
            runs.push((
                name,
                RunConfig {
                    ranking_mode: mode,
                    icl_enabled: icl,
                    ..base.clone()
                },
            ));
        }
    }
    runs.push((
        "rationale_free".into(),
        RunConfig {
            rationale_free: true,
            ..base
        },
    ));
    runs
}

pub fn bundled_examples() -> Vec<Example> {
    load_dataset(&synthetic_dir().join("dataset.jsonl"), true).unwrap().0
}

pub fn bundled_engine() -> Engine<ScriptedBackend> {
    Engine::new(ScriptedBackend::from_path(&synthetic_dir().join("fixture.json")).unwrap())
}

pub fn run_bundled(engine: &Engine<ScriptedBackend>, config: &RunConfig, workers: usize) -> Vec<ExampleResult> {
    engine.run_dataset(&bundled_examples(), config, workers).unwrap()
}

/// A recorded HTTP request.
#[derive(Debug, Clone)]
pub struct Request {
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Value,
}

impl Request {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

pub type Handler = Arc<dyn Fn(&Request) -> (u16, String) + Send + Sync>;

/// Minimal HTTP/1.1 server on a loopback port, one connection per request.
pub struct MockServer {
    pub url: String,
    requests: Arc<Mutex<Vec<Request>>>,
}

impl MockServer {
    pub fn start(handler: Handler) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let handler = handler.clone();
                let log = log.clone();
                thread::spawn(move || serve(stream, &handler, &log));
            }
        });
        Self { url, requests }
    }

    pub fn requests(&self) -> Vec<Request> {
        self.requests.lock().unwrap().clone()
    }

    pub fn count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

fn serve(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<Request>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut stream = stream;
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut headers = Vec::new();
    let mut length = 0;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).unwrap_or(0) == 0 {
            return;
        }
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let mut body = vec![0; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let request = Request {
        path,
        headers,
        body: serde_json::from_slice(&body).unwrap_or(Value::Null),
    };
    log.lock().unwrap().push(request.clone());
    let (status, text) = handler(&request);
    let response = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}

pub fn ok(body: Value) -> (u16, String) {
    (200, body.to_string())
}

fn ln(p: f64) -> f64 {
    p.clamp(1e-9, 1.0 - 1e-9).ln()
}

/// Chat completion whose first position carries the given top-k tokens.
pub fn first_token_completion(tokens: &[(&str, f64)]) -> Value {
    let top: Vec<Value> = tokens.iter().map(|(t, lp)| json!({"token": t, "logprob": lp})).collect();
    let (first, first_lp) = tokens.first().copied().unwrap_or(("?", -10.0));
    json!({"choices": [{
        "index": 0,
        "message": {"role": "assistant", "content": first},
        "logprobs": {"content": [{"token": first, "logprob": first_lp, "top_logprobs": top}]},
        "finish_reason": "length",
    }]})
}

pub fn text_completion(texts: &[&str]) -> Value {
    let choices: Vec<Value> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"index": i, "message": {"role": "assistant", "content": t}, "finish_reason": "stop"}))
        .collect();
    json!({ "choices": choices })
}

fn message_parts(body: &Value) -> (Option<String>, String) {
    let content = &body["messages"][0]["content"];
    match content {
        Value::String(s) => (None, s.clone()),
        Value::Array(parts) => {
            let mut image = None;
            let mut text = String::new();
            for p in parts {
                match p["type"].as_str() {
                    Some("image_url") => image = p["image_url"]["url"].as_str().map(str::to_string),
                    Some("text") => text = p["text"].as_str().unwrap_or_default().to_string(),
                    _ => {}
                }
            }
            (image, text)
        }
        _ => (None, String::new()),
    }
}

fn after_last<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.rfind(marker).map(|i| text[i + marker.len()..].lines().next().unwrap_or("").trim())
}

/// An OpenAI-compatible server (plus `/nli` and `/embed`) answering from a
/// synthetic backend.
pub fn synthetic_handler(backend: SyntheticBackend) -> Handler {
    Arc::new(move |req: &Request| {
        let body = &req.body;
        if req.path.ends_with("/nli") {
            let p = backend
                .entail(body["premise"].as_str().unwrap(), body["hypothesis"].as_str().unwrap())
                .unwrap();
            return ok(json!({"entail_logit": ln(p), "neutral_logit": -20.0, "contra_logit": ln(1.0 - p)}));
        }
        if req.path.ends_with("/embed") {
            return ok(json!({"vector": backend.embed(body["text"].as_str().unwrap()).unwrap()}));
        }
        let (image, text) = message_parts(body);
        if let Some(frame) = image {
            let p = match text.strip_prefix("Q: ").and_then(|t| t.strip_suffix("\nA:")) {
                Some(q) => {
                    let q = q.strip_suffix(" (yes/no)").unwrap_or(q);
                    backend.answer_yes_probability(q, &frame)
                }
                None => backend.success_yes_probability(&text, &frame),
            };
            return match p {
                Ok(p) => ok(first_token_completion(&[("Yes", ln(p)), ("No", ln(1.0 - p))])),
                Err(_) => ok(json!({"choices": [{"index": 0, "message": {"content": ""}, "finish_reason": "content_filter"}]})),
            };
        }
        if text.starts_with("Rephrase each question") {
            let question = after_last(&text, "Question: ").unwrap();
            let answer = if after_last(&text, "Answer: ") == Some("Yes") { YesNo::Yes } else { YesNo::No };
            return ok(text_completion(&[&backend.rephrase(question, answer).unwrap()]));
        }
        let n = body["n"].as_u64().unwrap_or(1) as usize;
        let batch = backend.generate_candidates(&text, n).unwrap();
        let choices: Vec<Value> = batch
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let words: Vec<&str> = c.text.split_whitespace().collect();
                let per = c.log_likelihood / words.len() as f64;
                let tokens: Vec<Value> = words.iter().map(|w| json!({"token": w, "logprob": per, "top_logprobs": []})).collect();
                json!({"index": i, "message": {"content": c.text}, "logprobs": {"content": tokens}, "finish_reason": "stop"})
            })
            .collect();
        ok(json!({ "choices": choices }))
    })
}
