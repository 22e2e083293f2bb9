use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine as _;
use pmd_core::probability::{normalize_top_logprobs, two_way_softmax, TokenProbPair};
use pmd_core::prompts::{build_rephrase_prompt, build_vqa_prompt, concat_question_answer};
use pmd_core::{CandidateQuestion, CandidateSource, YesNo};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{top_candidates, Backend, BackendError, BackendResult, CandidateBatch};
use crate::error::{EngineError, EngineResult};

/// Number of most likely first-position tokens requested per chat call.
pub const TOP_LOGPROBS: usize = 20;

const VQG_MAX_TOKENS: u32 = 40;
const REPHRASE_MAX_TOKENS: u32 = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// Base URL of the OpenAI-compatible server (`.../v1`).
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    /// Extra attempts after a transport failure.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub request_seed: Option<u64>,
    /// Base URL of the `/nli` endpoint; defaults to `endpoint_url`.
    #[serde(default)]
    pub nli_url: Option<String>,
    /// Base URL of the `/embed` endpoint; defaults to `endpoint_url`.
    #[serde(default)]
    pub embed_url: Option<String>,
    /// Environment variable holding a bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Adds the yes/no nudges used for models without constrained decoding.
    #[serde(default = "default_true")]
    pub gpt_compat: bool,
    /// JSONL file receiving every request/response pair.
    #[serde(default)]
    pub replay_log: Option<PathBuf>,
}

fn default_timeout_secs() -> f64 {
    60.0
}

fn default_max_retries() -> u32 {
    2
}

fn default_true() -> bool {
    true
}

impl BackendConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            request_seed: None,
            nli_url: None,
            embed_url: None,
            api_key_env: None,
            gpt_compat: true,
            replay_log: None,
        }
    }

    pub fn validate(&self) -> EngineResult<()> {
        if self.endpoint_url.trim().is_empty() {
            return Err(EngineError::Validation("backend endpoint_url is empty".into()));
        }
        if self.max_retries < 1 {
            return Err(EngineError::Validation("backend max_retries must be at least 1".into()));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(EngineError::Validation("backend timeout_secs must be positive".into()));
        }
        Ok(())
    }
}

enum LogSink {
    Off,
    File(BufWriter<File>),
    Memory(Vec<Value>),
}

/// Append-only log of every HTTP exchange, each tagged with a monotonically
/// increasing call index.
pub struct ReplayLog {
    next_index: AtomicU64,
    sink: Mutex<LogSink>,
}

impl ReplayLog {
    pub fn off() -> Self {
        Self::with_sink(LogSink::Off)
    }

    pub fn in_memory() -> Self {
        Self::with_sink(LogSink::Memory(Vec::new()))
    }

    pub fn to_file(path: &Path) -> EngineResult<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| EngineError::io(path, e))?;
        Ok(Self::with_sink(LogSink::File(BufWriter::new(file))))
    }

    fn with_sink(sink: LogSink) -> Self {
        Self {
            next_index: AtomicU64::new(0),
            sink: Mutex::new(sink),
        }
    }

    fn next(&self) -> u64 {
        self.next_index.fetch_add(1, Ordering::SeqCst)
    }

    fn record(&self, entry: Value) {
        let mut sink = self.sink.lock().unwrap_or_else(|p| p.into_inner());
        match &mut *sink {
            LogSink::Off => {}
            LogSink::File(w) => {
                let _ = serde_json::to_writer(&mut *w, &entry);
                let _ = w.write_all(b"\n");
                let _ = w.flush();
            }
            LogSink::Memory(v) => v.push(entry),
        }
    }

    /// Entries captured by an in-memory log.
    pub fn entries(&self) -> Vec<Value> {
        match &*self.sink.lock().unwrap_or_else(|p| p.into_inner()) {
            LogSink::Memory(v) => v.clone(),
            _ => Vec::new(),
        }
    }
}

/// Client for OpenAI-compatible chat completions plus the NLI and embedding
/// endpoints.
pub struct HttpBackend {
    config: BackendConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    log: ReplayLog,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    #[serde(default)]
    message: Option<ChatMessage>,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TopLogprob>,
}

#[derive(Debug, Deserialize)]
struct TopLogprob {
    token: String,
    logprob: f64,
}

#[derive(Debug, Deserialize)]
struct NliResponse {
    entail_logit: f64,
    #[serde(default)]
    #[allow(dead_code)]
    neutral_logit: Option<f64>,
    contra_logit: f64,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

fn join(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

fn looks_content_filtered(body: &str) -> bool {
    body.contains("content_filter") || body.contains("content management policy")
}

/// Yes/No probability from the first generated position: the top-k list of
/// that position is searched for both tokens (case and surrounding
/// whitespace ignored).
fn first_position_pair(choice: &ChatChoice) -> TokenProbPair {
    let Some(first) = choice
        .logprobs
        .as_ref()
        .and_then(|l| l.content.as_ref())
        .and_then(|c| c.first())
    else {
        return TokenProbPair::default();
    };
    let mut pair = TokenProbPair::default();
    let candidates = std::iter::once((first.token.as_str(), first.logprob))
        .chain(first.top_logprobs.iter().map(|t| (t.token.as_str(), t.logprob)));
    for (token, lp) in candidates {
        let norm = token.trim().trim_matches(|c: char| !c.is_alphanumeric());
        let slot = if norm.eq_ignore_ascii_case("yes") {
            &mut pair.yes_logprob
        } else if norm.eq_ignore_ascii_case("no") {
            &mut pair.no_logprob
        } else {
            continue;
        };
        if slot.is_none_or(|cur| lp > cur) {
            *slot = Some(lp);
        }
    }
    pair
}

fn image_part(frame_ref: &str) -> Value {
    let url = if frame_ref.starts_with("http://")
        || frame_ref.starts_with("https://")
        || frame_ref.starts_with("data:")
    {
        frame_ref.to_string()
    } else {
        match fs::read(frame_ref) {
            Ok(bytes) => {
                let mime = match Path::new(frame_ref)
                    .extension()
                    .and_then(|e| e.to_str())
                    .map(|e| e.to_ascii_lowercase())
                    .as_deref()
                {
                    Some("png") => "image/png",
                    Some("webp") => "image/webp",
                    Some("gif") => "image/gif",
                    _ => "image/jpeg",
                };
                format!(
                    "data:{mime};base64,{}",
                    base64::engine::general_purpose::STANDARD.encode(bytes)
                )
            }
            // left for the server to resolve
            Err(_) => frame_ref.to_string(),
        }
    };
    json!({"type": "image_url", "image_url": {"url": url}})
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> EngineResult<Self> {
        config.validate()?;
        let log = match &config.replay_log {
            Some(path) => ReplayLog::to_file(path)?,
            None => ReplayLog::off(),
        };
        Ok(Self::with_log(config, log))
    }

    pub fn with_log(config: BackendConfig, log: ReplayLog) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        Self {
            config,
            agent,
            api_key,
            log,
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn replay_log(&self) -> &ReplayLog {
        &self.log
    }

    /// One POST with transport retries. Server errors (5xx, 429) and IO
    /// failures are retried up to `max_retries` more times.
    fn post(&self, url: &str, body: &Value) -> BackendResult<Value> {
        let payload = body.to_string();
        let attempts = 1 + self.config.max_retries;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            let index = self.log.next();
            let mut request = self
                .agent
                .post(url)
                .header("Content-Type", "application/json");
            if let Some(key) = &self.api_key {
                request = request.header("Authorization", &format!("Bearer {key}"));
            }
            match request.send(payload.as_str()) {
                Ok(mut response) => {
                    let status = response.status().as_u16();
                    let text = response.body_mut().read_to_string().unwrap_or_default();
                    self.log.record(json!({
                        "call_index": index,
                        "attempt": attempt,
                        "url": url,
                        "request": body,
                        "status": status,
                        "response": text,
                    }));
                    if (200..300).contains(&status) {
                        return serde_json::from_str(&text)
                            .map_err(|e| BackendError::InvalidResponse(format!("{url}: {e}")));
                    }
                    if looks_content_filtered(&text) {
                        return Err(BackendError::ContentFiltered(format!("{url}: HTTP {status}")));
                    }
                    last_error = format!("{url}: HTTP {status}: {text}");
                    if status != 429 && status < 500 {
                        return Err(BackendError::Unavailable(last_error));
                    }
                }
                Err(e) => {
                    self.log.record(json!({
                        "call_index": index,
                        "attempt": attempt,
                        "url": url,
                        "request": body,
                        "error": e.to_string(),
                    }));
                    last_error = format!("{url}: {e}");
                }
            }
            log::warn!("request to {url} failed (attempt {}): {last_error}", attempt + 1);
        }
        Err(BackendError::Unavailable(last_error))
    }

    fn chat(&self, content: Value, n: usize, max_tokens: u32) -> BackendResult<ChatResponse> {
        let mut body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": content}],
            "logprobs": true,
            "top_logprobs": TOP_LOGPROBS,
            "n": n,
            "max_tokens": max_tokens,
        });
        if let Some(seed) = self.config.request_seed {
            body["seed"] = json!(seed);
        }
        let value = self.post(&join(&self.config.endpoint_url, "chat/completions"), &body)?;
        let response: ChatResponse = serde_json::from_value(value)
            .map_err(|e| BackendError::InvalidResponse(format!("chat completion: {e}")))?;
        if response
            .choices
            .iter()
            .any(|c| c.finish_reason.as_deref() == Some("content_filter"))
        {
            return Err(BackendError::ContentFiltered("chat completion".into()));
        }
        Ok(response)
    }

    fn image_prompt(&self, prompt: &str, frame_ref: &str) -> Value {
        json!([image_part(frame_ref), {"type": "text", "text": prompt}])
    }

    fn yes_probability(&self, prompt: &str, frame_ref: &str) -> BackendResult<f64> {
        let response = self.chat(self.image_prompt(prompt, frame_ref), 1, 1)?;
        let pair = response
            .choices
            .first()
            .map(first_position_pair)
            .unwrap_or_default();
        Ok(normalize_top_logprobs(pair))
    }

    fn candidates_once(&self, prompt: &str, max_candidates: usize) -> BackendResult<Vec<CandidateQuestion>> {
        let response = self.chat(json!(prompt), max_candidates, VQG_MAX_TOKENS)?;
        Ok(response
            .choices
            .iter()
            .filter_map(|choice| {
                let content = choice.message.as_ref()?.content.as_deref()?;
                let text = content.trim().lines().next()?.trim();
                if text.is_empty() {
                    return None;
                }
                let tokens = choice.logprobs.as_ref().and_then(|l| l.content.as_ref());
                let mut q = CandidateQuestion::new(
                    text,
                    tokens.map(|t| t.iter().map(|t| t.logprob).sum()).unwrap_or(0.0),
                    CandidateSource::DialogContext,
                );
                if let Some(t) = tokens.filter(|t| !t.is_empty()) {
                    q.token_count = t.len();
                }
                // hosted models cannot be forced into the yes/no grammar
                q.unconstrained = true;
                Some(q)
            })
            .collect())
    }

    fn rephrase_once(&self, question: &str, answer: YesNo) -> BackendResult<Option<String>> {
        let response = self.chat(json!(build_rephrase_prompt(question, answer)), 1, REPHRASE_MAX_TOKENS)?;
        Ok(response
            .choices
            .first()
            .and_then(|c| c.message.as_ref())
            .and_then(|m| m.content.as_deref())
            .and_then(|c| c.trim().lines().next())
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty()))
    }
}

impl Backend for HttpBackend {
    fn generate_candidates(&self, prompt: &str, max_candidates: usize) -> BackendResult<CandidateBatch> {
        // an empty completion gets exactly one more request
        for _ in 0..2 {
            let mut candidates = self.candidates_once(prompt, max_candidates)?;
            if !candidates.is_empty() {
                candidates = top_candidates(candidates, usize::MAX);
                let mut seen = std::collections::BTreeSet::new();
                candidates.retain(|c| seen.insert(c.text.trim().to_lowercase()));
                candidates.truncate(max_candidates);
                return Ok(CandidateBatch {
                    candidates,
                    skip: false,
                });
            }
        }
        Ok(CandidateBatch {
            candidates: Vec::new(),
            skip: true,
        })
    }

    fn answer_yes_probability(&self, question: &str, frame_ref: &str) -> BackendResult<f64> {
        self.yes_probability(&build_vqa_prompt(question, self.config.gpt_compat), frame_ref)
    }

    fn success_yes_probability(&self, prompt: &str, frame_ref: &str) -> BackendResult<f64> {
        self.yes_probability(prompt, frame_ref)
    }

    fn rephrase(&self, question: &str, answer: YesNo) -> BackendResult<String> {
        for _ in 0..2 {
            if let Some(statement) = self.rephrase_once(question, answer)? {
                return Ok(statement);
            }
        }
        Ok(concat_question_answer(question, answer))
    }

    fn entail(&self, premise: &str, hypothesis: &str) -> BackendResult<f64> {
        let base = self.config.nli_url.as_deref().unwrap_or(&self.config.endpoint_url);
        let value = self.post(&join(base, "nli"), &json!({"premise": premise, "hypothesis": hypothesis}))?;
        let r: NliResponse = serde_json::from_value(value)
            .map_err(|e| BackendError::InvalidResponse(format!("nli: {e}")))?;
        Ok(two_way_softmax(r.entail_logit, r.contra_logit))
    }

    fn embed(&self, text: &str) -> BackendResult<Vec<f64>> {
        let base = self.config.embed_url.as_deref().unwrap_or(&self.config.endpoint_url);
        let value = self.post(&join(base, "embed"), &json!({"text": text}))?;
        let r: EmbedResponse = serde_json::from_value(value)
            .map_err(|e| BackendError::InvalidResponse(format!("embed: {e}")))?;
        if r.vector.is_empty() {
            return Err(BackendError::InvalidResponse("embed: empty vector".into()));
        }
        Ok(r.vector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn choice(tokens: &[(&str, f64)]) -> ChatChoice {
        ChatChoice {
            message: None,
            finish_reason: None,
            logprobs: Some(ChoiceLogprobs {
                content: Some(vec![TokenLogprob {
                    token: tokens[0].0.into(),
                    logprob: tokens[0].1,
                    top_logprobs: tokens
                        .iter()
                        .map(|(t, l)| TopLogprob { token: (*t).into(), logprob: *l })
                        .collect(),
                }]),
            }),
        }
    }

    #[test]
    fn first_position_tokens() {
        let pair = first_position_pair(&choice(&[("Yes", 0.3f64.ln()), (" no", 0.1f64.ln()), ("Maybe", -3.0)]));
        assert!((normalize_top_logprobs(pair) - 0.75).abs() < 1e-12);
        let only_yes = first_position_pair(&choice(&[("YES", -0.1), ("The", -3.0)]));
        assert_eq!(normalize_top_logprobs(only_yes), 1.0);
        let neither = first_position_pair(&choice(&[("The", -0.1)]));
        assert_eq!(normalize_top_logprobs(neither), 0.5);
    }

    #[test]
    fn config_validation() {
        let mut c = BackendConfig::new("http://localhost:1", "m");
        c.validate().unwrap();
        c.max_retries = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn image_parts() {
        assert_eq!(image_part("https://x/y.jpg")["image_url"]["url"], "https://x/y.jpg");
        assert_eq!(image_part("frames/missing.jpg")["image_url"]["url"], "frames/missing.jpg");
    }
}
