//! Model responses for QA items: an OpenAI-compatible vision chat endpoint, an
//! on-disk response cache, or a seeded mock model.
//!
//! Every item yields exactly one [`ModelResponse`]; request failures are
//! recorded on the response rather than dropped. Only an authentication
//! rejection aborts a run.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::qa::{Probe, ProbeEntry, ProbeKind, QAItem};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Up to and including the API version, e.g. `http://host:8000/v1`.
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token. Empty for
    /// endpoints without auth.
    #[serde(default)]
    pub auth_token_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallel")]
    pub max_parallel_requests: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_backoff")]
    pub initial_backoff_ms: u64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_parallel() -> usize {
    4
}
fn default_backoff() -> u64 {
    500
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            auth_token_env: String::new(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            max_parallel_requests: default_parallel(),
            temperature: 0.0,
            initial_backoff_ms: default_backoff(),
            max_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_parallel_requests == 0 {
            return Err(Error::Config(
                "max_parallel_requests must be at least 1".into(),
            ));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(Error::Config("timeout_secs must be positive".into()));
        }
        if self.model_name.trim().is_empty() {
            return Err(Error::Config("model_name is empty".into()));
        }
        Ok(())
    }

    fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseSource {
    Remote,
    Cache,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub qa_id: String,
    /// Verbatim, untrimmed.
    pub raw_text: String,
    pub source: ResponseSource,
    pub latency_ms: u64,
    #[serde(default)]
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Anything that can answer a QA item. `Err` aborts the whole run.
pub trait Responder: Sync {
    fn model_name(&self) -> &str;
    fn respond(&self, item: &QAItem) -> Result<ModelResponse>;
}

pub struct RemoteClient {
    config: EndpointConfig,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

impl RemoteClient {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        config.validate()?;
        let token = if config.auth_token_env.is_empty() {
            None
        } else {
            Some(std::env::var(&config.auth_token_env).map_err(|_| {
                Error::Config(format!(
                    "environment variable {} (auth token) is not set",
                    config.auth_token_env
                ))
            })?)
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| Error::Request(e.to_string()))?;
        Ok(RemoteClient {
            config,
            token,
            http,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn request_body(&self, item: &QAItem, image_url: &str) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "image_url", "image_url": {"url": image_url}},
                    {"type": "text", "text": item.prompt},
                ],
            }],
        });
        if let Some(n) = self.config.max_tokens {
            body["max_tokens"] = n.into();
        }
        body
    }
}

/// Remote and data URLs pass through; anything else is read from disk and
/// inlined as a base64 data URL.
pub fn image_url_for(uri: &str) -> Result<String> {
    let lower = uri.to_ascii_lowercase();
    if lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("data:") {
        return Ok(uri.to_string());
    }
    let path = uri.strip_prefix("file://").unwrap_or(uri);
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mime = match Path::new(path)
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    };
    Ok(format!(
        "data:{mime};base64,{}",
        base64::engine::general_purpose::STANDARD.encode(bytes)
    ))
}

/// `choices[0].message.content`, as a string or as text parts.
fn extract_content(json: &serde_json::Value) -> Option<String> {
    let content = json
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?;
    match content {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(|t| t.as_str()))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

enum Attempt {
    Done(String),
    Transient(String),
    Fatal(String),
}

/// One chat completion for one item, retried with exponential backoff on
/// transport errors, 429 and 5xx.
pub fn query_remote(client: &RemoteClient, item: &QAItem) -> Result<ModelResponse> {
    let start = Instant::now();
    let failed = |attempts: u32, msg: String| ModelResponse {
        qa_id: item.qa_id.clone(),
        raw_text: String::new(),
        source: ResponseSource::Remote,
        latency_ms: start.elapsed().as_millis() as u64,
        attempts,
        failed: true,
        error: Some(msg),
    };
    let image_url = match image_url_for(&item.image_uri) {
        Ok(u) => u,
        Err(e) => return Ok(failed(0, e.to_string())),
    };
    let body = client.request_body(item, &image_url);
    let url = client.config.completions_url();
    let max_attempts = client.config.max_retries + 1;
    let mut last_error = String::new();
    for attempt in 1..=max_attempts {
        let mut req = client.http.post(&url).json(&body);
        if let Some(token) = &client.token {
            req = req.bearer_auth(token);
        }
        let outcome = match req.send() {
            Err(e) => Attempt::Transient(e.to_string()),
            Ok(resp) => {
                let status = resp.status().as_u16();
                match status {
                    401 | 403 => return Err(Error::Auth(status)),
                    200..=299 => match resp.json::<serde_json::Value>() {
                        Ok(json) => match extract_content(&json) {
                            Some(text) => Attempt::Done(text),
                            None => Attempt::Fatal("response has no message content".into()),
                        },
                        Err(e) => Attempt::Transient(format!("unreadable body: {e}")),
                    },
                    408 | 429 | 500..=599 => Attempt::Transient(format!("HTTP {status}")),
                    _ => Attempt::Fatal(format!("HTTP {status}")),
                }
            }
        };
        match outcome {
            Attempt::Done(raw_text) => {
                return Ok(ModelResponse {
                    qa_id: item.qa_id.clone(),
                    raw_text,
                    source: ResponseSource::Remote,
                    latency_ms: start.elapsed().as_millis() as u64,
                    attempts: attempt,
                    failed: false,
                    error: None,
                })
            }
            Attempt::Fatal(msg) => return Ok(failed(attempt, msg)),
            Attempt::Transient(msg) => {
                tracing::debug!(qa_id = %item.qa_id, attempt, %msg, "transient failure");
                last_error = msg;
                if attempt < max_attempts {
                    let factor = 1u64 << (attempt - 1).min(16);
                    let wait = client
                        .config
                        .initial_backoff_ms
                        .saturating_mul(factor)
                        .min(30_000);
                    std::thread::sleep(Duration::from_millis(wait));
                }
            }
        }
    }
    Ok(failed(
        max_attempts,
        format!("retries exhausted: {last_error}"),
    ))
}

impl Responder for RemoteClient {
    fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn respond(&self, item: &QAItem) -> Result<ModelResponse> {
        query_remote(self, item)
    }
}

/// Response cache keyed by `(model_name, qa_id)`, one JSON file per entry.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    model_name: String,
    qa_id: String,
    raw_text: String,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ResponseCache { dir })
    }

    fn entry_path(&self, model_name: &str, qa_id: &str) -> PathBuf {
        let mut h = Sha256::new();
        h.update(model_name.as_bytes());
        h.update([0]);
        h.update(qa_id.as_bytes());
        self.dir
            .join(format!("{}.json", hex::encode(&h.finalize()[..16])))
    }

    /// `None` on a miss; a corrupt or mismatched entry is a miss too.
    pub fn get(&self, model_name: &str, qa_id: &str) -> Option<String> {
        let path = self.entry_path(model_name, qa_id);
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(e) if e.model_name == model_name && e.qa_id == qa_id => Some(e.raw_text),
            _ => {
                tracing::warn!(path = %path.display(), "corrupt cache entry; treating as a miss");
                None
            }
        }
    }

    pub fn put(&self, model_name: &str, qa_id: &str, raw_text: &str) -> Result<()> {
        let path = self.entry_path(model_name, qa_id);
        let entry = CacheEntry {
            model_name: model_name.into(),
            qa_id: qa_id.into(),
            raw_text: raw_text.into(),
        };
        let mut tmp =
            tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        tmp.write_all(&serde_json::to_vec(&entry).expect("serializable"))
            .map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }

    /// Cached text with `source = cache`, or a fresh query that is stored
    /// unless it failed.
    pub fn cached_or_query(
        &self,
        responder: &dyn Responder,
        item: &QAItem,
    ) -> Result<ModelResponse> {
        let model = responder.model_name();
        if let Some(raw_text) = self.get(model, &item.qa_id) {
            return Ok(ModelResponse {
                qa_id: item.qa_id.clone(),
                raw_text,
                source: ResponseSource::Cache,
                latency_ms: 0,
                attempts: 0,
                failed: false,
                error: None,
            });
        }
        let resp = responder.respond(item)?;
        if !resp.failed {
            self.put(model, &item.qa_id, &resp.raw_text)?;
        }
        Ok(resp)
    }
}

/// A responder backed by a cache.
pub struct Cached<'a, R: Responder> {
    pub inner: &'a R,
    pub cache: &'a ResponseCache,
}

impl<R: Responder> Responder for Cached<'_, R> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn respond(&self, item: &QAItem) -> Result<ModelResponse> {
        self.cache.cached_or_query(self.inner, item)
    }
}

/// Maps a distractor score to the probability the mock answers "yes".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HallucinationCurve {
    Constant {
        p: f64,
    },
    /// `1 / (1 + exp(-slope * (score - midpoint)))`
    Logistic {
        slope: f64,
        midpoint: f64,
    },
}

impl HallucinationCurve {
    pub fn probability(&self, score: f64) -> f64 {
        match *self {
            HallucinationCurve::Constant { p } => p,
            HallucinationCurve::Logistic { slope, midpoint } => {
                1.0 / (1.0 + (-slope * (score - midpoint)).exp())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockModelConfig {
    pub yes_bias_for_positives: f64,
    pub hallucination_curve: HallucinationCurve,
    #[serde(default = "default_mock_seed")]
    pub seed: u64,
}

fn default_mock_seed() -> u64 {
    seeding::DEFAULT_SEED
}

impl Default for MockModelConfig {
    fn default() -> Self {
        MockModelConfig {
            yes_bias_for_positives: 0.9,
            hallucination_curve: HallucinationCurve::Logistic {
                slope: 10.0,
                midpoint: 0.5,
            },
            seed: seeding::DEFAULT_SEED,
        }
    }
}

impl MockModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.yes_bias_for_positives) {
            return Err(Error::Config(
                "yes_bias_for_positives must be in [0, 1]".into(),
            ));
        }
        match self.hallucination_curve {
            HallucinationCurve::Constant { p } if !(0.0..=1.0).contains(&p) => Err(Error::Config(
                "constant curve probability must be in [0, 1]".into(),
            )),
            HallucinationCurve::Logistic { slope, midpoint }
                if !(slope >= 0.0) || !midpoint.is_finite() =>
            {
                Err(Error::Config(
                    "logistic curve needs a finite midpoint and slope >= 0".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Answers binary items with "Yes, ..."/"No, ..." and multi-option items
/// with the list of selected candidates. Positives are affirmed with
/// probability `yes_bias_for_positives`, distractors with the curve evaluated
/// at their score. `distractor_score` overrides the score stored in a binary
/// item's probe. Draws are keyed by `qa_id`, so they do not depend on order.
pub fn mock_respond(
    mock: &MockModelConfig,
    item: &QAItem,
    distractor_score: Option<f64>,
) -> ModelResponse {
    let mut rng = seeding::rng_for(mock.seed, &["mock", &item.qa_id]);
    let p_yes = |e: &ProbeEntry, override_score: Option<f64>| match e.kind {
        ProbeKind::Positive => mock.yes_bias_for_positives,
        _ => mock
            .hallucination_curve
            .probability(override_score.or(e.score).unwrap_or(0.0)),
    };
    let raw_text = match &item.probe {
        Probe::Single(e) => {
            if rng.gen::<f64>() < p_yes(e, distractor_score) {
                format!("Yes, there is a {} in the image.", e.text)
            } else {
                format!("No, there is no {} in the image.", e.text)
            }
        }
        Probe::Options(opts) => {
            let chosen: Vec<&str> = opts
                .iter()
                .filter(|e| rng.gen::<f64>() < p_yes(e, None))
                .map(|e| e.text.as_str())
                .collect();
            if chosen.is_empty() {
                "None of them.".to_string()
            } else {
                format!("I can see: {}.", chosen.join(", "))
            }
        }
    };
    ModelResponse {
        qa_id: item.qa_id.clone(),
        raw_text,
        source: ResponseSource::Mock,
        latency_ms: 0,
        attempts: 1,
        failed: false,
        error: None,
    }
}

pub struct MockModel {
    pub name: String,
    pub config: MockModelConfig,
}

impl MockModel {
    pub fn new(config: MockModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(MockModel {
            name: "mock".into(),
            config,
        })
    }
}

impl Responder for MockModel {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn respond(&self, item: &QAItem) -> Result<ModelResponse> {
        Ok(mock_respond(&self.config, item, None))
    }
}

/// Answers every item with at most `max_parallel` in flight. Output order
/// matches `items`.
pub fn run_responder(
    items: &[QAItem],
    responder: &dyn Responder,
    max_parallel: usize,
) -> Result<Vec<ModelResponse>> {
    let workers = max_parallel.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<ModelResponse>>> = Mutex::new(vec![None; items.len()]);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                match responder.respond(item) {
                    Ok(r) => slots.lock().unwrap()[i] = Some(r),
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        first_error.lock().unwrap().get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    Ok(slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every item answered"))
        .collect())
}

pub const RESPONSES_SCHEMA_VERSION: u64 = 1;

/// First line of a response file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponsesHeader {
    pub schema_version: u64,
    pub model_name: String,
    pub run_config_digest: String,
}

impl ResponsesHeader {
    pub fn new(model_name: impl Into<String>, run_config_digest: impl Into<String>) -> Self {
        ResponsesHeader {
            schema_version: RESPONSES_SCHEMA_VERSION,
            model_name: model_name.into(),
            run_config_digest: run_config_digest.into(),
        }
    }
}

pub fn render_responses(header: &ResponsesHeader, responses: &[ModelResponse]) -> String {
    let mut out = serde_json::to_string(header).expect("serializable");
    out.push('\n');
    for r in responses {
        out.push_str(&serde_json::to_string(r).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn parse_responses(text: &str) -> Result<(ResponsesHeader, Vec<ModelResponse>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or(Error::EmptyInput("response file has no header"))?;
    let header: ResponsesHeader =
        serde_json::from_str(first).map_err(|e| Error::json("response header", 1, &e))?;
    if header.schema_version != RESPONSES_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            what: "response file",
            found: header.schema_version,
            expected: RESPONSES_SCHEMA_VERSION,
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        out.push(serde_json::from_str(line).map_err(|e| Error::json("responses", i + 1, &e))?);
    }
    Ok((header, out))
}

pub fn write_responses(
    path: &Path,
    header: &ResponsesHeader,
    responses: &[ModelResponse],
) -> Result<()> {
    fs::write(path, render_responses(header, responses)).map_err(|e| Error::io(path, e))
}

pub fn read_responses(path: &Path) -> Result<(ResponsesHeader, Vec<ModelResponse>)> {
    parse_responses(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
