//! HTTP scoring adapter.
//!
//! Two wire modes are supported.
//!
//! **`score`** talks to a dedicated scoring service. Bodies are
//! newline-delimited JSON (`application/x-ndjson`), one object per line:
//!
//! ```text
//! POST {base}/tokenize   {"text":"10]"}
//!                     -> {"tokens":["1","0","]"]}
//! POST {base}/score      {"prompt":"...","prefix":"[","continuations":[{"tokens":["1","]"],"rendered":"1]"}]}
//!                        (one line per request in a batch)
//!                     -> {"scores":[{"token_logprobs":[-0.51,-0.01]}]}
//!                        (one line per request, same order)
//! ```
//!
//! **`echo`** drives an OpenAI-style completions endpoint with
//! `echo=true, max_tokens=0, logprobs=0`, one request per continuation, and
//! slices the continuation's tokens off the tail of the echoed prompt.
//!
//! Network failures, timeouts, HTTP 429 and 5xx are retried; anything else
//! fails the request immediately.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{check_alignment, BackendError, ContinuationScore, ScoringBackend, ScoringRequest};
use crate::domain::TokenSeq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HttpMode {
    #[default]
    Score,
    Echo,
}

/// Unit of the log-probabilities the server reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogprobUnit {
    #[default]
    Nat,
    Log10,
}

impl LogprobUnit {
    fn to_nats(self, v: f64) -> f64 {
        match self {
            LogprobUnit::Nat => v,
            LogprobUnit::Log10 => v * std::f64::consts::LN_10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub mode: HttpMode,
    /// Model name sent in echo mode.
    pub model: Option<String>,
    /// Name of the environment variable holding a bearer token.
    pub auth_env: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
    pub retry_backoff_ms: u64,
    pub max_in_flight: usize,
    pub logprob_unit: LogprobUnit,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            mode: HttpMode::Score,
            model: None,
            auth_env: Some("CAPCAL_API_KEY".into()),
            timeout_secs: 60.0,
            retries: 3,
            retry_backoff_ms: 200,
            max_in_flight: 8,
            logprob_unit: LogprobUnit::Nat,
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    cfg: HttpConfig,
    agent: ureq::Agent,
    token: Option<String>,
    gate: Semaphore,
}

#[derive(Deserialize)]
struct TokenizeResponse {
    tokens: Vec<String>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<WireScore>,
}

#[derive(Deserialize)]
struct WireScore {
    token_logprobs: Vec<f64>,
}

enum Failure {
    Retry(String),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs.max(0.001))))
            .http_status_as_error(false)
            .build();
        let token = cfg
            .auth_env
            .as_deref()
            .and_then(|v| std::env::var(v).ok())
            .filter(|t| !t.is_empty());
        Self {
            gate: Semaphore::new(cfg.max_in_flight),
            agent: ureq::Agent::new_with_config(config),
            token,
            cfg,
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn post_once(&self, url: &str, content_type: &str, body: &str) -> Result<String, Failure> {
        let _permit = self.gate.acquire();
        let mut req = self.agent.post(url).header("Content-Type", content_type);
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(e) => return Err(Failure::Retry(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retry(format!("reading body: {e}")))?;
        match status {
            200..=299 => Ok(text),
            429 | 500..=599 => Err(Failure::Retry(format!("HTTP {status}: {}", text.trim()))),
            _ => Err(Failure::Fatal(BackendError::MalformedResponse(format!(
                "HTTP {status}: {}",
                text.trim()
            )))),
        }
    }

    fn post(&self, path: &str, content_type: &str, body: &str) -> Result<String, BackendError> {
        let url = self.url(path);
        let attempts = self.cfg.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.post_once(&url, content_type, body) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(msg)) => {
                    log::warn!("POST {url} failed (attempt {attempt}/{attempts}): {msg}");
                    last = msg;
                    if attempt < attempts {
                        let backoff = self.cfg.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(6));
                        thread::sleep(Duration::from_millis(backoff));
                    }
                }
            }
        }
        Err(BackendError::Unavailable {
            attempts,
            message: last,
        })
    }

    fn echo(&self, text: &str) -> Result<(Vec<String>, Vec<Option<f64>>), BackendError> {
        let mut body = json!({
            "prompt": text,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 0.0,
        });
        if let Some(m) = &self.cfg.model {
            body["model"] = Value::String(m.clone());
        }
        let raw = self.post("v1/completions", "application/json", &body.to_string())?;
        let v: Value = serde_json::from_str(&raw)
            .map_err(|e| BackendError::MalformedResponse(format!("completions body: {e}")))?;
        let lp = &v["choices"][0]["logprobs"];
        let tokens: Vec<String> = serde_json::from_value(lp["tokens"].clone())
            .map_err(|e| BackendError::MalformedResponse(format!("logprobs.tokens: {e}")))?;
        let values: Vec<Option<f64>> = serde_json::from_value(lp["token_logprobs"].clone())
            .map_err(|e| BackendError::MalformedResponse(format!("logprobs.token_logprobs: {e}")))?;
        if tokens.len() != values.len() {
            return Err(BackendError::MalformedResponse(
                "tokens and token_logprobs differ in length".into(),
            ));
        }
        Ok((tokens, values))
    }

    fn score_one_echo(&self, req: &ScoringRequest, cont: &TokenSeq) -> Result<ContinuationScore, BackendError> {
        let full = format!("{}{}{}", req.prompt, req.prefix, cont.rendered());
        let (tokens, values) = self.echo(&full)?;
        let (tail, lps) = slice_tail(&tokens, &values, cont.rendered())?;
        if tail != cont.tokens() {
            return Err(BackendError::TokenizationMismatch {
                expected: cont.rendered().into(),
                got: tail,
            });
        }
        let lps = lps
            .into_iter()
            .map(|v| {
                v.map(|x| self.cfg.logprob_unit.to_nats(x)).ok_or_else(|| {
                    BackendError::MalformedResponse("null logprob inside continuation".into())
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        ContinuationScore::new(cont.clone(), lps)
    }

    fn score_batch_echo(&self, reqs: &[ScoringRequest]) -> Result<Vec<Vec<ContinuationScore>>, BackendError> {
        // Fan out every continuation; the semaphore bounds concurrency.
        thread::scope(|s| {
            let handles: Vec<Vec<_>> = reqs
                .iter()
                .map(|r| {
                    r.continuations
                        .iter()
                        .map(|c| s.spawn(move || self.score_one_echo(r, c)))
                        .collect()
                })
                .collect();
            handles
                .into_iter()
                .map(|hs| {
                    hs.into_iter()
                        .map(|h| h.join().expect("scoring thread panicked"))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect()
        })
    }

    fn score_batch_native(&self, reqs: &[ScoringRequest]) -> Result<Vec<Vec<ContinuationScore>>, BackendError> {
        let mut body = String::new();
        for r in reqs {
            body.push_str(&serde_json::to_string(r).expect("request serializes"));
            body.push('\n');
        }
        let raw = self.post("score", "application/x-ndjson", &body)?;
        let lines: Vec<&str> = raw.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != reqs.len() {
            return Err(BackendError::MalformedResponse(format!(
                "{} response lines for {} requests",
                lines.len(),
                reqs.len()
            )));
        }
        reqs.iter()
            .zip(lines)
            .map(|(r, line)| {
                let resp: ScoreResponse = serde_json::from_str(line)
                    .map_err(|e| BackendError::MalformedResponse(format!("score line: {e}")))?;
                if resp.scores.len() != r.continuations.len() {
                    return Err(BackendError::MalformedResponse(format!(
                        "{} scores for {} continuations",
                        resp.scores.len(),
                        r.continuations.len()
                    )));
                }
                let scores = r
                    .continuations
                    .iter()
                    .zip(resp.scores)
                    .map(|(c, w)| {
                        let lps = w
                            .token_logprobs
                            .into_iter()
                            .map(|v| self.cfg.logprob_unit.to_nats(v))
                            .collect();
                        ContinuationScore::new(c.clone(), lps)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                check_alignment(r, &scores)?;
                Ok(scores)
            })
            .collect()
    }
}

/// Takes trailing tokens whose surfaces concatenate to exactly `expected`.
/// Fails if a token straddles the boundary.
pub(crate) fn slice_tail(
    tokens: &[String],
    values: &[Option<f64>],
    expected: &str,
) -> Result<(Vec<String>, Vec<Option<f64>>), BackendError> {
    let mut len = 0;
    let mut start = tokens.len();
    while len < expected.len() && start > 0 {
        start -= 1;
        len += tokens[start].len();
    }
    let tail: Vec<String> = tokens[start..].to_vec();
    if len != expected.len() || tail.concat() != expected {
        return Err(BackendError::TokenizationMismatch {
            expected: expected.into(),
            got: tail,
        });
    }
    Ok((tail, values[start..].to_vec()))
}

impl ScoringBackend for HttpBackend {
    fn tokenize_label(&self, label: &str, terminator: &str) -> Result<TokenSeq, BackendError> {
        let text = format!("{label}{terminator}");
        let tokens = match self.cfg.mode {
            HttpMode::Score => {
                let body = format!("{}\n", json!({ "text": text }));
                let raw = self.post("tokenize", "application/x-ndjson", &body)?;
                let resp: TokenizeResponse = serde_json::from_str(raw.trim())
                    .map_err(|e| BackendError::MalformedResponse(format!("tokenize body: {e}")))?;
                resp.tokens
            }
            HttpMode::Echo => {
                // Tokenize in the position the label occupies: right after "[".
                let (tokens, values) = self.echo(&format!("[{text}"))?;
                slice_tail(&tokens, &values, &text)?.0
            }
        };
        let seq = TokenSeq::from_tokens(tokens);
        if seq.rendered() != text || seq.is_empty() {
            return Err(BackendError::TokenizationMismatch {
                expected: text,
                got: seq.tokens().to_vec(),
            });
        }
        Ok(seq)
    }

    fn score_continuations(&self, req: &ScoringRequest) -> Result<Vec<ContinuationScore>, BackendError> {
        Ok(self.score_batch(std::slice::from_ref(req))?.remove(0))
    }

    fn score_batch(&self, reqs: &[ScoringRequest]) -> Result<Vec<Vec<ContinuationScore>>, BackendError> {
        for r in reqs {
            r.validate()?;
        }
        match self.cfg.mode {
            HttpMode::Score => self.score_batch_native(reqs),
            HttpMode::Echo => self.score_batch_echo(reqs),
        }
    }
}
