//! HTTP adapter against an in-process mock server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use capcal::backend::{
    BackendError, HttpBackend, HttpConfig, HttpMode, LogprobUnit, ScoringBackend, ScoringRequest, SimulatedLm,
};
use capcal::calibration::{decode, CalibrationConfig, Method};
use capcal::prompting::{PlaceholderPolicy, PromptTemplate};
use capcal::{IdentifierScheme, Query, RerankTask, TokenSeq};
use serde_json::{json, Value};

struct Request {
    path: String,
    headers: Vec<(String, String)>,
    body: String,
}

impl Request {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

type Handler = dyn Fn(&Request) -> (u16, String) + Send + Sync;

struct MockServer {
    base_url: String,
    hits: Arc<AtomicUsize>,
    log: Arc<Mutex<Vec<Request>>>,
    peak: Arc<AtomicUsize>,
}

fn read_request(stream: &mut TcpStream) -> Option<Request> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1)?.to_string();
    let mut headers = Vec::new();
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (k, v) = h.split_once(':')?;
        headers.push((k.trim().to_string(), v.trim().to_string()));
    }
    let len: usize = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some(Request {
        path,
        headers,
        body: String::from_utf8(body).ok()?,
    })
}

impl MockServer {
    fn start(delay: Duration, handler: impl Fn(&Request) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}", listener.local_addr().unwrap());
        let handler: Arc<Handler> = Arc::new(handler);
        let hits = Arc::new(AtomicUsize::new(0));
        let log = Arc::new(Mutex::new(Vec::new()));
        let peak = Arc::new(AtomicUsize::new(0));
        let live = Arc::new(AtomicUsize::new(0));
        let (h2, l2, p2) = (hits.clone(), log.clone(), peak.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let (handler, hits, log, peak, live) = (handler.clone(), h2.clone(), l2.clone(), p2.clone(), live.clone());
                thread::spawn(move || {
                    let Some(req) = read_request(&mut stream) else { return };
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    hits.fetch_add(1, Ordering::SeqCst);
                    thread::sleep(delay);
                    let (status, body) = handler(&req);
                    live.fetch_sub(1, Ordering::SeqCst);
                    log.lock().unwrap().push(req);
                    let resp = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    let _ = stream.write_all(resp.as_bytes());
                });
            }
        });
        Self {
            base_url,
            hits,
            log,
            peak,
        }
    }
}

fn config(base_url: &str, mode: HttpMode) -> HttpConfig {
    HttpConfig {
        base_url: base_url.to_string(),
        mode,
        auth_env: None,
        timeout_secs: 5.0,
        retries: 2,
        retry_backoff_ms: 1,
        ..HttpConfig::default()
    }
}

fn task() -> RerankTask {
    RerankTask::new(
        Query::new("q", "rust borrow checker").unwrap(),
        vec![
            ("a".into(), "a recipe for soup".into()),
            ("b".into(), "ownership and borrowing rules".into()),
            ("c".into(), "lifetimes in function signatures".into()),
        ],
        IdentifierScheme::Numeric,
        PlaceholderPolicy::default(),
    )
    .unwrap()
}

/// Answers the native protocol by delegating to a simulator.
fn simulated_score_server(sim: SimulatedLm) -> MockServer {
    MockServer::start(Duration::ZERO, move |req| match req.path.as_str() {
        "/tokenize" => {
            let v: Value = serde_json::from_str(req.body.trim()).unwrap();
            let text = v["text"].as_str().unwrap();
            let tokens: Vec<String> = text.chars().map(String::from).collect();
            (200, json!({ "tokens": tokens }).to_string())
        }
        "/score" => {
            let mut out = String::new();
            for line in req.body.lines().filter(|l| !l.is_empty()) {
                let r: ScoringRequest = serde_json::from_str(line).unwrap();
                let scores = sim.simulate(&r).unwrap();
                let wire: Vec<Value> = scores
                    .iter()
                    .map(|s| json!({ "token_logprobs": s.token_logprobs }))
                    .collect();
                out.push_str(&json!({ "scores": wire }).to_string());
                out.push('\n');
            }
            (200, out)
        }
        _ => (404, "not found".into()),
    })
}

#[test]
fn score_mode_matches_direct_simulation() {
    let t = task();
    let sim = SimulatedLm::new(vec![1.0, 0.0, 0.5], 1.0)
        .with_relevance("q", "b", 1.2)
        .with_relevance("q", "c", 0.8)
        .with_task(&t);
    let server = simulated_score_server(sim.clone());
    let http = HttpBackend::new(config(&server.base_url, HttpMode::Score));
    let tpl = PromptTemplate::default();
    for method in [Method::Base, Method::CapCal(CalibrationConfig::default())] {
        let direct = decode(&sim, &t, &tpl, &method).unwrap();
        let remote = decode(&http, &t, &tpl, &method).unwrap();
        assert_eq!(direct.permutation, remote.permutation);
        for (a, b) in direct.trace.iter().zip(&remote.trace) {
            for (k, v) in &a.scores {
                assert!((v - b.scores[k]).abs() < 1e-12);
            }
        }
    }
    let log = server.log.lock().unwrap();
    let score = log.iter().find(|r| r.path == "/score").unwrap();
    assert_eq!(score.header("content-type"), Some("application/x-ndjson"));
    // The calibrated decoder batches the main and the empty prompt together.
    assert!(log.iter().any(|r| r.path == "/score" && r.body.lines().count() == 2));
}

#[test]
fn retries_then_succeeds() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let server = MockServer::start(Duration::ZERO, move |_| {
        if c.fetch_add(1, Ordering::SeqCst) < 2 {
            (503, "busy".into())
        } else {
            (200, json!({ "tokens": ["1", "]"] }).to_string())
        }
    });
    let http = HttpBackend::new(config(&server.base_url, HttpMode::Score));
    let seq = http.tokenize_label("1", "]").unwrap();
    assert_eq!(seq.tokens(), ["1", "]"]);
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn persistent_failure_is_unavailable() {
    let server = MockServer::start(Duration::ZERO, |_| (429, "slow down".into()));
    let http = HttpBackend::new(config(&server.base_url, HttpMode::Score));
    match http.tokenize_label("1", "]") {
        Err(BackendError::Unavailable { attempts: 3, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(Duration::ZERO, |_| (400, "bad".into()));
    let http = HttpBackend::new(config(&server.base_url, HttpMode::Score));
    assert!(matches!(
        http.tokenize_label("1", "]"),
        Err(BackendError::MalformedResponse(_))
    ));
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let http = HttpBackend::new(config(&format!("http://127.0.0.1:{port}"), HttpMode::Score));
    assert!(matches!(
        http.tokenize_label("1", "]"),
        Err(BackendError::Unavailable { .. })
    ));
}

#[test]
fn wrong_tokenization_is_rejected() {
    let server = MockServer::start(Duration::ZERO, |_| (200, json!({ "tokens": ["1"] }).to_string()));
    let http = HttpBackend::new(config(&server.base_url, HttpMode::Score));
    assert!(matches!(
        http.tokenize_label("1", "]"),
        Err(BackendError::TokenizationMismatch { .. })
    ));
}

#[test]
fn bearer_token_from_environment() {
    std::env::set_var("CAPCAL_TEST_TOKEN_AUTH", "s3cret");
    let server = MockServer::start(Duration::ZERO, |req| {
        if req.header("authorization") == Some("Bearer s3cret") {
            (200, json!({ "tokens": ["1", "]"] }).to_string())
        } else {
            (401, "unauthorized".into())
        }
    });
    let cfg = HttpConfig {
        auth_env: Some("CAPCAL_TEST_TOKEN_AUTH".into()),
        ..config(&server.base_url, HttpMode::Score)
    };
    HttpBackend::new(cfg).tokenize_label("1", "]").unwrap();
    let anonymous = HttpBackend::new(config(&server.base_url, HttpMode::Score));
    assert!(anonymous.tokenize_label("1", "]").is_err());
}

/// Completions endpoint that tokenizes one character per token, except that
/// it merges any character pair listed in `merge`. Every token gets
/// log-probability -0.1 in the configured unit, the first gets null.
fn echo_server(delay: Duration, merge: &'static [&'static str]) -> MockServer {
    MockServer::start(delay, move |req| {
        assert_eq!(req.path, "/v1/completions");
        let v: Value = serde_json::from_str(&req.body).unwrap();
        assert_eq!(v["echo"], true);
        assert_eq!(v["max_tokens"], 0);
        let prompt = v["prompt"].as_str().unwrap();
        let chars: Vec<char> = prompt.chars().collect();
        let mut tokens = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let pair: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            if pair.chars().count() == 2 && merge.contains(&pair.as_str()) {
                tokens.push(pair);
                i += 2;
            } else {
                tokens.push(chars[i].to_string());
                i += 1;
            }
        }
        let lps: Vec<Value> = (0..tokens.len())
            .map(|i| if i == 0 { Value::Null } else { json!(-0.1) })
            .collect();
        (
            200,
            json!({ "choices": [{ "logprobs": { "tokens": tokens, "token_logprobs": lps } }] }).to_string(),
        )
    })
}

#[test]
fn echo_mode_slices_the_continuation() {
    let server = echo_server(Duration::ZERO, &[]);
    let http = HttpBackend::new(HttpConfig {
        model: Some("m".into()),
        ..config(&server.base_url, HttpMode::Echo)
    });
    let seq = http.tokenize_label("12", "]").unwrap();
    assert_eq!(seq.tokens(), ["1", "2", "]"]);
    let scores = http
        .score_continuations(&ScoringRequest {
            prompt: "prompt text".into(),
            prefix: "[".into(),
            continuations: vec![seq, TokenSeq::from_tokens(["3", "]"])],
        })
        .unwrap();
    assert!((scores[0].total_logprob + 0.3).abs() < 1e-12);
    assert!((scores[1].total_logprob + 0.2).abs() < 1e-12);
    let log = server.log.lock().unwrap();
    assert!(log.iter().all(|r| serde_json::from_str::<Value>(&r.body).unwrap()["model"] == "m"));
}

#[test]
fn echo_mode_log10_is_converted() {
    let server = echo_server(Duration::ZERO, &[]);
    let http = HttpBackend::new(HttpConfig {
        logprob_unit: LogprobUnit::Log10,
        ..config(&server.base_url, HttpMode::Echo)
    });
    let scores = http
        .score_continuations(&ScoringRequest {
            prompt: "p".into(),
            prefix: "[".into(),
            continuations: vec![TokenSeq::from_tokens(["1", "]"])],
        })
        .unwrap();
    assert!((scores[0].total_logprob + 0.2 * std::f64::consts::LN_10).abs() < 1e-12);
}

#[test]
fn echo_mode_straddling_token_is_a_mismatch() {
    // "[1" merges across the prefix/continuation boundary.
    let server = echo_server(Duration::ZERO, &["[1"]);
    let http = HttpBackend::new(config(&server.base_url, HttpMode::Echo));
    let err = http
        .score_continuations(&ScoringRequest {
            prompt: "p".into(),
            prefix: "[".into(),
            continuations: vec![TokenSeq::from_tokens(["1", "]"])],
        })
        .unwrap_err();
    assert!(matches!(err, BackendError::TokenizationMismatch { .. }), "{err:?}");
}

#[test]
fn echo_mode_respects_in_flight_cap() {
    let server = echo_server(Duration::from_millis(30), &[]);
    let http = HttpBackend::new(HttpConfig {
        max_in_flight: 2,
        ..config(&server.base_url, HttpMode::Echo)
    });
    let conts: Vec<TokenSeq> = (1..=8).map(|i| TokenSeq::from_tokens([i.to_string(), "]".into()])).collect();
    http.score_continuations(&ScoringRequest {
        prompt: "p".into(),
        prefix: "[".into(),
        continuations: conts,
    })
    .unwrap();
    assert_eq!(server.hits.load(Ordering::SeqCst), 8);
    let peak = server.peak.load(Ordering::SeqCst);
    assert!((1..=2).contains(&peak), "peak concurrency {peak}");
}
