//! Scoring interface over a language model.
//!
//! A backend answers one question: given `prompt + prefix`, what are the
//! teacher-forced log-probabilities of each token of a forced continuation?
//! Decoders place the opening bracket of the next identifier at the end of
//! `prefix`, so a continuation is the label plus its terminator (`"7]"`).

mod http;
mod simulated;

pub use http::{HttpBackend, HttpConfig, HttpMode, LogprobUnit};
pub use simulated::{RelevanceEntry, SimulatedLm, SimulatedSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::TokenSeq;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// Network failure or timeout. Retryable.
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("tokenization mismatch for `{expected}`: backend produced {got:?}")]
    TokenizationMismatch { expected: String, got: Vec<String> },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("unrecognized prompt: {0}")]
    UnrecognizedPrompt(String),
    #[error("invalid scoring request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Unavailable { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringRequest {
    pub prompt: String,
    /// Ranking text generated so far, ending with the opening bracket of the
    /// identifier being scored.
    pub prefix: String,
    pub continuations: Vec<TokenSeq>,
}

impl ScoringRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.continuations.is_empty() {
            return Err(BackendError::InvalidRequest("no continuations".into()));
        }
        if self.continuations.iter().any(TokenSeq::is_empty) {
            return Err(BackendError::InvalidRequest("empty continuation".into()));
        }
        Ok(())
    }
}

/// Per-token natural-log probabilities of one continuation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuationScore {
    pub continuation: TokenSeq,
    pub token_logprobs: Vec<f64>,
    pub total_logprob: f64,
}

/// Slack for backends that report `0.0000001` for a certain token.
const POSITIVE_LOGPROB_SLACK: f64 = 1e-6;

impl ContinuationScore {
    /// Validates and sums the per-token values. Tiny positive values from
    /// floating-point noise are clamped to zero.
    pub fn new(continuation: TokenSeq, token_logprobs: Vec<f64>) -> Result<Self, BackendError> {
        if token_logprobs.len() != continuation.len() {
            return Err(BackendError::MalformedResponse(format!(
                "{} logprobs for {} tokens of `{}`",
                token_logprobs.len(),
                continuation.len(),
                continuation.rendered()
            )));
        }
        let mut clean = Vec::with_capacity(token_logprobs.len());
        for lp in token_logprobs {
            if lp.is_nan() || lp > POSITIVE_LOGPROB_SLACK {
                return Err(BackendError::MalformedResponse(format!(
                    "log-probability {lp} for `{}`",
                    continuation.rendered()
                )));
            }
            clean.push(lp.min(0.0));
        }
        let total_logprob = clean.iter().sum();
        Ok(Self {
            continuation,
            token_logprobs: clean,
            total_logprob,
        })
    }

    /// Joint probability of the whole continuation.
    pub fn probability(&self) -> f64 {
        self.total_logprob.exp()
    }
}

/// A language model that can score forced continuations.
///
/// Implementations must be safe to call from several threads at once and
/// must return identical scores for identical requests.
pub trait ScoringBackend: Send + Sync {
    /// Splits `label + terminator` into the backend's tokens.
    fn tokenize_label(&self, label: &str, terminator: &str) -> Result<TokenSeq, BackendError>;

    /// One score per continuation, in request order.
    fn score_continuations(&self, req: &ScoringRequest) -> Result<Vec<ContinuationScore>, BackendError>;

    /// Scores several independent requests. Backends with a batch endpoint
    /// override this to use a single round trip.
    fn score_batch(&self, reqs: &[ScoringRequest]) -> Result<Vec<Vec<ContinuationScore>>, BackendError> {
        reqs.iter().map(|r| self.score_continuations(r)).collect()
    }
}

impl<T: ScoringBackend + ?Sized> ScoringBackend for &T {
    fn tokenize_label(&self, label: &str, terminator: &str) -> Result<TokenSeq, BackendError> {
        (**self).tokenize_label(label, terminator)
    }
    fn score_continuations(&self, req: &ScoringRequest) -> Result<Vec<ContinuationScore>, BackendError> {
        (**self).score_continuations(req)
    }
    fn score_batch(&self, reqs: &[ScoringRequest]) -> Result<Vec<Vec<ContinuationScore>>, BackendError> {
        (**self).score_batch(reqs)
    }
}

impl<T: ScoringBackend + ?Sized> ScoringBackend for Box<T> {
    fn tokenize_label(&self, label: &str, terminator: &str) -> Result<TokenSeq, BackendError> {
        (**self).tokenize_label(label, terminator)
    }
    fn score_continuations(&self, req: &ScoringRequest) -> Result<Vec<ContinuationScore>, BackendError> {
        (**self).score_continuations(req)
    }
    fn score_batch(&self, reqs: &[ScoringRequest]) -> Result<Vec<Vec<ContinuationScore>>, BackendError> {
        (**self).score_batch(reqs)
    }
}

/// Checks that a response has one score per continuation, in order.
pub(crate) fn check_alignment(
    req: &ScoringRequest,
    scores: &[ContinuationScore],
) -> Result<(), BackendError> {
    if scores.len() != req.continuations.len() {
        return Err(BackendError::MalformedResponse(format!(
            "{} scores for {} continuations",
            scores.len(),
            req.continuations.len()
        )));
    }
    for (s, c) in scores.iter().zip(&req.continuations) {
        if &s.continuation != c {
            return Err(BackendError::MalformedResponse(format!(
                "score for `{}` returned where `{}` was expected",
                s.continuation.rendered(),
                c.rendered()
            )));
        }
    }
    Ok(())
}
