//! Content-agnostic probability calibration.
//!
//! At decode step `k`, with candidate set `C` still unranked, every candidate
//! `d` gets two identifier-level probabilities: `p_main(d)` under the real
//! prompt and `p_prior(d)` under the content-free prompt. The calibrated
//! score is
//!
//! ```text
//! alpha = beta * H(p_main normalized over C)          (entropy in nats)
//! S(d)  = p_main(d) - alpha * (p_prior_norm(d) - 1/|C|)
//! ```
//!
//! so a confident model (low entropy) is barely corrected, and an uncertain
//! one has its positional preferences, measured against the uniform
//! distribution, subtracted out. The candidate with the highest `S` is
//! emitted and removed from `C`.

mod decode;
mod window;

pub use decode::{
    decode, decode_base, decode_capcal, CalibratedRanking, DecodeError, ListwiseRanker, LlmRanker, Method,
};
pub use window::{sliding_window_rerank, WindowConfig};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ScoringBackend, ScoringRequest};

/// When the content-free prompt is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Every step, with the same generated prefix as the main stream.
    #[default]
    Lockstep,
    /// Once at step 1; later steps renormalize it over the remaining set.
    StaticRenormalized,
}

/// Whether `p_prior` is renormalized over the remaining set before use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorNormalization {
    #[default]
    Renormalized,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Larger `p_main` first, then lower slot index.
    #[default]
    ByMainProbThenLowestIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub beta: f64,
    pub prior_mode: PriorMode,
    pub prior_normalization: PriorNormalization,
    pub terminator: String,
    pub tie_break: TieBreak,
    /// Below this total mass a distribution is treated as uninformative.
    pub epsilon: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            prior_mode: PriorMode::Lockstep,
            prior_normalization: PriorNormalization::Renormalized,
            terminator: "]".into(),
            tie_break: TieBreak::ByMainProbThenLowestIndex,
            epsilon: 1e-12,
        }
    }
}

impl CalibrationConfig {
    pub fn with_beta(beta: f64) -> Self {
        Self {
            beta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(format!("beta must be a finite non-negative number, got {}", self.beta));
        }
        if !(self.epsilon > 0.0) {
            return Err(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.terminator.is_empty() {
            return Err("terminator must not be empty".into());
        }
        Ok(())
    }
}

/// Joint probability of `label` followed by `terminator` after
/// `prompt + prefix`: the product of the label's token probabilities and
/// the terminator's.
pub fn joint_identifier_prob(
    backend: &dyn ScoringBackend,
    prompt: &str,
    prefix: &str,
    label: &str,
    terminator: &str,
) -> Result<f64, BackendError> {
    let seq = backend.tokenize_label(label, terminator)?;
    let req = ScoringRequest {
        prompt: prompt.into(),
        prefix: prefix.into(),
        continuations: vec![seq],
    };
    let scores = backend.score_continuations(&req)?;
    let score = scores
        .first()
        .ok_or_else(|| BackendError::MalformedResponse("no score returned".into()))?;
    Ok(score.probability())
}

/// Renormalizes `p` over `remaining`. `None` when the mass is at most `epsilon`.
fn normalize(p: &BTreeMap<usize, f64>, remaining: &BTreeSet<usize>, epsilon: f64) -> Option<BTreeMap<usize, f64>> {
    let total: f64 = remaining.iter().map(|i| p[i]).sum();
    if !(total > epsilon) || !total.is_finite() {
        return None;
    }
    Some(remaining.iter().map(|&i| (i, p[&i] / total)).collect())
}

/// Shannon entropy (nats) of `p_main` renormalized over `remaining`.
///
/// A distribution with no mass above `epsilon` has expressed no preference
/// and gets the maximum, `ln |remaining|`.
///
/// ```
/// use std::collections::{BTreeMap, BTreeSet};
/// use capcal::calibration::step_entropy;
///
/// let p: BTreeMap<usize, f64> = [(1, 0.25), (2, 0.25), (3, 0.25), (4, 0.25)].into();
/// let all: BTreeSet<usize> = (1..=4).collect();
/// assert!((step_entropy(&p, &all, 1e-12) - 4f64.ln()).abs() < 1e-12);
/// ```
pub fn step_entropy(p_main: &BTreeMap<usize, f64>, remaining: &BTreeSet<usize>, epsilon: f64) -> f64 {
    assert!(!remaining.is_empty(), "entropy over an empty candidate set");
    let max = (remaining.len() as f64).ln();
    let Some(p) = normalize(p_main, remaining, epsilon) else {
        return max;
    };
    let h: f64 = p
        .values()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum();
    h.clamp(0.0, max)
}

/// Output of one calibration step.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedStep {
    pub entropy: f64,
    pub alpha: f64,
    pub scores: BTreeMap<usize, f64>,
}

/// Calibrated scores for every candidate in `remaining`.
pub fn calibrated_scores(
    p_main: &BTreeMap<usize, f64>,
    p_prior: &BTreeMap<usize, f64>,
    remaining: &BTreeSet<usize>,
    config: &CalibrationConfig,
) -> CalibratedStep {
    let entropy = step_entropy(p_main, remaining, config.epsilon);
    let alpha = config.beta * entropy;
    let uniform = 1.0 / remaining.len() as f64;
    let prior: BTreeMap<usize, f64> = match config.prior_normalization {
        PriorNormalization::Renormalized => normalize(p_prior, remaining, config.epsilon)
            .unwrap_or_else(|| remaining.iter().map(|&i| (i, uniform)).collect()),
        PriorNormalization::Raw => remaining.iter().map(|&i| (i, p_prior[&i])).collect(),
    };
    let scores = remaining
        .iter()
        .map(|&i| (i, p_main[&i] - alpha * (prior[&i] - uniform)))
        .collect();
    CalibratedStep {
        entropy,
        alpha,
        scores,
    }
}

/// Argmax of `scores`; ties go to the larger `p_main`, then the lower index.
pub fn select(scores: &BTreeMap<usize, f64>, p_main: &BTreeMap<usize, f64>) -> usize {
    let mut best: Option<(usize, f64, f64)> = None;
    for (&i, &s) in scores {
        let p = p_main[&i];
        let better = match best {
            None => true,
            Some((_, bs, bp)) => s > bs || (s == bs && p > bp),
        };
        if better {
            best = Some((i, s, p));
        }
    }
    best.expect("non-empty score map").0
}
