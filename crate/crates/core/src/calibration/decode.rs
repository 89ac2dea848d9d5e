use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use super::{calibrated_scores, select, step_entropy, CalibrationConfig, PriorMode};
use crate::backend::{BackendError, ScoringBackend, ScoringRequest};
use crate::domain::{DomainError, Permutation, RerankTask, StepTrace, TokenSeq};
use crate::prompting::{render_empty_prompt, render_main_prompt, PromptTemplate, TemplateError};

/// Separator written between emitted identifiers.
pub const SEPARATOR: &str = " > ";

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Task(#[from] DomainError),
    #[error("invalid calibration config: {0}")]
    Config(String),
    #[error("backend failed at step {step}: {source}")]
    Backend {
        step: usize,
        #[source]
        source: BackendError,
        /// Steps completed before the failure.
        partial_trace: Vec<StepTrace>,
    },
    #[error("invalid window schedule: {0}")]
    Window(String),
}

impl DecodeError {
    pub fn backend_error(&self) -> Option<&BackendError> {
        match self {
            DecodeError::Backend { source, .. } => Some(source),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibratedRanking {
    pub permutation: Permutation,
    pub trace: Vec<StepTrace>,
    pub config_used: CalibrationConfig,
}

impl CalibratedRanking {
    /// Score each slot received at the step it was chosen.
    pub fn chosen_scores(&self) -> BTreeMap<usize, f64> {
        self.trace.iter().map(|s| (s.chosen, s.scores[&s.chosen])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    /// Greedy argmax of the main-prompt identifier probabilities.
    Base,
    CapCal(CalibrationConfig),
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::CapCal(_) => "capcal",
        }
    }
}

fn to_map(slots: &[usize], scores: &[crate::backend::ContinuationScore]) -> BTreeMap<usize, f64> {
    slots
        .iter()
        .zip(scores)
        .map(|(&s, c)| (s, c.probability()))
        .collect()
}

fn fail(step: usize, source: BackendError, trace: &[StepTrace]) -> DecodeError {
    DecodeError::Backend {
        step,
        source,
        partial_trace: trace.to_vec(),
    }
}

/// Constrained greedy decoding of a full permutation.
///
/// Step `k` scores the labels of every unranked candidate after the text
/// emitted so far plus `[`, picks one, and appends `[label] > ` (just
/// `[label]` at the last step). Under [`Method::CapCal`] the content-free
/// prompt is scored as well, in lockstep or once up front per
/// [`PriorMode`].
pub fn decode(
    backend: &dyn ScoringBackend,
    task: &RerankTask,
    template: &PromptTemplate,
    method: &Method,
) -> Result<CalibratedRanking, DecodeError> {
    let n = task.len();
    if n == 0 {
        return Err(DomainError::CandidateCount { n, cap: 0 }.into());
    }
    let base_config = CalibrationConfig::with_beta(0.0);
    let config = match method {
        Method::Base => &base_config,
        Method::CapCal(c) => c,
    };
    config.validate().map_err(DecodeError::Config)?;

    let main_prompt = render_main_prompt(task, template)?;
    let empty_prompt = match method {
        Method::Base => None,
        Method::CapCal(_) => Some(render_empty_prompt(task, template)?),
    };

    let mut trace: Vec<StepTrace> = Vec::with_capacity(n);
    let labels: Vec<TokenSeq> = (1..=n)
        .map(|i| backend.tokenize_label(&task.label(i), &config.terminator))
        .collect::<Result<_, _>>()
        .map_err(|e| fail(1, e, &trace))?;

    let mut remaining: BTreeSet<usize> = (1..=n).collect();
    let mut emitted = String::new();
    let mut static_prior: Option<BTreeMap<usize, f64>> = None;

    for k in 1..=n {
        let slots: Vec<usize> = remaining.iter().copied().collect();
        let continuations: Vec<TokenSeq> = slots.iter().map(|&s| labels[s - 1].clone()).collect();
        let prefix = format!("{emitted}[");
        let main_req = ScoringRequest {
            prompt: main_prompt.clone(),
            prefix: prefix.clone(),
            continuations: continuations.clone(),
        };

        let mut reqs = vec![main_req];
        let prior_this_step = match (&empty_prompt, config.prior_mode) {
            (None, _) => false,
            (Some(_), PriorMode::Lockstep) => true,
            (Some(_), PriorMode::StaticRenormalized) => static_prior.is_none(),
        };
        if prior_this_step {
            reqs.push(ScoringRequest {
                prompt: empty_prompt.clone().expect("capcal has an empty prompt"),
                prefix,
                continuations,
            });
        }

        let mut results = backend.score_batch(&reqs).map_err(|e| fail(k, e, &trace))?;
        if results.len() != reqs.len() {
            return Err(fail(
                k,
                BackendError::MalformedResponse("batch size mismatch".into()),
                &trace,
            ));
        }
        for (r, s) in reqs.iter().zip(&results) {
            crate::backend::check_alignment(r, s).map_err(|e| fail(k, e, &trace))?;
        }
        let p_main = to_map(&slots, &results[0]);
        let p_prior = if prior_this_step {
            let p = to_map(&slots, &results.pop().expect("two results"));
            if config.prior_mode == PriorMode::StaticRenormalized {
                static_prior = Some(p.clone());
            }
            Some(p)
        } else {
            static_prior
                .as_ref()
                .map(|sp| slots.iter().map(|s| (*s, sp[s])).collect())
        };

        let (entropy_h, alpha_k, scores) = match &p_prior {
            Some(prior) => {
                let step = calibrated_scores(&p_main, prior, &remaining, config);
                (step.entropy, step.alpha, step.scores)
            }
            None => (step_entropy(&p_main, &remaining, config.epsilon), 0.0, p_main.clone()),
        };
        let chosen = select(&scores, &p_main);

        trace.push(StepTrace {
            step_index: k,
            remaining: remaining.clone(),
            p_main,
            p_prior,
            entropy_h,
            alpha_k,
            scores,
            chosen,
        });
        remaining.remove(&chosen);
        emitted.push('[');
        emitted.push_str(&task.label(chosen));
        emitted.push_str(&config.terminator);
        if k < n {
            emitted.push_str(SEPARATOR);
        }
    }

    Ok(CalibratedRanking {
        permutation: Permutation {
            order: trace.iter().map(|s| s.chosen).collect(),
        },
        trace,
        config_used: config.clone(),
    })
}

pub fn decode_base(
    backend: &dyn ScoringBackend,
    task: &RerankTask,
    template: &PromptTemplate,
) -> Result<CalibratedRanking, DecodeError> {
    decode(backend, task, template, &Method::Base)
}

pub fn decode_capcal(
    backend: &dyn ScoringBackend,
    task: &RerankTask,
    template: &PromptTemplate,
    config: &CalibrationConfig,
) -> Result<CalibratedRanking, DecodeError> {
    decode(backend, task, template, &Method::CapCal(config.clone()))
}

/// Anything that can order one task's candidates.
pub trait ListwiseRanker: Sync {
    fn rank(&self, task: &RerankTask) -> Result<Permutation, DecodeError>;
}

impl<F> ListwiseRanker for F
where
    F: Fn(&RerankTask) -> Result<Permutation, DecodeError> + Sync,
{
    fn rank(&self, task: &RerankTask) -> Result<Permutation, DecodeError> {
        self(task)
    }
}

/// A decoder bound to a backend and template.
#[derive(Clone, Copy)]
pub struct LlmRanker<'a> {
    pub backend: &'a dyn ScoringBackend,
    pub template: &'a PromptTemplate,
    pub method: &'a Method,
}

impl LlmRanker<'_> {
    pub fn decode(&self, task: &RerankTask) -> Result<CalibratedRanking, DecodeError> {
        decode(self.backend, task, self.template, self.method)
    }
}

impl ListwiseRanker for LlmRanker<'_> {
    fn rank(&self, task: &RerankTask) -> Result<Permutation, DecodeError> {
        Ok(self.decode(task)?.permutation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ContinuationScore, SimulatedLm};
    use crate::domain::{validate_permutation, IdentifierScheme, Query};
    use crate::prompting::PlaceholderPolicy;

    fn task(n: usize) -> RerankTask {
        RerankTask::new(
            Query::new("q", "query").unwrap(),
            (1..=n).map(|i| (format!("d{i}"), format!("passage {i}"))).collect(),
            IdentifierScheme::Numeric,
            PlaceholderPolicy::default(),
        )
        .unwrap()
    }

    /// Serves fixed per-step distributions regardless of the prompt text,
    /// picking the main or prior table by whether the prompt has placeholders.
    struct Scripted {
        main: Vec<Vec<f64>>,
        prior: Vec<Vec<f64>>,
    }

    impl ScoringBackend for Scripted {
        fn tokenize_label(&self, label: &str, t: &str) -> Result<TokenSeq, BackendError> {
            Ok(TokenSeq::from_tokens([label.to_string(), t.to_string()]))
        }
        fn score_continuations(&self, req: &ScoringRequest) -> Result<Vec<ContinuationScore>, BackendError> {
            let step = req.prefix.matches('[').count() - 1;
            let table = if req.prompt.contains("placeholder") { &self.prior } else { &self.main };
            req.continuations
                .iter()
                .map(|c| {
                    let slot: usize = c.tokens()[0].parse().unwrap();
                    ContinuationScore::new(c.clone(), vec![table[step][slot - 1].ln(), 0.0])
                })
                .collect()
        }
    }

    #[test]
    fn two_candidate_flip() {
        // Step 2 only has one candidate left; its numbers don't matter.
        let b = Scripted {
            main: vec![vec![0.55, 0.45], vec![1.0, 1.0]],
            prior: vec![vec![0.8, 0.2], vec![1.0, 1.0]],
        };
        let t = task(2);
        let tpl = PromptTemplate::default();
        let cap = decode_capcal(&b, &t, &tpl, &CalibrationConfig::with_beta(1.0)).unwrap();
        let s = &cap.trace[0];
        let h = -(0.55f64 * 0.55f64.ln() + 0.45 * 0.45f64.ln());
        assert!((s.entropy_h - h).abs() < 1e-12);
        assert!((s.entropy_h - 0.6881).abs() < 1e-4);
        assert!((s.scores[&1] - (0.55 - h * 0.3)).abs() < 1e-12);
        assert!((s.scores[&2] - (0.45 + h * 0.3)).abs() < 1e-12);
        assert!((s.scores[&1] - 0.3436).abs() < 1e-4 && (s.scores[&2] - 0.6564).abs() < 1e-4);
        assert_eq!(cap.permutation.order, vec![2, 1]);
        let base = decode_base(&b, &t, &tpl).unwrap();
        assert_eq!(base.permutation.order, vec![1, 2]);
        assert!(base.trace.iter().all(|s| s.p_prior.is_none() && s.alpha_k == 0.0));
    }

    #[test]
    fn base_follows_bias_capcal_follows_relevance() {
        let t = task(3);
        let sim = SimulatedLm::new(vec![2.0, 0.0, 0.0], 1.0)
            .with_task(&t)
            .with_relevance("q", "d3", 1.0);
        let tpl = PromptTemplate::default();
        let base = decode_base(&sim, &t, &tpl).unwrap();
        assert_eq!(base.permutation.order[0], 1);
        let cap = decode_capcal(&sim, &t, &tpl, &Default::default()).unwrap();
        assert_eq!(cap.permutation.order[0], 3);
    }

    #[test]
    fn zero_bias_sorts_by_relevance() {
        let t = task(5);
        let rel = [0.3, -1.2, 2.0, 0.9, -0.1];
        let mut sim = SimulatedLm::new(vec![0.0; 5], 1.0).with_task(&t);
        for (i, r) in rel.iter().enumerate() {
            sim = sim.with_relevance("q", &format!("d{}", i + 1), *r);
        }
        let cap = decode_capcal(&sim, &t, &PromptTemplate::default(), &Default::default()).unwrap();
        assert_eq!(cap.permutation.order, vec![3, 4, 1, 5, 2]);
    }

    #[test]
    fn symmetric_ties_go_to_lowest_index() {
        let t = task(2);
        let sim = SimulatedLm::new(vec![0.0; 2], 1.0).with_task(&t);
        let base = decode_base(&sim, &t, &PromptTemplate::default()).unwrap();
        assert_eq!(base.permutation.order, vec![1, 2]);
    }

    #[test]
    fn one_hot_steps() {
        let b = Scripted {
            main: vec![vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]],
            prior: vec![vec![1.0 / 3.0; 3]; 3],
        };
        let base = decode_base(&b, &task(3), &PromptTemplate::default()).unwrap();
        assert_eq!(base.permutation.order, vec![3, 2, 1]);
        assert_eq!(base.trace[0].entropy_h, 0.0);
        let cap = decode_capcal(&b, &task(3), &PromptTemplate::default(), &Default::default()).unwrap();
        assert_eq!(cap.trace[0].alpha_k, 0.0);
    }

    #[test]
    fn static_prior_is_scored_once() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        struct Counting<'a>(&'a SimulatedLm, AtomicUsize);
        impl ScoringBackend for Counting<'_> {
            fn tokenize_label(&self, l: &str, t: &str) -> Result<TokenSeq, BackendError> {
                self.0.tokenize_label(l, t)
            }
            fn score_continuations(&self, r: &ScoringRequest) -> Result<Vec<ContinuationScore>, BackendError> {
                if r.prompt.contains("placeholder") {
                    self.1.fetch_add(1, Ordering::SeqCst);
                }
                self.0.score_continuations(r)
            }
        }
        let t = task(4);
        let sim = SimulatedLm::new(vec![1.0, 0.0, 0.0, 0.5], 1.0).with_task(&t);
        let c = Counting(&sim, AtomicUsize::new(0));
        let cfg = CalibrationConfig {
            prior_mode: PriorMode::StaticRenormalized,
            ..Default::default()
        };
        let r = decode_capcal(&c, &t, &PromptTemplate::default(), &cfg).unwrap();
        assert_eq!(c.1.load(Ordering::SeqCst), 1);
        assert!(validate_permutation(&r.permutation, 4));
        assert!(r.trace.iter().all(|s| s.p_prior.is_some()));
        let c = Counting(&sim, AtomicUsize::new(0));
        decode_capcal(&c, &t, &PromptTemplate::default(), &Default::default()).unwrap();
        assert_eq!(c.1.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn backend_failure_carries_partial_trace() {
        struct FailAt(SimulatedLm, usize);
        impl ScoringBackend for FailAt {
            fn tokenize_label(&self, l: &str, t: &str) -> Result<TokenSeq, BackendError> {
                self.0.tokenize_label(l, t)
            }
            fn score_continuations(&self, r: &ScoringRequest) -> Result<Vec<ContinuationScore>, BackendError> {
                if r.prefix.matches('[').count() == self.1 {
                    return Err(BackendError::Unavailable { attempts: 1, message: "down".into() });
                }
                self.0.score_continuations(r)
            }
        }
        let t = task(4);
        let b = FailAt(SimulatedLm::new(vec![0.0; 4], 1.0).with_task(&t), 3);
        let err = decode_base(&b, &t, &PromptTemplate::default()).unwrap_err();
        match err {
            DecodeError::Backend { step, partial_trace, .. } => {
                assert_eq!(step, 3);
                assert_eq!(partial_trace.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn prefixes_follow_output_format() {
        use std::sync::Mutex;
        struct Recording<'a>(&'a SimulatedLm, Mutex<Vec<String>>);
        impl ScoringBackend for Recording<'_> {
            fn tokenize_label(&self, l: &str, t: &str) -> Result<TokenSeq, BackendError> {
                self.0.tokenize_label(l, t)
            }
            fn score_continuations(&self, r: &ScoringRequest) -> Result<Vec<ContinuationScore>, BackendError> {
                self.1.lock().unwrap().push(r.prefix.clone());
                self.0.score_continuations(r)
            }
        }
        let t = task(3);
        let sim = SimulatedLm::new(vec![0.0; 3], 1.0)
            .with_task(&t)
            .with_relevance("q", "d2", 2.0)
            .with_relevance("q", "d3", 1.0);
        let rec = Recording(&sim, Mutex::new(vec![]));
        decode_base(&rec, &t, &PromptTemplate::default()).unwrap();
        assert_eq!(*rec.1.lock().unwrap(), vec!["[", "[2] > [", "[2] > [3] > ["]);
    }
}
