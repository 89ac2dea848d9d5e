//! Seeded synthetic corpora for exercising rerankers without a real model:
//! tasks, a matching [`SimulatedSpec`] and graded judgments derived from the
//! same relevance logits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{RelevanceEntry, SimulatedLm, SimulatedSpec};
use crate::domain::{IdentifierScheme, Query, RerankTask};
use crate::evaluation::{CandidateRecord, Qrels, TaskRecord};
use crate::prompting::PlaceholderPolicy;

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub queries: usize,
    pub docs_per_query: usize,
    /// Relevance logits are drawn uniformly from `[-r, r]`.
    pub relevance_range: f64,
    pub position_bias: Vec<f64>,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            queries: 10,
            docs_per_query: 10,
            relevance_range: 1.0,
            position_bias: Vec::new(),
            temperature: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub records: Vec<TaskRecord>,
    pub tasks: Vec<RerankTask>,
    pub spec: SimulatedSpec,
    pub qrels: Qrels,
}

/// Grade used for judgments: 2 for logit >= 0.5, 1 for logit >= 0, else 0.
pub fn grade_for(logit: f64) -> u32 {
    if logit >= 0.5 {
        2
    } else if logit >= 0.0 {
        1
    } else {
        0
    }
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.queries);
    let mut tasks = Vec::with_capacity(cfg.queries);
    let mut relevance = Vec::new();
    let mut qrels = Qrels::default();
    for q in 0..cfg.queries {
        let qid = format!("q{q}");
        let mut candidates = Vec::with_capacity(cfg.docs_per_query);
        for d in 0..cfg.docs_per_query {
            let doc_id = format!("{qid}d{d}");
            let logit = if cfg.relevance_range > 0.0 {
                rng.random_range(-cfg.relevance_range..=cfg.relevance_range)
            } else {
                0.0
            };
            relevance.push(RelevanceEntry {
                query_id: qid.clone(),
                doc_id: doc_id.clone(),
                logit,
            });
            qrels.insert(&qid, &doc_id, grade_for(logit));
            candidates.push(CandidateRecord {
                text: format!("passage {d} for topic {q}"),
                doc_id,
            });
        }
        let record = TaskRecord {
            query_id: qid.clone(),
            query_text: format!("synthetic topic {q}"),
            candidates,
        };
        tasks.push(
            RerankTask::with_cap(
                Query::new(qid, record.query_text.clone()).expect("non-empty query"),
                record.candidates.iter().map(|c| (c.doc_id.clone(), c.text.clone())).collect(),
                IdentifierScheme::Numeric,
                PlaceholderPolicy::default(),
                usize::MAX,
            )
            .expect("generated task is valid"),
        );
        records.push(record);
    }
    SyntheticCorpus {
        records,
        tasks,
        spec: SimulatedSpec {
            relevance,
            position_bias: cfg.position_bias.clone(),
            temperature: cfg.temperature,
            seed: cfg.seed,
            interaction_noise: 0.0,
        },
        qrels,
    }
}

impl SyntheticCorpus {
    /// A simulator that recognizes every task in the corpus.
    pub fn simulator(&self) -> SimulatedLm {
        SimulatedLm::from_spec(&self.spec)
            .expect("generated spec is valid")
            .with_tasks(&self.tasks)
    }
}
