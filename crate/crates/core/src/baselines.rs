//! Input shuffling and permutation self-consistency.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{DecodeError, ListwiseRanker};
use crate::domain::{validate_permutation, Candidate, Permutation, RerankTask};

/// Seeded Fisher-Yates shuffle of `1..=n`.
pub fn shuffle_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}

/// A task with its candidates reordered.
#[derive(Debug, Clone, PartialEq)]
pub struct ShuffledTask {
    pub task: RerankTask,
    /// `source_slots[new_slot - 1]` is the candidate's slot in the source task.
    pub source_slots: Vec<usize>,
}

impl ShuffledTask {
    /// Maps a permutation over the shuffled slots back to source slots.
    pub fn to_source(&self, perm: &Permutation) -> Permutation {
        Permutation {
            order: perm.order.iter().map(|&s| self.source_slots[s - 1]).collect(),
        }
    }
}

pub fn shuffle_candidates(task: &RerankTask, seed: u64) -> ShuffledTask {
    let source_slots = shuffle_order(task.len(), seed);
    let candidates = source_slots
        .iter()
        .enumerate()
        .map(|(i, &s)| Candidate {
            original_index: i + 1,
            ..task.candidate(s).clone()
        })
        .collect();
    ShuffledTask {
        task: RerankTask {
            candidates,
            ..task.clone()
        },
        source_slots,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    MeanRank,
    MedianRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PscConfig {
    pub k_permutations: usize,
    pub seed: u64,
    pub aggregation: Aggregation,
}

impl Default for PscConfig {
    fn default() -> Self {
        Self {
            k_permutations: 10,
            seed: 0,
            aggregation: Aggregation::MeanRank,
        }
    }
}

/// Aggregates several rankings of the same documents. Returns
/// `(doc_id, aggregate rank)` sorted ascending by aggregate, ties broken by
/// doc id.
///
/// ```
/// use capcal::baselines::{aggregate_ranks, Aggregation};
///
/// let passes = vec![vec!["A", "B", "C"], vec!["B", "C", "A"]];
/// let agg = aggregate_ranks(&passes, Aggregation::MeanRank);
/// let order: Vec<&str> = agg.iter().map(|(d, _)| d.as_str()).collect();
/// assert_eq!(order, ["B", "A", "C"]);
/// ```
pub fn aggregate_ranks<S: AsRef<str>>(passes: &[Vec<S>], aggregation: Aggregation) -> Vec<(String, f64)> {
    let mut positions: HashMap<&str, Vec<f64>> = HashMap::new();
    for pass in passes {
        for (r, doc) in pass.iter().enumerate() {
            positions.entry(doc.as_ref()).or_default().push((r + 1) as f64);
        }
    }
    let mut out: Vec<(String, f64)> = positions
        .into_iter()
        .map(|(doc, mut ranks)| {
            let value = match aggregation {
                Aggregation::MeanRank => ranks.iter().sum::<f64>() / ranks.len() as f64,
                Aggregation::MedianRank => {
                    ranks.sort_by(f64::total_cmp);
                    let m = ranks.len() / 2;
                    if ranks.len() % 2 == 1 {
                        ranks[m]
                    } else {
                        (ranks[m - 1] + ranks[m]) / 2.0
                    }
                }
            };
            (doc.to_string(), value)
        })
        .collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PscOutcome {
    pub permutation: Permutation,
    /// Aggregate rank per doc id, best first.
    pub aggregate: Vec<(String, f64)>,
}

/// Runs `inner` on `k_permutations` shuffled copies of `task` and orders the
/// documents by their aggregated rank. Any failed pass fails the whole call.
pub fn psc_rerank(
    task: &RerankTask,
    config: &PscConfig,
    inner: &dyn ListwiseRanker,
) -> Result<PscOutcome, DecodeError> {
    if config.k_permutations == 0 {
        return Err(DecodeError::Config("k_permutations must be at least 1".into()));
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    let mut passes: Vec<Vec<&str>> = Vec::with_capacity(config.k_permutations);
    for _ in 0..config.k_permutations {
        let shuffled = shuffle_candidates(task, seeds.next_u64());
        let perm = inner.rank(&shuffled.task)?;
        if !validate_permutation(&perm, task.len()) {
            return Err(DecodeError::Config("inner ranker returned an invalid permutation".into()));
        }
        passes.push(shuffled.to_source(&perm).doc_ids(task));
    }
    let aggregate = aggregate_ranks(&passes, config.aggregation);
    let slot_of: HashMap<&str, usize> = task
        .candidates
        .iter()
        .map(|c| (c.doc_id.as_str(), c.original_index))
        .collect();
    let order = aggregate.iter().map(|(d, _)| slot_of[d.as_str()]).collect();
    Ok(PscOutcome {
        permutation: Permutation { order },
        aggregate,
    })
}
