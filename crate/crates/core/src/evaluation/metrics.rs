use std::collections::BTreeMap;

use super::trec::{Qrels, RunFile};
use super::EvalReport;

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

/// DCG of graded results in ranked order, cut at `k`.
pub fn dcg(grades: impl IntoIterator<Item = u32>, k: usize) -> f64 {
    grades
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| gain(g) / discount(i + 1))
        .sum()
}

/// NDCG@k per query with exponential gain `2^rel - 1` and `log2(rank + 1)`
/// discount. Unjudged documents count as grade 0. Queries without any
/// positive judgment are left out of the report.
pub fn ndcg_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> EvalReport {
    assert!(k >= 1, "k must be positive");
    let ranked = run.ranked();
    let mut per_query = BTreeMap::new();
    for q in run.query_ids() {
        let Some(judged) = qrels.judgments.get(q) else {
            continue;
        };
        let mut ideal: Vec<u32> = judged.values().copied().collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg = dcg(ideal, k);
        if idcg <= 0.0 {
            continue;
        }
        let got = dcg(ranked[q].iter().map(|d| qrels.grade(q, d)), k);
        per_query.insert(q.to_string(), (got / idcg).clamp(0.0, 1.0));
    }
    EvalReport::new(per_query, format!("ndcg@{k}"), run.tag().unwrap_or_default())
}

/// Kendall's tau-b between two paired samples. Returns 0 when either side is
/// constant.
///
/// ```
/// use capcal::evaluation::kendall_tau;
/// assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
/// assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
/// ```
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "paired samples");
    let n = x.len();
    let (mut concordant, mut discordant, mut ties_x, mut ties_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].partial_cmp(&x[j]).expect("finite sample");
            let dy = y[i].partial_cmp(&y[j]).expect("finite sample");
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {}
                (Equal, _) => ties_x += 1,
                (_, Equal) => ties_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (concordant + discordant) as f64;
    let denom = ((n0 + ties_x as f64) * (n0 + ties_y as f64)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (concordant - discordant) as f64 / denom
    }
}
