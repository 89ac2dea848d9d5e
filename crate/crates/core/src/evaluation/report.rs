use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// One metric for one method on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    pub metric: String,
    pub method_tag: String,
    #[serde(default)]
    pub dataset: String,
}

impl EvalReport {
    /// `mean` is the arithmetic mean of `per_query`, or 0 when it is empty.
    pub fn new(per_query: BTreeMap<String, f64>, metric: impl Into<String>, method_tag: impl Into<String>) -> Self {
        let mean = if per_query.is_empty() {
            0.0
        } else {
            per_query.values().sum::<f64>() / per_query.len() as f64
        };
        Self {
            per_query,
            mean,
            metric: metric.into(),
            method_tag: method_tag.into(),
            dataset: String::new(),
        }
    }

    pub fn with_dataset(mut self, dataset: impl Into<String>) -> Self {
        self.dataset = dataset.into();
        self
    }

    /// Per-query lines followed by the mean, `trec_eval` style.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (q, v) in &self.per_query {
            writeln!(out, "{:<12}\t{}\t{v:.4}", self.metric, q).expect("write to String");
        }
        writeln!(out, "{:<12}\tall\t{:.4}", self.metric, self.mean).expect("write to String");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub values: BTreeMap<String, f64>,
    /// Difference from the first method, per dataset. Empty for the first row.
    pub deltas: BTreeMap<String, f64>,
}

/// Methods as rows, datasets as columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub metric: String,
    pub datasets: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Lays reports out as a method-by-dataset table with deltas against the
/// first method. Reports for the same dataset must cover the same queries.
pub fn compare_methods(reports: &[EvalReport]) -> Result<ComparisonTable, EvalError> {
    let Some(first) = reports.first() else {
        return Err(EvalError::QuerySetMismatch("no reports".into()));
    };
    if let Some(r) = reports.iter().find(|r| r.metric != first.metric) {
        return Err(EvalError::QuerySetMismatch(format!(
            "metric `{}` differs from `{}`",
            r.metric, first.metric
        )));
    }

    let mut datasets: Vec<String> = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    let mut query_sets: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut cells: BTreeMap<(String, String), f64> = BTreeMap::new();
    for r in reports {
        if !datasets.contains(&r.dataset) {
            datasets.push(r.dataset.clone());
        }
        if !methods.contains(&r.method_tag) {
            methods.push(r.method_tag.clone());
        }
        let qs: BTreeSet<&str> = r.per_query.keys().map(String::as_str).collect();
        match query_sets.get(r.dataset.as_str()) {
            Some(prev) if *prev != qs => {
                return Err(EvalError::QuerySetMismatch(format!(
                    "method `{}` on dataset `{}`",
                    r.method_tag, r.dataset
                )))
            }
            Some(_) => {}
            None => {
                query_sets.insert(&r.dataset, qs);
            }
        }
        cells.insert((r.method_tag.clone(), r.dataset.clone()), r.mean);
    }

    let baseline = &methods[0];
    let rows = methods
        .iter()
        .map(|m| {
            let values: BTreeMap<String, f64> = datasets
                .iter()
                .filter_map(|d| cells.get(&(m.clone(), d.clone())).map(|v| (d.clone(), *v)))
                .collect();
            let deltas = if m == baseline {
                BTreeMap::new()
            } else {
                values
                    .iter()
                    .filter_map(|(d, v)| cells.get(&(baseline.clone(), d.clone())).map(|b| (d.clone(), v - b)))
                    .collect()
            };
            ComparisonRow {
                method: m.clone(),
                values,
                deltas,
            }
        })
        .collect();

    Ok(ComparisonTable {
        metric: first.metric.clone(),
        datasets,
        rows,
    })
}

impl ComparisonTable {
    pub fn has_deltas(&self) -> bool {
        self.rows.len() > 1
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut header = vec!["method".to_string()];
        for d in &self.datasets {
            let name = if d.is_empty() { self.metric.clone() } else { d.clone() };
            header.push(name.clone());
            if self.has_deltas() {
                header.push(format!("Δ {name}"));
            }
        }
        let mut lines = vec![header];
        for row in &self.rows {
            let mut cols = vec![row.method.clone()];
            for d in &self.datasets {
                cols.push(row.values.get(d).map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()));
                if self.has_deltas() {
                    cols.push(row.deltas.get(d).map(|v| format!("{v:+.4}")).unwrap_or_default());
                }
            }
            lines.push(cols);
        }
        let ncols = lines[0].len();
        let widths: Vec<usize> = (0..ncols)
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    let pad = widths[c] - s.chars().count();
                    if c == 0 {
                        format!("{s}{}", " ".repeat(pad))
                    } else {
                        format!("{}{s}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
