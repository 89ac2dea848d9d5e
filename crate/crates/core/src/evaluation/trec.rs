//! TREC qrels and run files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use super::EvalError;

/// Graded relevance judgments, `query -> doc -> grade`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    pub judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        self.judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_trec_string(&self) -> String {
        let mut out = String::new();
        for (q, docs) in &self.judgments {
            for (d, g) in docs {
                writeln!(out, "{q} 0 {d} {g}").expect("write to String");
            }
        }
        out
    }
}

/// Parses `qid iter docid rel` lines. Negative grades are clamped to zero.
pub fn parse_qrels_str(src: &str) -> Result<Qrels, EvalError> {
    let mut qrels = Qrels::default();
    for (i, line) in src.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(EvalError::parse(lineno, format!("expected 4 fields, found {}", fields.len())));
        }
        let grade: i64 = fields[3]
            .parse()
            .map_err(|_| EvalError::parse(lineno, format!("relevance `{}` is not an integer", fields[3])))?;
        let grade = if grade < 0 {
            log::warn!("qrels line {lineno}: negative grade {grade} clamped to 0");
            0
        } else {
            u32::try_from(grade).map_err(|_| EvalError::parse(lineno, "relevance out of range"))?
        };
        let (q, d) = (fields[0], fields[2]);
        let per_query = qrels.judgments.entry(q.to_string()).or_default();
        if per_query.insert(d.to_string(), grade).is_some() {
            return Err(EvalError::DuplicateJudgment {
                file: None,
                line: lineno,
                query_id: q.into(),
                doc_id: d.into(),
            });
        }
    }
    Ok(qrels)
}

pub fn parse_qrels(path: &Path) -> Result<Qrels, EvalError> {
    let src = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    parse_qrels_str(&src).map_err(|e| e.in_file(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub query_id: String,
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// A TREC run. Entries are grouped by query (in order of first appearance)
/// and sorted by rank within a query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    pub entries: Vec<RunEntry>,
}

impl RunFile {
    /// Builds a run from per-query ranked `(doc_id, score)` lists.
    pub fn from_rankings<'a>(
        rankings: impl IntoIterator<Item = (&'a str, Vec<(String, f64)>)>,
        tag: &str,
    ) -> Self {
        let mut entries = Vec::new();
        for (q, docs) in rankings {
            for (r, (d, s)) in docs.into_iter().enumerate() {
                entries.push(RunEntry {
                    query_id: q.to_string(),
                    doc_id: d,
                    rank: r + 1,
                    score: s,
                    tag: tag.to_string(),
                });
            }
        }
        Self { entries }
    }

    /// Query ids in order of first appearance.
    pub fn query_ids(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .map(|e| e.query_id.as_str())
            .filter(|q| seen.insert(*q))
            .collect()
    }

    /// Ranked doc ids per query.
    pub fn ranked(&self) -> HashMap<&str, Vec<&str>> {
        let mut out: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in &self.entries {
            out.entry(&e.query_id).or_default().push(&e.doc_id);
        }
        out
    }

    /// The tag of the first entry, if any.
    pub fn tag(&self) -> Option<&str> {
        self.entries.first().map(|e| e.tag.as_str())
    }

    /// Equal rankings and scores, ignoring run tags.
    pub fn same_ranking(&self, other: &RunFile) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.query_id == b.query_id && a.doc_id == b.doc_id && a.rank == b.rank && a.score == b.score
            })
    }

    /// Checks the per-query invariants: contiguous ranks `1..=m`, unique
    /// documents, scores non-increasing with rank.
    pub fn validate(&self) -> Result<(), EvalError> {
        let mut by_query: HashMap<&str, Vec<&RunEntry>> = HashMap::new();
        for e in &self.entries {
            by_query.entry(&e.query_id).or_default().push(e);
        }
        for (q, mut es) in by_query {
            es.sort_by_key(|e| e.rank);
            let mut docs = HashSet::new();
            for (i, e) in es.iter().enumerate() {
                if e.rank != i + 1 {
                    return Err(EvalError::NonContiguousRanks {
                        file: None,
                        query_id: q.into(),
                    });
                }
                if !docs.insert(e.doc_id.as_str()) {
                    return Err(EvalError::parse(0, format!("doc `{}` ranked twice for query `{q}`", e.doc_id)));
                }
                if i > 0 && e.score > es[i - 1].score {
                    return Err(EvalError::parse(
                        0,
                        format!("query `{q}`: score rises from rank {} to {}", i, i + 1),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Parses `qid Q0 docid rank score tag` lines.
pub fn parse_run_str(src: &str) -> Result<RunFile, EvalError> {
    let mut entries = Vec::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    let mut first_line: HashMap<String, usize> = HashMap::new();
    for (i, line) in src.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(EvalError::parse(lineno, format!("expected 6 fields, found {}", f.len())));
        }
        let rank: usize = f[3]
            .parse()
            .map_err(|_| EvalError::parse(lineno, format!("rank `{}` is not a positive integer", f[3])))?;
        let score: f64 = f[4]
            .parse()
            .map_err(|_| EvalError::parse(lineno, format!("score `{}` is not a number", f[4])))?;
        if !score.is_finite() {
            return Err(EvalError::parse(lineno, "score must be finite"));
        }
        if let Some(prev) = seen.insert((f[0].into(), f[2].into()), lineno) {
            return Err(EvalError::parse(
                lineno,
                format!("doc `{}` already ranked for query `{}` on line {prev}", f[2], f[0]),
            ));
        }
        first_line.entry(f[0].to_string()).or_insert(lineno);
        entries.push(RunEntry {
            query_id: f[0].into(),
            doc_id: f[2].into(),
            rank,
            score,
            tag: f[5].into(),
        });
    }
    entries.sort_by(|a, b| {
        first_line[&a.query_id]
            .cmp(&first_line[&b.query_id])
            .then(a.rank.cmp(&b.rank))
    });
    let run = RunFile { entries };
    run.validate()?;
    Ok(run)
}

pub fn parse_run(path: &Path) -> Result<RunFile, EvalError> {
    let src = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    parse_run_str(&src).map_err(|e| e.in_file(path))
}

/// Renders a run with scores at six decimals.
pub fn format_run(run: &RunFile) -> String {
    let mut out = String::new();
    for e in &run.entries {
        writeln!(out, "{} Q0 {} {} {:.6} {}", e.query_id, e.doc_id, e.rank, e.score, e.tag)
            .expect("write to String");
    }
    out
}

pub fn write_run(run: &RunFile, path: &Path) -> Result<(), EvalError> {
    std::fs::write(path, format_run(run)).map_err(|e| EvalError::io(path, e))
}
