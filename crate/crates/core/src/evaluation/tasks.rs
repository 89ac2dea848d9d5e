//! JSONL task files: one query and its first-stage candidates per line.
//!
//! ```text
//! {"query_id":"q1","query_text":"...","candidates":[{"doc_id":"d1","text":"..."}]}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::domain::{DomainError, IdentifierScheme, Query, RerankTask};
use crate::prompting::PlaceholderPolicy;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub query_id: String,
    pub query_text: String,
    pub candidates: Vec<CandidateRecord>,
}

/// Collapses runs of whitespace to one space and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl TaskRecord {
    /// Builds a task in first-stage order with whitespace-normalized texts.
    pub fn to_task(
        &self,
        scheme: IdentifierScheme,
        placeholder: &PlaceholderPolicy,
        cap: usize,
    ) -> Result<RerankTask, DomainError> {
        RerankTask::with_cap(
            Query::new(self.query_id.clone(), normalize_whitespace(&self.query_text))?,
            self.candidates
                .iter()
                .map(|c| (c.doc_id.clone(), normalize_whitespace(&c.text)))
                .collect(),
            scheme,
            placeholder.clone(),
            cap,
        )
    }
}

pub fn read_tasks_str(src: &str) -> Result<Vec<TaskRecord>, EvalError> {
    let mut out = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TaskRecord =
            serde_json::from_str(line).map_err(|e| EvalError::parse(i + 1, format!("invalid task: {e}")))?;
        if !ids.insert(rec.query_id.clone()) {
            return Err(EvalError::parse(i + 1, format!("duplicate query_id `{}`", rec.query_id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_tasks(path: &Path) -> Result<Vec<TaskRecord>, EvalError> {
    let src = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    read_tasks_str(&src).map_err(|e| e.in_file(path))
}

pub fn write_tasks(records: &[TaskRecord], path: &Path) -> Result<(), EvalError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("task serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| EvalError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_and_normalizes() {
        let src = r#"{"query_id":"q1","query_text":"  what\tis  it ","candidates":[{"doc_id":"a","text":"x\n y"},{"doc_id":"b","text":""}]}"#;
        let recs = read_tasks_str(src).unwrap();
        let t = recs[0]
            .to_task(IdentifierScheme::Numeric, &PlaceholderPolicy::default(), 20)
            .unwrap();
        assert_eq!(t.query.text, "what is it");
        assert_eq!(t.candidates[0].text, "x y");
        assert_eq!(t.candidates[1].text, "");
    }

    #[test]
    fn bad_lines_report_line_numbers() {
        let src = "{\"query_id\":\"q\",\"query_text\":\"t\",\"candidates\":[]}\n\nnot json\n";
        match read_tasks_str(src) {
            Err(EvalError::Parse { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
