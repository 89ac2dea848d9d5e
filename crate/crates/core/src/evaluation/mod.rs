//! Ranking evaluation: TREC file formats, NDCG@k, method comparison tables
//! and the JSONL task format.

mod metrics;
mod report;
mod tasks;
mod trec;

pub use metrics::{dcg, kendall_tau, ndcg_at_k};
pub use report::{compare_methods, ComparisonRow, ComparisonTable, EvalReport};
pub use tasks::{normalize_whitespace, read_tasks, read_tasks_str, write_tasks, CandidateRecord, TaskRecord};
pub use trec::{
    format_run, parse_qrels, parse_qrels_str, parse_run, parse_run_str, write_run, Qrels, RunEntry, RunFile,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{}line {line}: {message}", file_prefix(.file))]
    Parse {
        file: Option<PathBuf>,
        line: usize,
        message: String,
    },
    #[error("{}line {line}: duplicate judgment for ({query_id}, {doc_id})", file_prefix(.file))]
    DuplicateJudgment {
        file: Option<PathBuf>,
        line: usize,
        query_id: String,
        doc_id: String,
    },
    #[error("{}query `{query_id}`: ranks are not contiguous from 1", file_prefix(.file))]
    NonContiguousRanks {
        file: Option<PathBuf>,
        query_id: String,
    },
    #[error("reports cover different query sets: {0}")]
    QuerySetMismatch(String),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn file_prefix(file: &Option<PathBuf>) -> String {
    file.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default()
}

impl EvalError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        EvalError::Parse {
            file: None,
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        EvalError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn in_file(mut self, path: &Path) -> Self {
        if let EvalError::Parse { file, .. }
        | EvalError::DuplicateJudgment { file, .. }
        | EvalError::NonContiguousRanks { file, .. } = &mut self
        {
            *file = Some(path.to_path_buf());
        }
        self
    }
}