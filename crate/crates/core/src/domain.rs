//! Value types shared by every stage of the reranking pipeline.
//!
//! All positions are 1-based: candidate `original_index` values, permutation
//! entries and identifier labels all speak the same `[1]`, `[2]`, ... language
//! the prompt uses.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::PlaceholderPolicy;

/// Default upper bound on the number of candidates in one prompt.
pub const DEFAULT_WINDOW_CAP: usize = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("query `{0}` has empty text")]
    EmptyQuery(String),
    #[error("task has {n} candidates; expected between 2 and {cap}")]
    CandidateCount { n: usize, cap: usize },
    #[error("duplicate doc_id `{0}` in task")]
    DuplicateDocId(String),
    #[error("candidate `{doc_id}` has original_index {index}; expected {expected}")]
    BadOriginalIndex {
        doc_id: String,
        index: usize,
        expected: usize,
    },
    #[error("not a permutation of 1..={0}")]
    InvalidPermutation(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, DomainError> {
        let id = id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::EmptyQuery(id));
        }
        Ok(Self { id, text })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub doc_id: String,
    pub text: String,
    /// 1-based slot of this candidate in the prompt.
    pub original_index: usize,
}

/// How candidates are labelled in the prompt.
///
/// Alphabetic labels continue past `Z` in bijective base-26: `Z`, `AA`, `AB`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentifierScheme {
    #[default]
    Numeric,
    Alphabetic,
}

impl IdentifierScheme {
    /// Label for a 1-based slot.
    ///
    /// ```
    /// use capcal::IdentifierScheme;
    /// assert_eq!(IdentifierScheme::Numeric.render(7), "7");
    /// assert_eq!(IdentifierScheme::Alphabetic.render(1), "A");
    /// assert_eq!(IdentifierScheme::Alphabetic.render(27), "AA");
    /// ```
    pub fn render(self, index: usize) -> String {
        assert!(index >= 1, "labels are 1-based");
        match self {
            IdentifierScheme::Numeric => index.to_string(),
            IdentifierScheme::Alphabetic => {
                let mut n = index;
                let mut out = Vec::new();
                while n > 0 {
                    n -= 1;
                    out.push(b'A' + (n % 26) as u8);
                    n /= 26;
                }
                out.reverse();
                String::from_utf8(out).expect("ASCII letters")
            }
        }
    }

    /// Inverse of [`render`](Self::render). Returns `None` for strings the
    /// scheme never produces.
    pub fn parse(self, label: &str) -> Option<usize> {
        if label.is_empty() {
            return None;
        }
        match self {
            IdentifierScheme::Numeric => {
                if !label.bytes().all(|b| b.is_ascii_digit()) || label.starts_with('0') {
                    return None;
                }
                label.parse().ok()
            }
            IdentifierScheme::Alphabetic => {
                let mut n: usize = 0;
                for b in label.bytes() {
                    if !b.is_ascii_uppercase() {
                        return None;
                    }
                    n = n.checked_mul(26)?.checked_add((b - b'A' + 1) as usize)?;
                }
                Some(n)
            }
        }
    }

    /// Guess the scheme from a single rendered label.
    pub fn detect(label: &str) -> Option<Self> {
        [IdentifierScheme::Numeric, IdentifierScheme::Alphabetic]
            .into_iter()
            .find(|s| s.parse(label).is_some())
    }
}

/// Free-function form of [`IdentifierScheme::render`].
pub fn render_label(scheme: IdentifierScheme, index: usize) -> String {
    scheme.render(index)
}

/// A query plus the ordered candidate list handed to one listwise prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankTask {
    pub query: Query,
    pub candidates: Vec<Candidate>,
    pub scheme: IdentifierScheme,
    pub placeholder: PlaceholderPolicy,
}

impl RerankTask {
    /// Builds a task from documents in first-stage order, assigning slots
    /// `1..=N`. Enforces [`DEFAULT_WINDOW_CAP`].
    pub fn new(
        query: Query,
        docs: Vec<(String, String)>,
        scheme: IdentifierScheme,
        placeholder: PlaceholderPolicy,
    ) -> Result<Self, DomainError> {
        Self::with_cap(query, docs, scheme, placeholder, DEFAULT_WINDOW_CAP)
    }

    /// Same as [`new`](Self::new) with an explicit candidate cap. Long lists
    /// destined for sliding-window reranking are built this way.
    pub fn with_cap(
        query: Query,
        docs: Vec<(String, String)>,
        scheme: IdentifierScheme,
        placeholder: PlaceholderPolicy,
        cap: usize,
    ) -> Result<Self, DomainError> {
        let candidates = docs
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, text))| Candidate {
                doc_id,
                text,
                original_index: i + 1,
            })
            .collect();
        let task = Self {
            query,
            candidates,
            scheme,
            placeholder,
        };
        task.validate(cap)?;
        Ok(task)
    }

    pub fn validate(&self, cap: usize) -> Result<(), DomainError> {
        let n = self.candidates.len();
        if n < 2 || n > cap {
            return Err(DomainError::CandidateCount { n, cap });
        }
        if self.query.text.trim().is_empty() {
            return Err(DomainError::EmptyQuery(self.query.id.clone()));
        }
        let mut seen = HashSet::new();
        for (i, c) in self.candidates.iter().enumerate() {
            if !seen.insert(c.doc_id.as_str()) {
                return Err(DomainError::DuplicateDocId(c.doc_id.clone()));
            }
            if c.original_index != i + 1 {
                return Err(DomainError::BadOriginalIndex {
                    doc_id: c.doc_id.clone(),
                    index: c.original_index,
                    expected: i + 1,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn label(&self, index: usize) -> String {
        self.scheme.render(index)
    }

    pub fn candidate(&self, index: usize) -> &Candidate {
        &self.candidates[index - 1]
    }

    /// Sub-task over the given slots (1-based, in the order given), relabelled
    /// `1..=k`.
    pub fn subtask(&self, slots: &[usize]) -> RerankTask {
        RerankTask {
            query: self.query.clone(),
            candidates: slots
                .iter()
                .enumerate()
                .map(|(i, &s)| Candidate {
                    original_index: i + 1,
                    ..self.candidate(s).clone()
                })
                .collect(),
            scheme: self.scheme,
            placeholder: self.placeholder.clone(),
        }
    }
}

/// A ranking of slots, most relevant first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Permutation {
    pub order: Vec<usize>,
}

impl Permutation {
    pub fn new(order: Vec<usize>, n: usize) -> Result<Self, DomainError> {
        let perm = Self { order };
        if validate_permutation(&perm, n) {
            Ok(perm)
        } else {
            Err(DomainError::InvalidPermutation(n))
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            order: (1..=n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// 1-based rank of every slot: `ranks()[slot - 1]`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.order.len()];
        for (r, &slot) in self.order.iter().enumerate() {
            ranks[slot - 1] = r + 1;
        }
        ranks
    }

    /// Doc ids of `task` in ranked order.
    pub fn doc_ids<'a>(&self, task: &'a RerankTask) -> Vec<&'a str> {
        self.order
            .iter()
            .map(|&i| task.candidate(i).doc_id.as_str())
            .collect()
    }
}

/// True iff `perm.order` is a bijection on `1..=n`.
pub fn validate_permutation(perm: &Permutation, n: usize) -> bool {
    if perm.order.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &i in &perm.order {
        if i == 0 || i > n || seen[i - 1] {
            return false;
        }
        seen[i - 1] = true;
    }
    true
}

/// A token sequence whose surfaces concatenate to `rendered`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "TokenSeqRepr", into = "TokenSeqRepr")]
pub struct TokenSeq {
    tokens: Vec<String>,
    rendered: String,
}

#[derive(Serialize, Deserialize)]
struct TokenSeqRepr {
    tokens: Vec<String>,
    rendered: String,
}

impl TryFrom<TokenSeqRepr> for TokenSeq {
    type Error = String;

    fn try_from(r: TokenSeqRepr) -> Result<Self, Self::Error> {
        let seq = TokenSeq::from_tokens(r.tokens);
        if seq.rendered != r.rendered {
            return Err(format!(
                "token surfaces render `{}`, not `{}`",
                seq.rendered, r.rendered
            ));
        }
        Ok(seq)
    }
}

impl From<TokenSeq> for TokenSeqRepr {
    fn from(t: TokenSeq) -> Self {
        Self {
            tokens: t.tokens,
            rendered: t.rendered,
        }
    }
}

impl TokenSeq {
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let rendered = tokens.concat();
        Self { tokens, rendered }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn rendered(&self) -> &str {
        &self.rendered
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Everything the decoder saw and decided at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step_index: usize,
    pub remaining: BTreeSet<usize>,
    /// Identifier-level joint probabilities under the main prompt.
    pub p_main: BTreeMap<usize, f64>,
    /// Same under the content-free prompt; absent for the uncalibrated decoder.
    pub p_prior: Option<BTreeMap<usize, f64>>,
    /// Entropy (nats) of `p_main` renormalized over `remaining`.
    pub entropy_h: f64,
    pub alpha_k: f64,
    pub scores: BTreeMap<usize, f64>,
    pub chosen: usize,
}
