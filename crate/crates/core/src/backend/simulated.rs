//! A deterministic stand-in for a listwise reranking LM.
//!
//! The simulator reads the prompt back with a [`PromptParser`], decides whether
//! it carries real passages or placeholders, and scores identifier labels
//! with a softmax over
//!
//! ```text
//! main prompt:          (relevance(q, d) + position_bias[slot] + noise) / temperature
//! content-free prompt:  position_bias[slot] / temperature
//! ```
//!
//! restricted to the labels in the request that the prefix has not already
//! emitted. Every label token carries the whole mass on its first token; the
//! terminator has probability one.
//!
//! A prompt counts as "main" when each slot text can be matched to a distinct
//! registered document of its query; anything else is treated as content-free.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BackendError, ContinuationScore, ScoringBackend, ScoringRequest};
use crate::domain::{IdentifierScheme, RerankTask, TokenSeq};
use crate::prompting::{PromptParser, PromptTemplate, TemplateError};

/// One line of the relevance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceEntry {
    pub query_id: String,
    pub doc_id: String,
    pub logit: f64,
}

/// JSON file form of a [`SimulatedLm`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatedSpec {
    #[serde(default)]
    pub relevance: Vec<RelevanceEntry>,
    #[serde(default)]
    pub position_bias: Vec<f64>,
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
    /// Amplitude of a deterministic per-(document, slot) logit perturbation on
    /// main prompts. Zero disables it.
    #[serde(default)]
    pub interaction_noise: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone)]
struct RegisteredQuery {
    query_id: String,
    /// (text, doc_id) in registration order.
    docs: Vec<(String, String)>,
}

/// Parsed prompts are cached; the decoder scores the same prompt once per step.
const CACHE_LIMIT: usize = 64;

type PromptLogits = Arc<(Vec<f64>, IdentifierScheme, bool)>;

#[derive(Debug)]
pub struct SimulatedLm {
    relevance: HashMap<(String, String), f64>,
    position_bias: Vec<f64>,
    temperature: f64,
    seed: u64,
    interaction_noise: f64,
    parser: PromptParser,
    queries: HashMap<String, RegisteredQuery>,
    label_re: Regex,
    cache: Mutex<HashMap<String, PromptLogits>>,
}

impl Clone for SimulatedLm {
    fn clone(&self) -> Self {
        Self {
            relevance: self.relevance.clone(),
            position_bias: self.position_bias.clone(),
            temperature: self.temperature,
            seed: self.seed,
            interaction_noise: self.interaction_noise,
            parser: self.parser.clone(),
            queries: self.queries.clone(),
            label_re: self.label_re.clone(),
            cache: Mutex::default(),
        }
    }
}

impl SimulatedLm {
    pub fn new(position_bias: Vec<f64>, temperature: f64) -> Self {
        assert!(temperature > 0.0, "temperature must be positive");
        Self {
            relevance: HashMap::new(),
            position_bias,
            temperature,
            seed: 0,
            interaction_noise: 0.0,
            parser: PromptParser::new(&PromptTemplate::default()).expect("default template is valid"),
            queries: HashMap::new(),
            label_re: Regex::new(r"\[([^\[\]]*)\]").expect("static regex"),
            cache: Mutex::default(),
        }
    }

    pub fn from_spec(spec: &SimulatedSpec) -> Result<Self, BackendError> {
        if !(spec.temperature > 0.0) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be positive, got {}",
                spec.temperature
            )));
        }
        let mut sim = Self::new(spec.position_bias.clone(), spec.temperature)
            .with_seed(spec.seed)
            .with_interaction_noise(spec.interaction_noise);
        for e in &spec.relevance {
            sim.relevance
                .insert((e.query_id.clone(), e.doc_id.clone()), e.logit);
        }
        Ok(sim)
    }

    pub fn with_template(mut self, template: &PromptTemplate) -> Result<Self, TemplateError> {
        self.parser = PromptParser::new(template)?;
        self.clear_cache();
        Ok(self)
    }

    fn clear_cache(&mut self) {
        self.cache.get_mut().unwrap_or_else(|e| e.into_inner()).clear();
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.clear_cache();
        self
    }

    pub fn with_interaction_noise(mut self, amplitude: f64) -> Self {
        self.interaction_noise = amplitude;
        self.clear_cache();
        self
    }

    pub fn with_relevance(mut self, query_id: &str, doc_id: &str, logit: f64) -> Self {
        self.relevance
            .insert((query_id.to_string(), doc_id.to_string()), logit);
        self.clear_cache();
        self
    }

    /// Makes the task's query and documents recognizable in prompts. Tasks
    /// sharing a query text must share the query id; their documents are
    /// merged.
    pub fn with_task(mut self, task: &RerankTask) -> Self {
        let entry = self
            .queries
            .entry(task.query.text.clone())
            .or_insert_with(|| RegisteredQuery {
                query_id: task.query.id.clone(),
                docs: Vec::new(),
            });
        for c in &task.candidates {
            if !entry.docs.iter().any(|(_, id)| id == &c.doc_id) {
                entry.docs.push((c.text.clone(), c.doc_id.clone()));
            }
        }
        self.clear_cache();
        self
    }

    pub fn with_tasks<'a>(self, tasks: impl IntoIterator<Item = &'a RerankTask>) -> Self {
        tasks.into_iter().fold(self, |s, t| s.with_task(t))
    }

    pub fn position_bias(&self) -> &[f64] {
        &self.position_bias
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn relevance(&self, query_id: &str, doc_id: &str) -> f64 {
        self.relevance
            .get(&(query_id.to_string(), doc_id.to_string()))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn bias(&self, slot: usize) -> f64 {
        self.position_bias.get(slot - 1).copied().unwrap_or(0.0)
    }

    /// Deterministic perturbation in `[-amplitude, amplitude]`.
    pub fn noise(&self, query_id: &str, doc_id: &str, slot: usize) -> f64 {
        if self.interaction_noise == 0.0 {
            return 0.0;
        }
        let mut h = Fnv::new();
        h.write_u64(self.seed);
        h.write(query_id.as_bytes());
        h.write(&[0xff]);
        h.write(doc_id.as_bytes());
        h.write_u64(slot as u64);
        let unit = (h.finish() >> 11) as f64 / (1u64 << 53) as f64;
        self.interaction_noise * (2.0 * unit - 1.0)
    }

    /// Raw per-slot logits (before temperature) indexed by `slot - 1`, the
    /// identifier scheme of the prompt, and whether it is a main prompt.
    pub fn prompt_logits(&self, prompt: &str) -> Result<(Vec<f64>, IdentifierScheme, bool), BackendError> {
        let hit = self.cached_logits(prompt)?;
        Ok((hit.0.clone(), hit.1, hit.2))
    }

    fn cached_logits(&self, prompt: &str) -> Result<PromptLogits, BackendError> {
        if let Some(hit) = self.cache.lock().unwrap_or_else(|e| e.into_inner()).get(prompt) {
            return Ok(hit.clone());
        }
        let fresh = Arc::new(self.compute_logits(prompt)?);
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(prompt.to_string(), fresh.clone());
        Ok(fresh)
    }

    fn compute_logits(&self, prompt: &str) -> Result<(Vec<f64>, IdentifierScheme, bool), BackendError> {
        let parsed = self
            .parser
            .parse(prompt)
            .map_err(|e| BackendError::UnrecognizedPrompt(e.to_string()))?;
        let reg = self.queries.get(&parsed.query).ok_or_else(|| {
            BackendError::UnrecognizedPrompt(format!("unregistered query `{}`", parsed.query))
        })?;

        // Match each slot to a distinct registered document with that text.
        let mut used = vec![false; reg.docs.len()];
        let mut matched: Vec<Option<&str>> = Vec::with_capacity(parsed.passages.len());
        for text in &parsed.passages {
            let hit = reg
                .docs
                .iter()
                .enumerate()
                .find(|(i, (t, _))| !used[*i] && t == text)
                .map(|(i, (_, id))| {
                    used[i] = true;
                    id.as_str()
                });
            matched.push(hit);
        }
        let is_main = matched.iter().all(Option::is_some);

        let logits = matched
            .iter()
            .enumerate()
            .map(|(i, doc)| {
                let slot = i + 1;
                let mut z = self.bias(slot);
                if is_main {
                    let doc = doc.expect("all slots matched");
                    z += self.relevance(&reg.query_id, doc) + self.noise(&reg.query_id, doc, slot);
                }
                z
            })
            .collect();
        Ok((logits, parsed.scheme, is_main))
    }

    fn emitted_slots(&self, prefix: &str, scheme: IdentifierScheme, n: usize) -> Result<BTreeSet<usize>, BackendError> {
        let mut out = BTreeSet::new();
        for cap in self.label_re.captures_iter(prefix) {
            let label = &cap[1];
            match scheme.parse(label) {
                Some(i) if i >= 1 && i <= n => {
                    out.insert(i);
                }
                _ => {
                    return Err(BackendError::UnrecognizedPrompt(format!(
                        "prefix label `{label}` does not name a passage"
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Scores a request. See the module docs for the model.
    pub fn simulate(&self, req: &ScoringRequest) -> Result<Vec<ContinuationScore>, BackendError> {
        req.validate()?;
        let hit = self.cached_logits(&req.prompt)?;
        let (logits, scheme) = (&hit.0, hit.1);
        let n = logits.len();
        let emitted = self.emitted_slots(&req.prefix, scheme, n)?;

        let mut slots = Vec::with_capacity(req.continuations.len());
        for c in &req.continuations {
            let label = c.rendered().strip_suffix(']').ok_or_else(|| {
                BackendError::UnrecognizedPrompt(format!("continuation `{}` lacks `]`", c.rendered()))
            })?;
            let slot = scheme
                .parse(label)
                .filter(|&i| i >= 1 && i <= n)
                .ok_or_else(|| {
                    BackendError::UnrecognizedPrompt(format!("label `{label}` does not name a passage"))
                })?;
            slots.push(slot);
        }

        let live: BTreeMap<usize, f64> = slots
            .iter()
            .filter(|s| !emitted.contains(s))
            .map(|&s| (s, logits[s - 1] / self.temperature))
            .collect();
        let max = live.values().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + live.values().map(|z| (z - max).exp()).sum::<f64>().ln();

        req.continuations
            .iter()
            .zip(&slots)
            .map(|(c, s)| {
                let lp = match live.get(s) {
                    Some(z) => (z - log_norm).min(0.0),
                    None => f64::NEG_INFINITY,
                };
                let mut per_token = vec![0.0; c.len()];
                per_token[0] = lp;
                ContinuationScore::new(c.clone(), per_token)
            })
            .collect()
    }
}

impl ScoringBackend for SimulatedLm {
    /// One token per character.
    fn tokenize_label(&self, label: &str, terminator: &str) -> Result<TokenSeq, BackendError> {
        let text = format!("{label}{terminator}");
        Ok(TokenSeq::from_tokens(text.chars().map(String::from)))
    }

    fn score_continuations(&self, req: &ScoringRequest) -> Result<Vec<ContinuationScore>, BackendError> {
        self.simulate(req)
    }
}

/// 64-bit FNV-1a; stable across platforms and releases.
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }
    fn finish(&self) -> u64 {
        self.0
    }
}
