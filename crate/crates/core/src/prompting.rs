//! Listwise ranking prompts and their content-free twins.
//!
//! A prompt is laid out as
//!
//! ```text
//! system_text
//! user_preamble            ({num}, {query})
//! passage line 1           ({label}, {text})
//! ...                      (lines joined by '\n')
//! passage line N
//! user_postamble           ({num}, {query})
//! assistant_open
//! ```
//!
//! The content-free prompt keeps every byte of that layout and swaps each
//! passage text for a placeholder chosen by [`PlaceholderPolicy`].

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Candidate, IdentifierScheme, RerankTask};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unknown slot `{{{slot}}}` in {section}")]
    UnknownSlot { section: &'static str, slot: String },
    #[error("unterminated slot in {0}")]
    Unterminated(&'static str),
    #[error("slot `{{{slot}}}` is not allowed in {section}")]
    MisplacedSlot { section: &'static str, slot: String },
    #[error("passage line format must contain {{label}} followed by {{text}}")]
    LineFormat,
    #[error("template file: {0}")]
    File(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptParseError {
    #[error("prompt does not follow the template layout")]
    Layout,
    #[error("inconsistent {0} between preamble and postamble")]
    Inconsistent(&'static str),
    #[error("could not split passage block into {0} labelled lines")]
    Passages(usize),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// The ranking prompt template. Slot names: `{num}`, `{query}`, `{label}`, `{text}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system_text: String,
    pub user_preamble: String,
    pub passage_line_format: String,
    pub user_postamble: String,
    pub assistant_open: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            system_text: "<|system|>\nYou are RankLLM, an intelligent assistant that can rank \
                          passages based on their relevancy to the query.\n"
                .into(),
            user_preamble: "<|user|>\nI will provide you with {num} passages, each indicated by \
                            a numerical identifier []. Rank the passages based on their relevance \
                            to the search query: {query}.\n\n"
                .into(),
            passage_line_format: "[{label}] {text}".into(),
            user_postamble: "\n\nSearch Query: {query}.\n\nRank the {num} passages above based \
                             on their relevance to the search query. All the passages should be \
                             included and listed using identifiers, in descending order of \
                             relevance. The output format should be [] > [], e.g., [4] > [2]. \
                             Only respond with the ranking results, do not say any word or \
                             explain.\n"
                .into(),
            assistant_open: "<|assistant|>\n".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece<'a> {
    Lit(&'a str),
    Slot(&'a str),
}

fn split_slots<'a>(
    section: &'static str,
    s: &'a str,
    allowed: &[&str],
) -> Result<Vec<Piece<'a>>, TemplateError> {
    let mut out = Vec::new();
    let mut rest = s;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            out.push(Piece::Lit(&rest[..open]));
        }
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or(TemplateError::Unterminated(section))?;
        let name = &after[..close];
        match name {
            "num" | "query" | "label" | "text" => {
                if !allowed.contains(&name) {
                    return Err(TemplateError::MisplacedSlot {
                        section,
                        slot: name.into(),
                    });
                }
            }
            _ => {
                return Err(TemplateError::UnknownSlot {
                    section,
                    slot: name.into(),
                })
            }
        }
        out.push(Piece::Slot(name));
        rest = &after[close + 1..];
    }
    if !rest.is_empty() {
        out.push(Piece::Lit(rest));
    }
    Ok(out)
}

fn fill(
    section: &'static str,
    s: &str,
    allowed: &[&str],
    value: impl Fn(&str) -> String,
) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(s.len());
    for piece in split_slots(section, s, allowed)? {
        match piece {
            Piece::Lit(l) => out.push_str(l),
            Piece::Slot(name) => out.push_str(&value(name)),
        }
    }
    Ok(out)
}

const HEAD_SLOTS: &[&str] = &["num", "query"];
const LINE_SLOTS: &[&str] = &["label", "text"];

impl PromptTemplate {
    /// Checks every section for unknown or misplaced slots.
    pub fn validate(&self) -> Result<(), TemplateError> {
        split_slots("system_text", &self.system_text, HEAD_SLOTS)?;
        split_slots("user_preamble", &self.user_preamble, HEAD_SLOTS)?;
        split_slots("user_postamble", &self.user_postamble, HEAD_SLOTS)?;
        split_slots("assistant_open", &self.assistant_open, HEAD_SLOTS)?;
        self.line_parts()?;
        Ok(())
    }

    /// `(before label, between label and text, after text)`.
    fn line_parts(&self) -> Result<(&str, &str, &str), TemplateError> {
        let pieces = split_slots(
            "passage_line_format",
            &self.passage_line_format,
            LINE_SLOTS,
        )?;
        let mut before = "";
        let mut mid = "";
        let mut after = "";
        let mut seen = Vec::new();
        for p in pieces {
            match p {
                Piece::Slot(s) => seen.push(s),
                Piece::Lit(l) => match seen.len() {
                    0 => before = l,
                    1 => mid = l,
                    _ => after = l,
                },
            }
        }
        if seen != ["label", "text"] {
            return Err(TemplateError::LineFormat);
        }
        Ok((before, mid, after))
    }

    /// Parses the plain-text template file format:
    ///
    /// ```text
    /// === system ===
    /// ...
    /// === preamble ===
    /// ...
    /// === passage ===
    /// [{label}] {text}
    /// === postamble ===
    /// ...
    /// === assistant ===
    /// ...
    /// ```
    ///
    /// A section is the text between its header line and the next header,
    /// minus the single newline that ends its last line. Missing sections keep
    /// their default.
    pub fn from_sections(src: &str) -> Result<Self, TemplateError> {
        let mut t = PromptTemplate::default();
        let mut current: Option<String> = None;
        let mut body = String::new();
        let mut seen = std::collections::HashSet::new();

        let mut flush =
            |name: Option<String>, body: &mut String, t: &mut PromptTemplate| -> Result<(), TemplateError> {
                if let Some(name) = name {
                    if body.ends_with('\n') {
                        body.pop();
                    }
                    let text = std::mem::take(body);
                    if !seen.insert(name.clone()) {
                        return Err(TemplateError::File(format!("duplicate section `{name}`")));
                    }
                    match name.as_str() {
                        "system" => t.system_text = text,
                        "preamble" => t.user_preamble = text,
                        "passage" => t.passage_line_format = text,
                        "postamble" => t.user_postamble = text,
                        "assistant" => t.assistant_open = text,
                        other => {
                            return Err(TemplateError::File(format!("unknown section `{other}`")))
                        }
                    }
                } else if !body.trim().is_empty() {
                    return Err(TemplateError::File("text before first section".into()));
                } else {
                    body.clear();
                }
                Ok(())
            };

        for line in src.split_inclusive('\n') {
            let trimmed = line.trim_end_matches(['\n', '\r']);
            if let Some(name) = trimmed
                .strip_prefix("=== ")
                .and_then(|r| r.strip_suffix(" ==="))
            {
                flush(current.take(), &mut body, &mut t)?;
                current = Some(name.trim().to_string());
            } else {
                body.push_str(line);
            }
        }
        flush(current, &mut body, &mut t)?;
        t.validate()?;
        Ok(t)
    }

    /// Inverse of [`from_sections`](Self::from_sections).
    pub fn to_sections(&self) -> String {
        format!(
            "=== system ===\n{}\n=== preamble ===\n{}\n=== passage ===\n{}\n=== postamble ===\n{}\n=== assistant ===\n{}\n",
            self.system_text,
            self.user_preamble,
            self.passage_line_format,
            self.user_postamble,
            self.assistant_open
        )
    }
}

/// What replaces each passage text in the content-free prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceholderKind {
    /// The constant `fixed_text` in every slot.
    #[default]
    FixedString,
    /// Passage 1's text in every slot.
    Passage1Copy,
    /// Exactly one ASCII space.
    SingleSpace,
    /// Twenty spaces.
    SpaceX20,
    /// Twenty random alphanumerics.
    RandomX20,
    /// Spaces, as many as passage 1 has characters.
    SpaceLen1,
    /// Random alphanumerics, as many as passage 1 has characters.
    RandomLen1,
    /// Spaces, as many as the slot's own passage has characters.
    SpaceLenI,
}

pub const DEFAULT_PLACEHOLDER_TEXT: &str = "This is a placeholder";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct PlaceholderPolicy {
    pub kind: PlaceholderKind,
    pub fixed_text: String,
    pub rng_seed: u64,
}

impl Default for PlaceholderPolicy {
    fn default() -> Self {
        Self {
            kind: PlaceholderKind::FixedString,
            fixed_text: DEFAULT_PLACEHOLDER_TEXT.into(),
            rng_seed: 0,
        }
    }
}

impl PlaceholderPolicy {
    pub fn of_kind(kind: PlaceholderKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

const RANDOM_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";

fn random_text(seed: u64, slot: usize, len: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(slot as u64);
    (0..len)
        .map(|_| RANDOM_ALPHABET[rng.random_range(0..RANDOM_ALPHABET.len())] as char)
        .collect()
}

/// Placeholder text for 1-based slot `index`.
pub fn make_placeholder(policy: &PlaceholderPolicy, candidates: &[Candidate], index: usize) -> String {
    let first_len = || candidates.first().map_or(0, |c| c.text.chars().count());
    match policy.kind {
        PlaceholderKind::FixedString => policy.fixed_text.clone(),
        PlaceholderKind::Passage1Copy => candidates.first().map(|c| c.text.clone()).unwrap_or_default(),
        PlaceholderKind::SingleSpace => " ".into(),
        PlaceholderKind::SpaceX20 => " ".repeat(20),
        PlaceholderKind::RandomX20 => random_text(policy.rng_seed, index, 20),
        PlaceholderKind::SpaceLen1 => " ".repeat(first_len()),
        PlaceholderKind::RandomLen1 => random_text(policy.rng_seed, index, first_len()),
        PlaceholderKind::SpaceLenI => " ".repeat(candidates[index - 1].text.chars().count()),
    }
}

/// A rendered prompt plus the byte ranges holding each passage's text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub passage_spans: Vec<Range<usize>>,
}

/// Renders the template around arbitrary passage texts.
pub fn render_with_texts(
    template: &PromptTemplate,
    query: &str,
    scheme: IdentifierScheme,
    texts: &[String],
) -> Result<RenderedPrompt, TemplateError> {
    let num = texts.len().to_string();
    let head = |slot: &str| match slot {
        "num" => num.clone(),
        _ => query.to_string(),
    };
    let mut out = fill("system_text", &template.system_text, HEAD_SLOTS, head)?;
    out.push_str(&fill("user_preamble", &template.user_preamble, HEAD_SLOTS, head)?);
    let (before, mid, after) = template.line_parts()?;
    let mut spans = Vec::with_capacity(texts.len());
    for (i, text) in texts.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(before);
        out.push_str(&scheme.render(i + 1));
        out.push_str(mid);
        let start = out.len();
        out.push_str(text);
        spans.push(start..out.len());
        out.push_str(after);
    }
    out.push_str(&fill("user_postamble", &template.user_postamble, HEAD_SLOTS, head)?);
    out.push_str(&fill("assistant_open", &template.assistant_open, HEAD_SLOTS, head)?);
    Ok(RenderedPrompt {
        text: out,
        passage_spans: spans,
    })
}

pub fn render_main_prompt(task: &RerankTask, template: &PromptTemplate) -> Result<String, TemplateError> {
    Ok(render_main_prompt_spans(task, template)?.text)
}

pub fn render_main_prompt_spans(
    task: &RerankTask,
    template: &PromptTemplate,
) -> Result<RenderedPrompt, TemplateError> {
    let texts: Vec<String> = task.candidates.iter().map(|c| c.text.clone()).collect();
    render_with_texts(template, &task.query.text, task.scheme, &texts)
}

pub fn render_empty_prompt(task: &RerankTask, template: &PromptTemplate) -> Result<String, TemplateError> {
    Ok(render_empty_prompt_spans(task, template)?.text)
}

pub fn render_empty_prompt_spans(
    task: &RerankTask,
    template: &PromptTemplate,
) -> Result<RenderedPrompt, TemplateError> {
    let texts: Vec<String> = (1..=task.len())
        .map(|i| make_placeholder(&task.placeholder, &task.candidates, i))
        .collect();
    render_with_texts(template, &task.query.text, task.scheme, &texts)
}

/// A prompt taken apart again.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub query: String,
    pub scheme: IdentifierScheme,
    pub passages: Vec<String>,
}

fn section_pattern(
    section: &'static str,
    s: &str,
    slots: &mut Vec<&'static str>,
) -> Result<String, TemplateError> {
    let mut pat = String::new();
    for piece in split_slots(section, s, HEAD_SLOTS)? {
        match piece {
            Piece::Lit(l) => pat.push_str(&regex::escape(l)),
            Piece::Slot("num") => {
                pat.push_str(r"(\d+)");
                slots.push("num");
            }
            Piece::Slot(_) => {
                pat.push_str("(.*?)");
                slots.push("query");
            }
        }
    }
    Ok(pat)
}

/// A compiled parser for prompts rendered with one template. Build it once
/// and reuse it; [`parse_prompt`] compiles a fresh one per call.
#[derive(Debug, Clone)]
pub struct PromptParser {
    template: PromptTemplate,
    re: Regex,
    slots: Vec<&'static str>,
    block_group: usize,
}

impl PromptParser {
    pub fn new(template: &PromptTemplate) -> Result<Self, TemplateError> {
        let mut slots = Vec::new();
        let mut pat = String::from(r"(?s)\A");
        pat.push_str(&section_pattern("system_text", &template.system_text, &mut slots)?);
        pat.push_str(&section_pattern("user_preamble", &template.user_preamble, &mut slots)?);
        let block_group = slots.len() + 1;
        pat.push_str("(.*)");
        slots.push("block");
        pat.push_str(&section_pattern("user_postamble", &template.user_postamble, &mut slots)?);
        pat.push_str(&section_pattern("assistant_open", &template.assistant_open, &mut slots)?);
        pat.push_str(r"\z");
        template.line_parts()?;
        let re = Regex::new(&pat).map_err(|e| TemplateError::File(e.to_string()))?;
        Ok(Self {
            template: template.clone(),
            re,
            slots,
            block_group,
        })
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    /// Recovers query, labels and passage texts. The result is verified by
    /// re-rendering, so a successful parse always reproduces `prompt` byte
    /// for byte.
    pub fn parse(&self, prompt: &str) -> Result<ParsedPrompt, PromptParseError> {
        let template = &self.template;
        let caps = self.re.captures(prompt).ok_or(PromptParseError::Layout)?;
        let (slots, block_group) = (&self.slots, self.block_group);
        let mut num: Option<&str> = None;
        let mut query: Option<&str> = None;
        for (i, kind) in slots.iter().enumerate() {
            let v = caps.get(i + 1).map_or("", |m| m.as_str());
            let target = match *kind {
                "num" => &mut num,
                "query" => &mut query,
                _ => continue,
            };
            match target {
                Some(prev) if *prev != v => {
                    return Err(PromptParseError::Inconsistent(kind));
                }
                _ => *target = Some(v),
            }
        }
        let n: usize = num
            .and_then(|s| s.parse().ok())
            .ok_or(PromptParseError::Layout)?;
        let query = query.ok_or(PromptParseError::Layout)?.to_string();
        let block = caps.get(block_group).map_or("", |m| m.as_str());

        let (before, mid, after) = template.line_parts()?;
        let scheme = [IdentifierScheme::Numeric, IdentifierScheme::Alphabetic]
            .into_iter()
            .find(|s| block.starts_with(&format!("{before}{}{mid}", s.render(1))))
            .ok_or(PromptParseError::Passages(n))?;

        let mut passages = Vec::with_capacity(n);
        let mut rest = block;
        for k in 1..=n {
            let head = format!("{before}{}{mid}", scheme.render(k));
            rest = rest.strip_prefix(&head).ok_or(PromptParseError::Passages(n))?;
            if k == n {
                let text = rest.strip_suffix(after).ok_or(PromptParseError::Passages(n))?;
                passages.push(text.to_string());
            } else {
                let sep = format!("{after}\n{before}{}{mid}", scheme.render(k + 1));
                let end = rest.find(&sep).ok_or(PromptParseError::Passages(n))?;
                passages.push(rest[..end].to_string());
                rest = &rest[end + after.len() + 1..];
            }
        }

        let parsed = ParsedPrompt {
            query,
            scheme,
            passages,
        };
        let again = render_with_texts(template, &parsed.query, parsed.scheme, &parsed.passages)?;
        if again.text != prompt {
            return Err(PromptParseError::Layout);
        }
        Ok(parsed)
    }
}

/// Parses a prompt rendered with `template`. See [`PromptParser::parse`].
pub fn parse_prompt(template: &PromptTemplate, prompt: &str) -> Result<ParsedPrompt, PromptParseError> {
    PromptParser::new(template)?.parse(prompt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Query;
    use proptest::prelude::*;

    fn task(texts: &[&str], scheme: IdentifierScheme, kind: PlaceholderKind) -> RerankTask {
        RerankTask::new(
            Query::new("q1", "how do plants grow").unwrap(),
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| (format!("d{}", i + 1), t.to_string()))
                .collect(),
            scheme,
            PlaceholderPolicy::of_kind(kind),
        )
        .unwrap()
    }

    #[test]
    fn main_prompt_has_lines_and_instructions() {
        let t = task(&["sunlight", "water"], IdentifierScheme::Numeric, PlaceholderKind::FixedString);
        let p = render_main_prompt(&t, &PromptTemplate::default()).unwrap();
        assert!(p.contains("\n[1] sunlight\n[2] water\n"));
        assert!(p.contains("Rank the passages based on their relevance to the search query"));
        assert!(p.contains("I will provide you with 2 passages"));
        assert!(p.contains("Rank the 2 passages above"));
        assert!(p.contains("Search Query: how do plants grow."));
    }

    #[test]
    fn alphabetic_lines() {
        let t = task(&["x", "y"], IdentifierScheme::Alphabetic, PlaceholderKind::FixedString);
        let p = render_main_prompt(&t, &PromptTemplate::default()).unwrap();
        assert!(p.contains("[A] x\n[B] y"));
    }

    #[test]
    fn empty_prompt_variants() {
        let tpl = PromptTemplate::default();
        let t = task(&["a", "b", "c"], IdentifierScheme::Numeric, PlaceholderKind::FixedString);
        let p = render_empty_prompt(&t, &tpl).unwrap();
        assert!(p.contains(
            "[1] This is a placeholder\n[2] This is a placeholder\n[3] This is a placeholder\n"
        ));

        let t = task(&["a", "b"], IdentifierScheme::Numeric, PlaceholderKind::SingleSpace);
        let p = render_empty_prompt(&t, &tpl).unwrap();
        assert!(p.contains("[1]  \n[2]  \n"));

        let t = task(
            &["twelve chars", "xy"],
            IdentifierScheme::Numeric,
            PlaceholderKind::SpaceLenI,
        );
        let r = render_empty_prompt_spans(&t, &tpl).unwrap();
        assert_eq!(&r.text[r.passage_spans[0].clone()], " ".repeat(12));
        assert_eq!(&r.text[r.passage_spans[1].clone()], "  ");
    }

    #[test]
    fn placeholder_examples() {
        let t = task(&["first doc", "b", "c"], IdentifierScheme::Numeric, PlaceholderKind::FixedString);
        let c = &t.candidates;
        let pol = PlaceholderPolicy::default;
        assert_eq!(make_placeholder(&pol(), c, 2), "This is a placeholder");
        let copy = PlaceholderPolicy::of_kind(PlaceholderKind::Passage1Copy);
        assert_eq!(make_placeholder(&copy, c, 3), "first doc");
        let s20 = PlaceholderPolicy::of_kind(PlaceholderKind::SpaceX20);
        assert_eq!(make_placeholder(&s20, c, 1), " ".repeat(20));
        let sl1 = PlaceholderPolicy::of_kind(PlaceholderKind::SpaceLen1);
        assert_eq!(make_placeholder(&sl1, c, 3), " ".repeat(9));

        let r20 = PlaceholderPolicy {
            kind: PlaceholderKind::RandomX20,
            rng_seed: 7,
            ..Default::default()
        };
        let a = make_placeholder(&r20, c, 1);
        assert_eq!(a.len(), 20);
        assert!(a.bytes().all(|b| b.is_ascii_alphanumeric()));
        assert_eq!(a, make_placeholder(&r20, c, 1));
        assert_ne!(a, make_placeholder(&r20, c, 2));
        let rl1 = PlaceholderPolicy {
            kind: PlaceholderKind::RandomLen1,
            ..r20
        };
        assert_eq!(make_placeholder(&rl1, c, 2).chars().count(), 9);
    }

    #[test]
    fn unknown_slot_is_an_error() {
        let tpl = PromptTemplate {
            user_preamble: "I have {count} passages".into(),
            ..Default::default()
        };
        let t = task(&["a", "b"], IdentifierScheme::Numeric, PlaceholderKind::FixedString);
        assert!(matches!(
            render_main_prompt(&t, &tpl),
            Err(TemplateError::UnknownSlot { .. })
        ));
        let tpl = PromptTemplate {
            passage_line_format: "{text}".into(),
            ..Default::default()
        };
        assert_eq!(render_main_prompt(&t, &tpl), Err(TemplateError::LineFormat));
    }

    #[test]
    fn section_file_round_trip() {
        let tpl = PromptTemplate::default();
        let text = tpl.to_sections();
        assert_eq!(PromptTemplate::from_sections(&text).unwrap(), tpl);

        let custom = "=== passage ===\n<{label}> {text}\n";
        let t = PromptTemplate::from_sections(custom).unwrap();
        assert_eq!(t.passage_line_format, "<{label}> {text}");
        assert_eq!(t.system_text, PromptTemplate::default().system_text);
        assert!(PromptTemplate::from_sections("=== bogus ===\nx\n").is_err());
    }

    #[test]
    fn parse_inverts_render_for_main_and_empty() {
        let tpl = PromptTemplate::default();
        let t = task(
            &["text with {braces} and [3] brackets", "", "multi\nline"],
            IdentifierScheme::Alphabetic,
            PlaceholderKind::SpaceLenI,
        );
        for p in [render_main_prompt(&t, &tpl).unwrap(), render_empty_prompt(&t, &tpl).unwrap()] {
            let parsed = parse_prompt(&tpl, &p).unwrap();
            assert_eq!(parsed.query, "how do plants grow");
            assert_eq!(parsed.scheme, IdentifierScheme::Alphabetic);
            assert_eq!(parsed.passages.len(), 3);
        }
        assert_eq!(
            parse_prompt(&tpl, "hello").unwrap_err(),
            PromptParseError::Layout
        );
    }

    fn mask(r: &RenderedPrompt) -> String {
        let mut out = String::new();
        let mut last = 0;
        for s in &r.passage_spans {
            out.push_str(&r.text[last..s.start]);
            out.push('\u{0}');
            last = s.end;
        }
        out.push_str(&r.text[last..]);
        out
    }

    proptest! {
        #[test]
        fn structural_parity_and_determinism(
            texts in proptest::collection::vec("[a-zA-Z ]{0,30}", 2..12),
            kind_ix in 0usize..8,
            seed in any::<u64>(),
            alpha in any::<bool>(),
        ) {
            let kinds = [
                PlaceholderKind::FixedString, PlaceholderKind::Passage1Copy,
                PlaceholderKind::SingleSpace, PlaceholderKind::SpaceX20,
                PlaceholderKind::RandomX20, PlaceholderKind::SpaceLen1,
                PlaceholderKind::RandomLen1, PlaceholderKind::SpaceLenI,
            ];
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let scheme = if alpha { IdentifierScheme::Alphabetic } else { IdentifierScheme::Numeric };
            let mut t = task(&refs, scheme, kinds[kind_ix]);
            t.placeholder.rng_seed = seed;
            let tpl = PromptTemplate::default();
            let main = render_main_prompt_spans(&t, &tpl).unwrap();
            let empty = render_empty_prompt_spans(&t, &tpl).unwrap();
            prop_assert_eq!(mask(&main), mask(&empty));
            prop_assert_eq!(&empty, &render_empty_prompt_spans(&t, &tpl).unwrap());
            for i in 1..=t.len() {
                if kinds[kind_ix] == PlaceholderKind::SpaceLenI {
                    prop_assert_eq!(
                        make_placeholder(&t.placeholder, &t.candidates, i).chars().count(),
                        t.candidates[i - 1].text.chars().count()
                    );
                }
            }
            let parsed = parse_prompt(&tpl, &main.text).unwrap();
            prop_assert_eq!(parsed.passages, texts);
        }
    }
}
