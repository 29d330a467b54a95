//! Message normalization, tokenization, suffix-rule lemmatization and the
//! rare-word-pruned vocabulary.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;

use crate::{Error, Result};

pub const DEFAULT_MIN_COUNT: usize = 2;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenizedDoc {
    pub tokens: Vec<String>,
}

impl TokenizedDoc {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        TokenizedDoc {
            tokens: tokens.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:https?://|www\.)\S*").unwrap())
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@+\w*").unwrap())
}

/// Collapses every run of three or more identical letters down to two.
fn collapse_repeats(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut prev: Option<char> = None;
    let mut run = 0;
    for c in s.chars() {
        if Some(c) == prev {
            run += 1;
        } else {
            prev = Some(c);
            run = 1;
        }
        if run <= 2 || !c.is_alphabetic() {
            out.push(c);
        }
    }
    out
}

fn normalize_step(text: &str) -> String {
    let text = text.to_lowercase().replace('#', "");
    let text = url_re().replace_all(&text, " ");
    let text = collapse_repeats(&mention_re().replace_all(&text, " "));
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercases, strips URLs, `@mentions` and `#`, collapses letter runs to
/// two, and squeezes whitespace.
pub fn normalize_text(raw: &str) -> String {
    // One pass can expose a new match for another rule (`htttp://` only
    // becomes a URL after collapsing), so iterate to a fixed point.
    let mut current = normalize_step(raw);
    loop {
        let next = normalize_step(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

/// Splits on runs of non-alphanumeric characters.
pub fn tokenize(normalized: &str) -> TokenizedDoc {
    TokenizedDoc {
        tokens: normalized
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(String::from)
            .collect(),
    }
}

fn has_vowel(s: &str) -> bool {
    s.chars().any(|c| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u'))
}

/// One application of the first matching suffix rule.
fn lemmatize_step(token: &str) -> Option<String> {
    let n = token.chars().count();
    if n > 4 && token.ends_with("ies") {
        return Some(format!("{}y", &token[..token.len() - 3]));
    }
    if token.ends_with("sses") {
        return Some(token[..token.len() - 2].to_string());
    }
    if n > 3 && token.ends_with('s') && !token.ends_with("ss") {
        return Some(token[..token.len() - 1].to_string());
    }
    if let Some(stem) = token.strip_suffix("ing") {
        if has_vowel(stem) {
            return Some(stem.to_string());
        }
    }
    if let Some(stem) = token.strip_suffix("ed") {
        if has_vowel(stem) {
            return Some(stem.to_string());
        }
    }
    None
}

/// Suffix-rule lemmatizer, applied to a fixed point so it is idempotent.
///
/// Rules, first match wins per step: `ies`→`y` (length > 4), `sses`→`ss`,
/// drop a trailing `s` (length > 3, not `ss`), strip `ing` / `ed` when the
/// remaining stem has a vowel.
pub fn lemmatize(token: &str) -> String {
    let mut current = token.to_string();
    while let Some(next) = lemmatize_step(&current) {
        current = next;
    }
    current
}

/// normalize → tokenize → lemmatize.
pub fn preprocess(raw: &str) -> TokenizedDoc {
    let mut doc = tokenize(&normalize_text(raw));
    for t in &mut doc.tokens {
        *t = lemmatize(t);
    }
    doc
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    document_frequency: Vec<usize>,
    min_count: usize,
}

const VOCAB_MAGIC: &str = "liesensor-vocabulary";

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, index: usize) -> Option<&str> {
        self.terms.get(index).map(String::as_str)
    }

    pub fn document_frequency(&self, index: usize) -> usize {
        self.document_frequency[index]
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(String::as_str)
    }

    /// `header` line, one `term<TAB>index<TAB>doc_freq` line per term,
    /// then `crc32<TAB>hex` over all preceding bytes.
    pub fn to_text(&self) -> String {
        let mut out = format!("{VOCAB_MAGIC}\t{}\t{}\n", self.len(), self.min_count);
        for (i, (t, df)) in self.terms.iter().zip(&self.document_frequency).enumerate() {
            writeln!(out, "{t}\t{i}\t{df}").unwrap();
        }
        let crc = crc32fast::hash(out.as_bytes());
        writeln!(out, "crc32\t{crc:08x}").unwrap();
        out
    }

    /// Parses [`Vocabulary::to_text`] output; a missing or wrong checksum
    /// line (as left by truncation) is [`Error::Checksum`].
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Parse(format!("vocabulary: {msg}"));
        let trimmed = text.strip_suffix('\n').unwrap_or(text);
        let (body, trailer) = match trimmed.rfind('\n') {
            Some(i) => (&text[..=i], &trimmed[i + 1..]),
            None => return Err(Error::Checksum),
        };
        let stored = trailer
            .strip_prefix("crc32\t")
            .and_then(|h| u32::from_str_radix(h, 16).ok())
            .ok_or(Error::Checksum)?;
        if crc32fast::hash(body.as_bytes()) != stored {
            return Err(Error::Checksum);
        }
        let mut lines = body.lines();
        let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
        let parts: Vec<&str> = header.split('\t').collect();
        if parts.len() != 3 || parts[0] != VOCAB_MAGIC {
            return Err(bad(format!("bad header `{header}`")));
        }
        let size: usize = parts[1].parse().map_err(|_| bad("bad size".into()))?;
        let min_count: usize = parts[2].parse().map_err(|_| bad("bad min_count".into()))?;
        let mut terms = Vec::with_capacity(size);
        let mut document_frequency = Vec::with_capacity(size);
        for (n, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(format!("line {}: expected 3 fields", n + 2)));
            }
            let index: usize = fields[1]
                .parse()
                .map_err(|_| bad(format!("line {}: bad index", n + 2)))?;
            if index != terms.len() {
                return Err(bad(format!("line {}: index {index} out of order", n + 2)));
            }
            terms.push(fields[0].to_string());
            document_frequency.push(
                fields[2]
                    .parse()
                    .map_err(|_| bad(format!("line {}: bad doc_freq", n + 2)))?,
            );
        }
        if terms.len() != size {
            return Err(bad(format!(
                "header says {size} terms, found {}",
                terms.len()
            )));
        }
        if terms.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary {
            terms,
            index,
            document_frequency,
            min_count,
        })
    }
}

/// Keeps terms whose corpus frequency reaches `min_count`, indexed by
/// descending frequency with lexicographic tie-break.
pub fn build_vocabulary(docs: &[TokenizedDoc], min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::InvalidArgument("min_count must be ≥ 1".into()));
    }
    let mut freq: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for doc in docs {
        let mut seen: Vec<&str> = doc.tokens.iter().map(String::as_str).collect();
        for t in &seen {
            freq.entry(t).or_default().0 += 1;
        }
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            freq.get_mut(t).unwrap().1 += 1;
        }
    }
    let mut kept: Vec<(&str, usize, usize)> = freq
        .into_iter()
        .filter(|(_, (f, _))| *f >= min_count)
        .map(|(t, (f, df))| (t, f, df))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let terms: Vec<String> = kept.iter().map(|k| k.0.to_string()).collect();
    let index = terms
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    Ok(Vocabulary {
        terms,
        index,
        document_frequency: kept.iter().map(|k| k.2).collect(),
        min_count,
    })
}
