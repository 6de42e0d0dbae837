//! Caption normalization, vocabulary construction and label encoding.
//!
//! Normalization rules, applied in order:
//!
//! 1. lowercase;
//! 2. canonical decomposition (NFD) and removal of every combining mark;
//! 3. hyphen, slash and underscore become spaces;
//! 4. every remaining character that is not `a..=z` or whitespace is deleted
//!    (digits, punctuation, `#`, non-Latin scripts);
//! 5. split on whitespace runs.
//!
//! Vocabularies are ordered by count descending, then by word bytes ascending.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

pub const DICT_FORMAT: &str = "#weaklearn-dict v1";

#[derive(Debug, Error)]
pub enum TextError {
    #[error("empty vocabulary")]
    EmptyVocabulary,
    #[error("vocabulary size must be at least 1")]
    ZeroVocabulary,
    #[error("malformed dictionary file: {0}")]
    MalformedDictionary(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenizedDoc {
    pub tokens: Vec<String>,
}

impl TokenizedDoc {
    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

const SPLIT_CHARS: [char; 3] = ['-', '/', '_'];

pub fn normalize_text(raw: &str) -> TokenizedDoc {
    let lowered = raw.to_lowercase();
    let mut cleaned = String::with_capacity(lowered.len());
    for c in lowered.nfd() {
        if is_combining_mark(c) {
            continue;
        }
        if SPLIT_CHARS.contains(&c) || c.is_whitespace() {
            cleaned.push(' ');
        } else if c.is_ascii_lowercase() {
            cleaned.push(c);
        }
    }
    TokenizedDoc { tokens: cleaned.split_whitespace().map(str::to_owned).collect() }
}

/// Whether `word` could have been produced by [`normalize_text`].
pub fn is_normalized_token(word: &str) -> bool {
    !word.is_empty() && word.bytes().all(|b| b.is_ascii_lowercase())
}

/// Token frequencies. Partial counts from disjoint shards merge with [`WordCounts::merge`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WordCounts {
    counts: HashMap<String, u64>,
}

impl WordCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_doc(&mut self, doc: &TokenizedDoc) {
        for t in &doc.tokens {
            *self.counts.entry(t.clone()).or_insert(0) += 1;
        }
    }

    pub fn merge(&mut self, other: WordCounts) {
        for (w, c) in other.counts {
            *self.counts.entry(w).or_insert(0) += c;
        }
    }

    pub fn get(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// All (word, count) pairs in dictionary order.
    pub fn ranked(&self) -> Vec<(String, u64)> {
        let mut all: Vec<(String, u64)> = self.counts.iter().map(|(w, c)| (w.clone(), *c)).collect();
        all.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.as_bytes().cmp(b.0.as_bytes())));
        all
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dictionary {
    words: Vec<String>,
    counts: Vec<u64>,
    capacity: usize,
    stop_count: usize,
    lookup: HashMap<String, u32>,
}

impl Dictionary {
    /// Builds from already-ranked entries. Entries must be in dictionary order.
    fn from_ranked(entries: Vec<(String, u64)>, capacity: usize, stop_count: usize) -> Self {
        let lookup = entries.iter().enumerate().map(|(i, (w, _))| (w.clone(), i as u32)).collect();
        let (words, counts) = entries.into_iter().unzip();
        Dictionary { words, counts, capacity, stop_count, lookup }
    }

    pub fn from_counts(counts: &WordCounts, capacity: usize, stop_count: usize) -> Result<Self, TextError> {
        if capacity == 0 {
            return Err(TextError::ZeroVocabulary);
        }
        let kept: Vec<(String, u64)> = counts.ranked().into_iter().skip(stop_count).take(capacity).collect();
        if kept.is_empty() {
            return Err(TextError::EmptyVocabulary);
        }
        Ok(Self::from_ranked(kept, capacity, stop_count))
    }

    /// Number of words actually present (at most the requested capacity).
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn stop_count(&self) -> usize {
        self.stop_count
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.lookup.get(word).map(|&i| i as usize)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{DICT_FORMAT} K={} stop={}", self.capacity, self.stop_count)?;
        for (w, c) in self.words.iter().zip(&self.counts) {
            writeln!(out, "{w}\t{c}")?;
        }
        out.flush()
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, TextError> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| TextError::MalformedDictionary("missing header".into()))??;
        let rest = header
            .strip_prefix(DICT_FORMAT)
            .ok_or_else(|| TextError::MalformedDictionary(format!("bad header {header:?}")))?;
        let mut capacity = None;
        let mut stop = None;
        for field in rest.split_whitespace() {
            if let Some(v) = field.strip_prefix("K=") {
                capacity = v.parse::<usize>().ok();
            } else if let Some(v) = field.strip_prefix("stop=") {
                stop = v.parse::<usize>().ok();
            }
        }
        let (Some(capacity), Some(stop_count)) = (capacity, stop) else {
            return Err(TextError::MalformedDictionary(format!("bad header {header:?}")));
        };
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (w, c) = line
                .split_once('\t')
                .ok_or_else(|| TextError::MalformedDictionary(format!("line {}: expected word<TAB>count", n + 2)))?;
            let c: u64 =
                c.parse().map_err(|_| TextError::MalformedDictionary(format!("line {}: bad count {c:?}", n + 2)))?;
            if !is_normalized_token(w) {
                return Err(TextError::MalformedDictionary(format!("line {}: {w:?} is not a normalized token", n + 2)));
            }
            entries.push((w.to_owned(), c));
        }
        if entries.is_empty() {
            return Err(TextError::EmptyVocabulary);
        }
        if entries.len() > capacity {
            return Err(TextError::MalformedDictionary(format!("{} entries exceed K={capacity}", entries.len())));
        }
        let ordered = entries.windows(2).all(|p| p[0].1 > p[1].1 || (p[0].1 == p[1].1 && p[0].0 < p[1].0));
        if !ordered {
            return Err(TextError::MalformedDictionary("entries out of order".into()));
        }
        Ok(Self::from_ranked(entries, capacity, stop_count))
    }
}

pub fn build_dictionary<I>(docs: I, capacity: usize, stop_count: usize) -> Result<Dictionary, TextError>
where
    I: IntoIterator<Item = TokenizedDoc>,
{
    let mut counts = WordCounts::new();
    for doc in docs {
        counts.add_doc(&doc);
    }
    Dictionary::from_counts(&counts, capacity, stop_count)
}

/// Sorted, duplicate-free dictionary indices of the tokens in `doc`.
pub fn encode_targets(doc: &TokenizedDoc, dict: &Dictionary) -> Vec<u32> {
    let mut labels: Vec<u32> = doc.tokens.iter().filter_map(|t| dict.index_of(t).map(|i| i as u32)).collect();
    labels.sort_unstable();
    labels.dedup();
    labels
}
