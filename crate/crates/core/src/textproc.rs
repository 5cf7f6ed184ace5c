//! Text primitives shared by the labeler and the metrics: tokenization,
//! sentence splitting, a light suffix stemmer, n-gram counting and LCS.
//!
//! Every metric in [`crate::nlg_metrics`] goes through [`tokenize`], so scores
//! are only comparable between runs that use this same tokenizer.

use std::collections::BTreeMap;
use std::fmt;

/// A lowercase token sequence. Tokens are never empty and contain no whitespace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Builds a sequence from arbitrary strings, dropping empty ones and
    /// lowercasing the rest. Strings with interior whitespace are split.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        TokenSeq(
            tokens
                .into_iter()
                .flat_map(|t| {
                    t.as_ref()
                        .split_whitespace()
                        .map(str::to_lowercase)
                        .collect::<Vec<_>>()
                })
                .filter(|t| !t.is_empty())
                .collect(),
        )
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    /// Space-joined form; `tokenize(seq.joined())` gives back `seq`.
    pub fn joined(&self) -> String {
        self.0.join(" ")
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.joined())
    }
}

impl<'a> IntoIterator for &'a TokenSeq {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Lowercases and splits on anything that is not alphanumeric. Punctuation is
/// dropped. A `.` or `,` sitting between two digits stays inside the token so
/// numerals such as `2.5` or `1,200` survive as one token.
pub fn tokenize(text: &str) -> TokenSeq {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &ch) in chars.iter().enumerate() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
            continue;
        }
        let numeric_joiner = (ch == '.' || ch == ',')
            && current.chars().last().is_some_and(|c| c.is_ascii_digit())
            && chars.get(i + 1).is_some_and(|c| c.is_ascii_digit());
        if numeric_joiner {
            current.push(ch);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    TokenSeq(tokens)
}

/// Lowercase words ending in `.` that never close a sentence.
pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "dr.", "mr.", "mrs.", "ms.", "vs.", "a.m.", "p.m.", "e.g.", "i.e.", "approx.", "etc.", "cf.",
    "fig.", "st.", "no.",
];

/// Splits on `.`, `!` or `?` followed by whitespace or end of text, except
/// after a guarded abbreviation. Pieces are trimmed; empty pieces dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    split_sentences_with(text, DEFAULT_ABBREVIATIONS)
}

pub fn split_sentences_with(text: &str, abbreviations: &[&str]) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((idx, ch)) = iter.next() {
        if !matches!(ch, '.' | '!' | '?') {
            continue;
        }
        let at_boundary = match iter.peek() {
            None => true,
            Some(&(_, next)) => next.is_whitespace(),
        };
        if !at_boundary {
            continue;
        }
        let end = idx + ch.len_utf8();
        if ch == '.' && ends_with_abbreviation(&text[start..end], abbreviations) {
            continue;
        }
        push_trimmed(&mut sentences, &text[start..end]);
        start = end;
    }
    push_trimmed(&mut sentences, &text[start..]);
    sentences
}

fn ends_with_abbreviation(piece: &str, abbreviations: &[&str]) -> bool {
    let last_word = piece
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or("")
        .trim_start_matches(['(', '"', '\''])
        .to_lowercase();
    // A sentence that is nothing but "No." is a sentence, not an abbreviation.
    let only_word = piece.split_whitespace().count() == 1;
    abbreviations
        .iter()
        .any(|abbr| *abbr == last_word && !(only_word && *abbr == "no."))
}

fn push_trimmed(out: &mut Vec<String>, piece: &str) {
    let piece = piece.trim();
    if !piece.is_empty() {
        out.push(piece.to_string());
    }
}

/// Suffixes tried in order; the first that leaves a stem of at least
/// [`MIN_STEM_LEN`] characters is removed.
const SUFFIXES: &[&str] = &["ing", "es", "ed", "s"];
pub const MIN_STEM_LEN: usize = 3;

pub fn stem(token: &str) -> String {
    for suffix in SUFFIXES {
        if let Some(base) = token.strip_suffix(suffix) {
            if base.chars().count() >= MIN_STEM_LEN {
                return base.to_string();
            }
        }
    }
    token.to_string()
}

/// Multiset of contiguous n-grams of a fixed order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramCounts {
    n: usize,
    counts: BTreeMap<Vec<String>, usize>,
}

impl NgramCounts {
    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, gram: &[String]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[String], usize)> {
        self.counts.iter().map(|(k, v)| (k.as_slice(), *v))
    }
}

/// Counts all contiguous n-grams. `n` must be at least 1.
pub fn ngrams(seq: &TokenSeq, n: usize) -> NgramCounts {
    assert!(n >= 1, "n-gram order must be at least 1");
    let mut counts = BTreeMap::new();
    for window in seq.as_slice().windows(n) {
        *counts.entry(window.to_vec()).or_insert(0) += 1;
    }
    NgramCounts { n, counts }
}

/// Longest common subsequence length, two-row dynamic program.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                curr[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}
