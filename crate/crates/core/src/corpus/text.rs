//! Sentence splitting, tokenization and stop-word handling.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

/// Built-in stop-word list, one token per line.
pub const DEFAULT_STOP_WORDS: &str = include_str!("../../data/stop_words.txt");

/// Lowercased words ending in '.' that never terminate a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr.", "ms.", "dr.", "inc.", "corp.", "approx.", "vs.", "u.s.", "q1.", "q2.", "q3.", "q4.",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopWords {
    words: HashSet<String>,
}

impl StopWords {
    pub fn from_lines(text: &str) -> Self {
        let words = text
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        StopWords { words }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_lines(&text))
    }

    pub fn empty() -> Self {
        StopWords {
            words: HashSet::new(),
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Sorted, for hashing and display.
    pub fn sorted(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.words.iter().map(String::as_str).collect();
        v.sort_unstable();
        v
    }
}

impl Default for StopWords {
    fn default() -> Self {
        Self::from_lines(DEFAULT_STOP_WORDS)
    }
}

impl<S: AsRef<str>> FromIterator<S> for StopWords {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        StopWords {
            words: iter
                .into_iter()
                .map(|s| s.as_ref().to_lowercase())
                .collect(),
        }
    }
}

fn is_abbreviation(text: &str, period_at: usize) -> bool {
    let head = &text[..=period_at];
    let word_start = head
        .rfind(char::is_whitespace)
        .map(|i| i + head[i..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(0);
    let word = head[word_start..]
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

/// Rule-based sentence splitter.
///
/// A boundary sits after '.', '!' or '?' when the next character is whitespace and
/// the first non-whitespace character after it is an uppercase letter or a digit.
/// Periods closing a known abbreviation never split. Sentences are trimmed and empty
/// ones are never returned.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();

    while let Some((i, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        match chars.peek() {
            Some(&(_, next)) if next.is_whitespace() => {}
            _ => continue,
        }
        let rest = &text[i + c.len_utf8()..];
        let follows = rest.trim_start().chars().next();
        let opens_sentence = follows.is_some_and(|f| f.is_uppercase() || f.is_ascii_digit());
        if !opens_sentence || (c == '.' && is_abbreviation(text, i)) {
            continue;
        }
        let end = i + c.len_utf8();
        let sentence = text[start..end].trim();
        if !sentence.is_empty() {
            sentences.push(sentence.to_string());
        }
        start = end;
    }

    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

fn is_kept_boundary_symbol(c: char) -> bool {
    c.is_alphanumeric() || c == '$' || c == '%'
}

/// Lowercases, strips punctuation from token boundaries (keeping '$' and '%'),
/// and drops stop words and tokens without any alphanumeric character.
pub fn tokenize(sentence: &str, stop_words: &StopWords) -> Vec<String> {
    sentence
        .split_whitespace()
        .filter_map(|raw| {
            let token = raw
                .trim_matches(|c: char| !is_kept_boundary_symbol(c))
                .to_lowercase();
            if !token.chars().any(char::is_alphanumeric) || stop_words.contains(&token) {
                None
            } else {
                Some(token)
            }
        })
        .collect()
}
