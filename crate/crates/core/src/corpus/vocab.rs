use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::text::StopWords;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_FREQUENCY: u64 = 4;

pub type TokenId = u32;

/// Frequency-thresholded token index built from training documents.
///
/// Ids are dense and assigned by descending corpus frequency, ties broken
/// lexicographically, so the same corpus always yields the same map.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    frequencies: Vec<u64>,
    index: HashMap<String, TokenId>,
    min_frequency: u64,
    stop_words: StopWords,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn frequency(&self, token: &str) -> Option<u64> {
        self.id(token).map(|id| self.frequencies[id as usize])
    }

    pub fn min_frequency(&self) -> u64 {
        self.min_frequency
    }

    pub fn stop_words(&self) -> &StopWords {
        &self.stop_words
    }

    /// `(token, frequency)` in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.tokens
            .iter()
            .map(String::as_str)
            .zip(self.frequencies.iter().copied())
    }

    /// Content hash over the id assignment, frequencies and threshold.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("min_frequency={}\n", self.min_frequency));
        for (id, (token, freq)) in self.iter().enumerate() {
            hasher.update(format!("{id}\t{token}\t{freq}\n"));
        }
        hex::encode(hasher.finalize())
    }
}

/// Counts tokens over `documents` and keeps those seen at least `min_frequency` times.
/// Stop words are dropped even if the documents still contain them.
pub fn build_vocabulary<D, T>(
    documents: &[D],
    min_frequency: u64,
    stop_words: &StopWords,
) -> Result<Vocabulary>
where
    D: AsRef<[T]>,
    T: AsRef<str>,
{
    if documents.is_empty() {
        return Err(Error::validation(
            "cannot build a vocabulary from an empty corpus",
        ));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for doc in documents {
        for token in doc.as_ref() {
            let token = token.as_ref();
            if !stop_words.contains(token) {
                *counts.entry(token).or_default() += 1;
            }
        }
    }

    let mut kept: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(_, n)| n >= min_frequency)
        .collect();
    kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let tokens: Vec<String> = kept.iter().map(|(t, _)| t.to_string()).collect();
    let frequencies = kept.iter().map(|&(_, n)| n).collect();
    let index = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as TokenId))
        .collect();

    Ok(Vocabulary {
        tokens,
        frequencies,
        index,
        min_frequency,
        stop_words: stop_words.clone(),
    })
}
