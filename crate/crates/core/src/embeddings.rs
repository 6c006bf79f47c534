//! Frozen pretrained word vectors and pooled sentence vectors.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::{TokenId, Vocabulary};
use crate::error::{Error, Result};

/// Word vectors for the vocabulary tokens found in an embedding file.
///
/// Read-only once loaded; nothing in the crate updates word vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: Vec<Option<Box<[f64]>>>,
    found: usize,
    source_hash: String,
}

impl EmbeddingTable {
    /// Reads the `token f_1 ... f_d` text format, keeping only vocabulary rows.
    ///
    /// The dimension comes from the first non-blank line and every later line must
    /// match it, whether or not its token is retained. When a token repeats, the
    /// first occurrence wins.
    pub fn read<R: Read>(reader: R, source_name: &str, vocab: &Vocabulary) -> Result<Self> {
        let mut reader = BufReader::new(reader);
        let mut hasher = Sha256::new();
        let mut vectors: Vec<Option<Box<[f64]>>> = vec![None; vocab.len()];
        let mut dim = None;
        let mut found = 0;
        let mut line = String::new();
        let mut lineno = 0;

        loop {
            line.clear();
            let n = reader
                .read_line(&mut line)
                .map_err(|e| Error::parse(source_name, lineno + 1, e.to_string()))?;
            if n == 0 {
                break;
            }
            lineno += 1;
            hasher.update(line.as_bytes());

            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values: Vec<&str> = fields.collect();
            let d = *dim.get_or_insert(values.len());
            if d == 0 {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    "embedding line has no values",
                ));
            }
            if values.len() != d {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("expected {d} values, found {}", values.len()),
                ));
            }
            let Some(id) = vocab.id(token) else { continue };
            let slot = &mut vectors[id as usize];
            if slot.is_some() {
                continue;
            }
            let parsed = values
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| {
                            Error::parse(source_name, lineno, format!("bad value {v:?}"))
                        })
                })
                .collect::<Result<Vec<f64>>>()?;
            *slot = Some(parsed.into_boxed_slice());
            found += 1;
        }

        let dim =
            dim.ok_or_else(|| Error::validation(format!("{source_name}: no embedding rows")))?;
        if found == 0 {
            return Err(Error::validation(format!(
                "{source_name}: no vocabulary token has a vector"
            )));
        }
        Ok(EmbeddingTable {
            dim,
            vectors,
            found,
            source_hash: hex::encode(hasher.finalize()),
        })
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file, &path.display().to_string(), vocab)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sentence_dim(&self) -> usize {
        2 * self.dim
    }

    pub fn vector(&self, id: TokenId) -> Option<&[f64]> {
        self.vectors.get(id as usize).and_then(|v| v.as_deref())
    }

    /// Fraction of vocabulary tokens that have a vector.
    pub fn coverage(&self) -> f64 {
        if self.vectors.is_empty() {
            0.0
        } else {
            self.found as f64 / self.vectors.len() as f64
        }
    }

    /// SHA-256 of the embedding file bytes.
    pub fn source_hash(&self) -> &str {
        &self.source_hash
    }
}

/// `[mean ; max]` over the token vectors of one sentence, length `2d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceVector(pub Vec<f64>);

impl SentenceVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Average and max pool the available token vectors. Tokens without a vector are
/// skipped; `None` when no token has one.
pub fn embed_sentence(tokens: &[TokenId], table: &EmbeddingTable) -> Option<SentenceVector> {
    let d = table.dim();
    let mut sum = vec![0.0; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    let mut k = 0usize;
    for v in tokens.iter().filter_map(|&id| table.vector(id)) {
        for i in 0..d {
            sum[i] += v[i];
            max[i] = max[i].max(v[i]);
        }
        k += 1;
    }
    if k == 0 {
        return None;
    }
    let mut values: Vec<f64> = sum.into_iter().map(|s| s / k as f64).collect();
    // Rounding in the mean can overshoot a coordinate where all vectors agree.
    for (mean, &m) in values.iter_mut().zip(&max) {
        if *mean > m {
            *mean = m;
        }
    }
    values.extend(max);
    Some(SentenceVector(values))
}
