use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::corpus::TokenId;
use crate::error::{Error, Result};

/// Sorted `(id, weight)` pairs over a vocabulary of size `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatureVector {
    dim: usize,
    entries: Vec<(TokenId, f64)>,
}

impl SparseFeatureVector {
    /// Rejects unsorted or repeated ids, ids outside `dim`, explicit zeros and
    /// non-finite weights.
    pub fn new(dim: usize, entries: Vec<(TokenId, f64)>) -> Result<Self> {
        if let Some(w) = entries.windows(2).find(|w| w[0].0 >= w[1].0) {
            return Err(Error::validation(format!(
                "sparse ids not strictly increasing at {}",
                w[1].0
            )));
        }
        if let Some(&(id, _)) = entries.iter().find(|(id, _)| *id as usize >= dim) {
            return Err(Error::validation(format!(
                "sparse id {id} outside dimension {dim}"
            )));
        }
        if let Some(&(id, w)) = entries.iter().find(|(_, w)| *w == 0.0 || !w.is_finite()) {
            return Err(Error::validation(format!("sparse weight {w} at id {id}")));
        }
        Ok(SparseFeatureVector { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(TokenId, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn weight(&self, id: TokenId) -> f64 {
        self.entries
            .binary_search_by_key(&id, |&(i, _)| i)
            .map_or(0.0, |k| self.entries[k].1)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(id, w)| w * dense[id as usize])
            .sum()
    }
}

/// Term counts of one document, keyed by id.
pub fn term_counts(doc: impl IntoIterator<Item = TokenId>) -> BTreeMap<TokenId, u32> {
    let mut counts = BTreeMap::new();
    for id in doc {
        *counts.entry(id).or_insert(0) += 1;
    }
    counts
}

/// `ln(N / df)` for every id seen in the training documents.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    dim: usize,
    document_count: usize,
    idf: BTreeMap<TokenId, f64>,
}

impl IdfTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn document_count(&self) -> usize {
        self.document_count
    }

    pub fn idf(&self, id: TokenId) -> Option<f64> {
        self.idf.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.idf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idf.is_empty()
    }
}

pub fn build_idf<D>(documents: &[D], dim: usize) -> Result<IdfTable>
where
    D: AsRef<[TokenId]>,
{
    if documents.is_empty() {
        return Err(Error::validation("cannot build idf from an empty corpus"));
    }
    let mut df: BTreeMap<TokenId, usize> = BTreeMap::new();
    for doc in documents {
        for &id in term_counts(doc.as_ref().iter().copied()).keys() {
            if id as usize >= dim {
                return Err(Error::validation(format!(
                    "token id {id} outside dimension {dim}"
                )));
            }
            *df.entry(id).or_insert(0) += 1;
        }
    }
    let n = documents.len() as f64;
    Ok(IdfTable {
        dim,
        document_count: documents.len(),
        idf: df
            .into_iter()
            .map(|(id, d)| (id, (n / d as f64).ln()))
            .collect(),
    })
}

/// `TC · idf`; ids without an idf entry, or with idf 0, are left out.
pub fn tfidf_vector(doc: &[TokenId], idf: &IdfTable) -> SparseFeatureVector {
    let entries = term_counts(doc.iter().copied())
        .into_iter()
        .filter_map(|(id, tc)| idf.idf(id).map(|w| (id, tc as f64 * w)))
        .filter(|&(_, w)| w != 0.0)
        .collect();
    SparseFeatureVector::new(idf.dim(), entries).expect("tfidf entries are sorted and nonzero")
}

/// `ln(1 + TC)` for every id in the document.
pub fn log1p_vector(doc: &[TokenId], dim: usize) -> Result<SparseFeatureVector> {
    let entries = term_counts(doc.iter().copied())
        .into_iter()
        .map(|(id, tc)| (id, (tc as f64).ln_1p()))
        .collect();
    SparseFeatureVector::new(dim, entries)
}

/// Writes `dim n_docs`, then `label id:weight ...` per document.
pub fn write_feature_matrix<W: Write>(
    mut out: W,
    dim: usize,
    rows: &[(bool, SparseFeatureVector)],
) -> std::io::Result<()> {
    writeln!(out, "{dim} {}", rows.len())?;
    for (label, v) in rows {
        write!(out, "{}", u8::from(*label))?;
        for (id, w) in v.entries() {
            write!(out, " {id}:{w}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_feature_matrix<R: BufRead>(
    reader: R,
    source_name: &str,
) -> Result<(usize, Vec<(bool, SparseFeatureVector)>)> {
    let bad = |line: usize, m: String| Error::parse(source_name, line, m);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| bad(1, "missing header".into()))?
        .map_err(|e| bad(1, e.to_string()))?;
    let (dim, n) = header
        .split_once(' ')
        .and_then(|(d, n)| Some((d.parse::<usize>().ok()?, n.parse::<usize>().ok()?)))
        .ok_or_else(|| bad(1, format!("header {header:?} is not `dim n_docs`")))?;

    let mut rows = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let no = i + 2;
        let line = line.map_err(|e| bad(no, e.to_string()))?;
        let mut fields = line.split(' ');
        let label = match fields.next() {
            Some("0") => false,
            Some("1") => true,
            other => return Err(bad(no, format!("label {other:?}"))),
        };
        let entries = fields
            .map(|f| {
                f.split_once(':')
                    .and_then(|(id, w)| Some((id.parse().ok()?, w.parse().ok()?)))
                    .ok_or_else(|| bad(no, format!("entry {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let v = SparseFeatureVector::new(dim, entries).map_err(|e| bad(no, e.to_string()))?;
        rows.push((label, v));
    }
    if rows.len() != n {
        return Err(bad(
            1,
            format!("header says {n} documents, found {}", rows.len()),
        ));
    }
    Ok((dim, rows))
}
