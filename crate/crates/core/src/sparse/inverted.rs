use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::SparseVector;

/// Bin → postings of `(doc ordinal, weight)`, doc ordinals ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InvertedIndex {
    n_docs: usize,
    postings: BTreeMap<u32, Vec<(u32, f64)>>,
}

impl InvertedIndex {
    pub fn build(doc_vectors: &[SparseVector]) -> Self {
        let mut postings: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
        for (ord, v) in doc_vectors.iter().enumerate() {
            for &(bin, w) in v.entries() {
                postings.entry(bin).or_default().push((ord as u32, w));
            }
        }
        InvertedIndex {
            n_docs: doc_vectors.len(),
            postings,
        }
    }

    pub fn from_postings(n_docs: usize, postings: BTreeMap<u32, Vec<(u32, f64)>>) -> Self {
        InvertedIndex { n_docs, postings }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn postings(&self) -> &BTreeMap<u32, Vec<(u32, f64)>> {
        &self.postings
    }

    /// Rebuilds every document vector from the postings.
    pub fn document_vectors(&self) -> Vec<SparseVector> {
        let mut entries: Vec<Vec<(u32, f64)>> = vec![Vec::new(); self.n_docs];
        for (&bin, list) in &self.postings {
            for &(doc, w) in list {
                entries[doc as usize].push((bin, w));
            }
        }
        entries.into_iter().map(SparseVector::from_sorted).collect()
    }

    /// Sparse score of `q` against every document, accumulated in ascending
    /// bin order so each score equals [`super::sparse_score`] bit for bit.
    pub fn score_all(&self, q: &SparseVector) -> Vec<f64> {
        let mut scores = vec![0.0; self.n_docs];
        for &(bin, qw) in q.entries() {
            if let Some(list) = self.postings.get(&bin) {
                for &(doc, w) in list {
                    scores[doc as usize] += qw * w;
                }
            }
        }
        scores
    }
}

/// Top-`k` documents by sparse score, ties broken by ascending ordinal.
pub fn retrieve_top_docs(q: &SparseVector, index: &InvertedIndex, k: usize) -> Vec<(usize, f64)> {
    assert!(k >= 1, "k must be at least 1");
    if q.is_empty() {
        return Vec::new();
    }
    let mut ranked: Vec<(usize, f64)> = index.score_all(q).into_iter().enumerate().collect();
    let by_rank = |a: &(usize, f64), b: &(usize, f64)| {
        b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
    };
    if k < ranked.len() {
        ranked.select_nth_unstable_by(k - 1, by_rank);
        ranked.truncate(k);
    }
    ranked.sort_by(by_rank);
    ranked
}
