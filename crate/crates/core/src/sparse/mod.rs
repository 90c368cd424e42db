//! Sparse lexical vectors: hashed 2-gram tf-idf, inverted-index retrieval,
//! and a learned ReLU-attention sparse encoder.

mod inverted;
mod learned;
mod tfidf;

pub use inverted::{retrieve_top_docs, InvertedIndex};
pub use learned::{
    learned_sparse_encode, LearnedSparseConfig, LearnedSparseEncoder, SparseMatrix, Transform,
    TransformKind,
};
pub use tfidf::{embed_text_sparse, fit_tfidf, fit_tfidf_with_bins, hash_ngram, TextUnit, TfIdfModel, DEFAULT_BINS};

use serde::{Deserialize, Serialize};

/// Sorted `(bin, weight)` pairs with unique bins and no zero weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vector from arbitrary pairs, summing duplicate bins and
    /// dropping zeros.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|&(bin, _)| bin);
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(pairs.len());
        for (bin, w) in pairs {
            match entries.last_mut() {
                Some(last) if last.0 == bin => last.1 += w,
                _ => entries.push((bin, w)),
            }
        }
        entries.retain(|&(_, w)| w != 0.0);
        SparseVector { entries }
    }

    /// Wraps already sorted, deduplicated entries.
    ///
    /// Panics if bins are not strictly ascending.
    pub fn from_sorted(entries: Vec<(u32, f64)>) -> Self {
        assert!(
            entries.windows(2).all(|w| w[0].0 < w[1].0),
            "sparse entries must be strictly ascending by bin"
        );
        SparseVector { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn weight(&self, bin: u32) -> f64 {
        self.entries
            .binary_search_by_key(&bin, |&(b, _)| b)
            .map_or(0.0, |i| self.entries[i].1)
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt()
    }

    /// Scales to unit Euclidean norm; a zero vector becomes empty.
    pub fn normalized(mut self) -> Self {
        let norm = self.norm();
        if norm == 0.0 || !norm.is_finite() {
            self.entries.clear();
        } else {
            for e in &mut self.entries {
                e.1 /= norm;
            }
        }
        self
    }

    /// Bin-wise sum.
    pub fn add(&self, other: &SparseVector) -> SparseVector {
        let (a, b) = (&self.entries, &other.entries);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut x, mut y) = (0, 0);
        while x < a.len() || y < b.len() {
            let next = match (a.get(x), b.get(y)) {
                (Some(&(ba, wa)), Some(&(bb, wb))) if ba == bb => {
                    x += 1;
                    y += 1;
                    (ba, wa + wb)
                }
                (Some(&(ba, wa)), Some(&(bb, _))) if ba < bb => {
                    x += 1;
                    (ba, wa)
                }
                (Some(_), Some(&e)) | (None, Some(&e)) => {
                    y += 1;
                    e
                }
                (Some(&e), None) => {
                    x += 1;
                    e
                }
                (None, None) => unreachable!(),
            };
            if next.1 != 0.0 {
                out.push(next);
            }
        }
        SparseVector { entries: out }
    }

    /// Places `other` after this vector's bin space, shifted by `offset`.
    pub fn concat(&self, other: &SparseVector, offset: u32) -> SparseVector {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().map(|&(b, w)| (b + offset, w)));
        SparseVector::from_sorted(entries)
    }
}

/// Inner product over intersecting bins, summed in ascending bin order.
pub fn sparse_score(q: &SparseVector, v: &SparseVector) -> f64 {
    let (a, b) = (q.entries(), v.entries());
    let (mut x, mut y) = (0, 0);
    let mut sum = 0.0;
    while x < a.len() && y < b.len() {
        match a[x].0.cmp(&b[y].0) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                sum += a[x].1 * b[y].1;
                x += 1;
                y += 1;
            }
        }
    }
    sum
}

/// Adds a paragraph vector to its document vector and renormalizes.
pub fn combine_doc_para(doc_vec: &SparseVector, para_vec: &SparseVector) -> SparseVector {
    doc_vec.add(para_vec).normalized()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(pairs: Vec<(u32, f64)>) -> SparseVector {
        SparseVector::from_pairs(pairs).normalized()
    }

    #[test]
    fn combine_with_empty_paragraph() {
        let doc = unit(vec![(3, 1.0), (9, 2.0)]);
        let out = combine_doc_para(&doc, &SparseVector::new());
        for (a, b) in out.entries().iter().zip(doc.entries()) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn combine_with_itself() {
        let doc = unit(vec![(3, 1.0), (9, 2.0), (12, 0.5)]);
        let out = combine_doc_para(&doc, &doc);
        assert_eq!(out.len(), doc.len());
        for (a, b) in out.entries().iter().zip(doc.entries()) {
            assert!((a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn combine_disjoint() {
        let out = combine_doc_para(
            &SparseVector::from_pairs(vec![(1, 1.0)]),
            &SparseVector::from_pairs(vec![(2, 1.0)]),
        );
        let h = 1.0 / 2f64.sqrt();
        assert_eq!(out.entries()[0].0, 1);
        assert_eq!(out.entries()[1].0, 2);
        assert!((out.entries()[0].1 - h).abs() < 1e-12);
        assert!((out.entries()[1].1 - h).abs() < 1e-12);
    }

    #[test]
    fn self_and_disjoint_scores() {
        let v = unit(vec![(1, 0.3), (7, 2.0), (100, 1.0)]);
        assert!((sparse_score(&v, &v) - 1.0).abs() < 1e-6);
        let w = unit(vec![(2, 1.0), (8, 1.0)]);
        assert_eq!(sparse_score(&v, &w), 0.0);
    }

    #[test]
    fn zero_vector_normalizes_to_empty() {
        assert!(SparseVector::from_pairs(vec![(1, 0.0)]).normalized().is_empty());
    }

    fn arb_sparse() -> impl Strategy<Value = SparseVector> {
        proptest::collection::vec((0u32..64, -2.0f64..2.0), 0..20).prop_map(SparseVector::from_pairs)
    }

    fn densify(v: &SparseVector) -> Vec<f64> {
        let mut out = vec![0.0; 64];
        for &(b, w) in v.entries() {
            out[b as usize] = w;
        }
        out
    }

    proptest! {
        #[test]
        fn score_matches_dense_dot(a in arb_sparse(), b in arb_sparse()) {
            let dense: f64 = densify(&a).iter().zip(densify(&b)).map(|(x, y)| x * y).sum();
            prop_assert!((sparse_score(&a, &b) - dense).abs() < 1e-9);
        }

        #[test]
        fn add_matches_dense_sum(a in arb_sparse(), b in arb_sparse()) {
            let sum = densify(&a.add(&b));
            let expected: Vec<f64> = densify(&a).iter().zip(densify(&b)).map(|(x, y)| x + y).collect();
            for (x, y) in sum.iter().zip(&expected) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn normalized_has_unit_norm(a in arb_sparse()) {
            let n = a.normalized();
            prop_assert!(n.is_empty() || (n.norm() - 1.0).abs() < 1e-6);
        }
    }
}
