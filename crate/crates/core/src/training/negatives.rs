use ndarray::Array1;
use rand::seq::IndexedRandom;
use rand::Rng;
use tracing::warn;

/// A question in the mining pool with its provenance and embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolQuestion {
    pub doc_id: String,
    pub para_idx: usize,
    pub embedding: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeKind {
    /// From a different article.
    Foreign,
    /// Same article, different paragraph.
    SameArticle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NegativePick {
    pub kind: NegativeKind,
    /// Index into the pool.
    pub pool_index: usize,
}

/// Picks up to two hard negatives for paragraph `(doc_id, para_idx)`.
///
/// A positive question of the paragraph is drawn with `rng`; each negative
/// is the pool question of the required provenance with the highest inner
/// product with it (lowest pool index on ties). A provenance class with no
/// candidates is skipped.
pub fn mine_negatives<R: Rng>(
    doc_id: &str,
    para_idx: usize,
    pool: &[PoolQuestion],
    rng: &mut R,
) -> Vec<NegativePick> {
    let positives: Vec<usize> = (0..pool.len())
        .filter(|&n| pool[n].doc_id == doc_id && pool[n].para_idx == para_idx)
        .collect();
    let Some(&anchor) = positives.choose(rng) else {
        warn!(doc_id, para_idx, "no positive question to mine negatives from");
        return Vec::new();
    };
    let anchor = &pool[anchor].embedding;

    let best = |keep: &dyn Fn(&PoolQuestion) -> bool| {
        pool.iter()
            .enumerate()
            .filter(|(_, q)| keep(q))
            .map(|(n, q)| (n, q.embedding.dot(anchor)))
            .fold(None, |best: Option<(usize, f64)>, (n, s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((n, s)),
            })
            .map(|(n, _)| n)
    };

    let mut picks = Vec::with_capacity(2);
    match best(&|q| q.doc_id != doc_id) {
        Some(pool_index) => picks.push(NegativePick {
            kind: NegativeKind::Foreign,
            pool_index,
        }),
        None => warn!(doc_id, para_idx, "no question from another article"),
    }
    match best(&|q| q.doc_id == doc_id && q.para_idx != para_idx) {
        Some(pool_index) => picks.push(NegativePick {
            kind: NegativeKind::SameArticle,
            pool_index,
        }),
        None => warn!(doc_id, para_idx, "no question from another paragraph of the article"),
    }
    picks
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q(doc: &str, para: usize, e: Array1<f64>) -> PoolQuestion {
        PoolQuestion {
            doc_id: doc.into(),
            para_idx: para,
            embedding: e,
        }
    }

    #[test]
    fn lone_foreign_question_is_chosen() {
        let pool = vec![q("a", 0, array![1.0, 0.0]), q("b", 0, array![-5.0, 0.0])];
        let picks = mine_negatives("a", 0, &pool, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(
            picks,
            [NegativePick {
                kind: NegativeKind::Foreign,
                pool_index: 1
            }]
        );
    }

    #[test]
    fn aligned_question_wins() {
        let pos = array![0.6, 0.8];
        let pool = vec![
            q("a", 0, pos.clone()),
            q("b", 0, array![0.8, 0.6]),
            q("c", 1, pos.clone()),
            q("a", 1, array![0.0, 1.0]),
            q("a", 2, pos.clone()),
        ];
        let picks = mine_negatives("a", 0, &pool, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(picks[0].pool_index, 2);
        assert_eq!(picks[1].pool_index, 4);
    }

    #[test]
    fn no_positive_means_no_negatives() {
        let pool = vec![q("b", 0, array![1.0])];
        assert!(mine_negatives("a", 0, &pool, &mut ChaCha8Rng::seed_from_u64(0)).is_empty());
    }
}
