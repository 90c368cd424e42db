use ndarray::{Array1, Array2, Axis};

use crate::dense::{QueryDenseVector, TokenMatrix};

/// Start logits, end logits and the full `T x T` span logit matrix of one
/// (question, paragraph) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBundle {
    /// `l1 = H1 a'`
    pub start: Array1<f64>,
    /// `l2 = H2 b'`
    pub end: Array1<f64>,
    /// `C = H3 H4^T`, the per-span coherency scalars.
    pub coherency: Array2<f64>,
    /// `L[i][j] = l1[i] + l2[j] + c' C[i][j]`
    pub full: Array2<f64>,
    /// `c'`
    pub query_coherency: f64,
}

impl LogitBundle {
    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }
}

/// Builds every span logit with three matrix products and a broadcast add.
pub fn compute_logits(h: &TokenMatrix, q: &QueryDenseVector) -> LogitBundle {
    let start = h.starts().dot(&q.a);
    let end = h.ends().dot(&q.b);
    let coherency = h.coh_starts().dot(&h.coh_ends().t());
    let mut full = &coherency * q.c;
    full += &start.view().insert_axis(Axis(1));
    full += &end.view().insert_axis(Axis(0));
    LogitBundle {
        start,
        end,
        coherency,
        full,
        query_coherency: q.c,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{dense_score, phrase_dense, EncoderConfig};

    #[test]
    fn single_token_matches_dense_score() {
        let cfg = EncoderConfig::new(3, 2);
        let h = TokenMatrix::new(cfg, Array2::from_shape_fn((1, cfg.d), |(_, c)| c as f64 * 0.1)).unwrap();
        let q = crate::dense::question_dense(&h).unwrap();
        let bundle = compute_logits(&h, &q);
        let expected = dense_score(&q, &phrase_dense(&h, 0, 0).unwrap()).unwrap();
        assert!((bundle.full[[0, 0]] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_encodings_give_zero_logits() {
        let cfg = EncoderConfig::new(3, 2);
        let h = TokenMatrix::new(cfg, Array2::zeros((4, cfg.d))).unwrap();
        let q = QueryDenseVector {
            a: Array1::ones(3),
            b: Array1::ones(3),
            c: 2.0,
        };
        assert!(compute_logits(&h, &q).full.iter().all(|&v| v == 0.0));
    }
}
