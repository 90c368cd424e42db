//! Dense phrase and question vectors.
//!
//! Every token encoding `h` of width `d` is split positionally into four
//! blocks: `h1` and `h2` (width `d_b`) followed by `h3` and `h4` (width
//! `d_c`). A span `(i, j)` is represented by its start vector `h1[i]`, its
//! end vector `h2[j]` and a coherency scalar `h3[i] . h4[j]`; a question by
//! the same three quantities read from its marker row. Scoring is the inner
//! product of the flattened `2 d_b + 1` vectors.

mod precomputed;
mod toy;

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::corpus::Token;
use crate::error::{Error, Result};

pub use precomputed::{read_precomputed, write_precomputed, PrecomputedEncoder, EMBEDDING_MAGIC};
pub use toy::{toy_encode, ToyEncoder, ToyEncoderParams, QUESTION_MARKER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d: usize,
    pub d_b: usize,
    pub d_c: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d: 1024,
            d_b: 480,
            d_c: 32,
        }
    }
}

impl EncoderConfig {
    pub fn new(d_b: usize, d_c: usize) -> Self {
        EncoderConfig {
            d: 2 * d_b + 2 * d_c,
            d_b,
            d_c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_b == 0 || self.d_c == 0 {
            return Err(Error::Config("d_b and d_c must be positive".into()));
        }
        if 2 * self.d_b + 2 * self.d_c != self.d {
            return Err(Error::Config(format!(
                "2*d_b + 2*d_c = {} but d = {}",
                2 * self.d_b + 2 * self.d_c,
                self.d
            )));
        }
        Ok(())
    }

    /// Width of a flattened phrase vector.
    pub fn phrase_dim(&self) -> usize {
        2 * self.d_b + 1
    }
}

/// `T x d` token encodings with positional four-way split views.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    config: EncoderConfig,
    h: Array2<f64>,
}

impl TokenMatrix {
    pub fn new(config: EncoderConfig, h: Array2<f64>) -> Result<Self> {
        config.validate()?;
        if h.ncols() != config.d {
            return Err(Error::Shape(format!(
                "encoder produced width {}, config says {}",
                h.ncols(),
                config.d
            )));
        }
        Ok(TokenMatrix { config, h })
    }

    pub fn config(&self) -> EncoderConfig {
        self.config
    }

    pub fn rows(&self) -> usize {
        self.h.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.h
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.h
    }

    /// `H1`: start block.
    pub fn starts(&self) -> ArrayView2<'_, f64> {
        self.h.slice(s![.., ..self.config.d_b])
    }

    /// `H2`: end block.
    pub fn ends(&self) -> ArrayView2<'_, f64> {
        let b = self.config.d_b;
        self.h.slice(s![.., b..2 * b])
    }

    /// `H3`: start side of the coherency product.
    pub fn coh_starts(&self) -> ArrayView2<'_, f64> {
        let (b, c) = (self.config.d_b, self.config.d_c);
        self.h.slice(s![.., 2 * b..2 * b + c])
    }

    /// `H4`: end side of the coherency product.
    pub fn coh_ends(&self) -> ArrayView2<'_, f64> {
        let (b, c) = (self.config.d_b, self.config.d_c);
        self.h.slice(s![.., 2 * b + c..])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensePhraseVector {
    pub a: Array1<f64>,
    pub b: Array1<f64>,
    pub c: f64,
}

impl DensePhraseVector {
    /// `[a, b, c]`.
    pub fn flatten(&self) -> Array1<f64> {
        let mut out = Array1::zeros(self.a.len() + self.b.len() + 1);
        out.slice_mut(s![..self.a.len()]).assign(&self.a);
        out.slice_mut(s![self.a.len()..self.a.len() + self.b.len()])
            .assign(&self.b);
        out[self.a.len() + self.b.len()] = self.c;
        out
    }
}

/// Question-side counterpart of [`DensePhraseVector`], same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryDenseVector {
    pub a: Array1<f64>,
    pub b: Array1<f64>,
    pub c: f64,
}

impl QueryDenseVector {
    pub fn zeros(d_b: usize) -> Self {
        QueryDenseVector {
            a: Array1::zeros(d_b),
            b: Array1::zeros(d_b),
            c: 0.0,
        }
    }

    pub fn flatten(&self) -> Array1<f64> {
        DensePhraseVector {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c,
        }
        .flatten()
    }
}

pub fn phrase_dense(h: &TokenMatrix, i: usize, j: usize) -> Result<DensePhraseVector> {
    if i > j || j >= h.rows() {
        return Err(Error::OutOfRange(format!(
            "span ({i}, {j}) in a paragraph of {} tokens",
            h.rows()
        )));
    }
    Ok(DensePhraseVector {
        a: h.starts().row(i).to_owned(),
        b: h.ends().row(j).to_owned(),
        c: h.coh_starts().row(i).dot(&h.coh_ends().row(j)),
    })
}

/// Reads the question vector from row 0, the marker position.
pub fn question_dense(h: &TokenMatrix) -> Result<QueryDenseVector> {
    if h.rows() == 0 {
        return Err(Error::EmptyQuestion);
    }
    Ok(QueryDenseVector {
        a: h.starts().row(0).to_owned(),
        b: h.ends().row(0).to_owned(),
        c: h.coh_starts().row(0).dot(&h.coh_ends().row(0)),
    })
}

/// `a'.a + b'.b + c'.c`.
pub fn dense_score(q: &QueryDenseVector, p: &DensePhraseVector) -> Result<f64> {
    if q.a.len() != p.a.len() || q.b.len() != p.b.len() {
        return Err(Error::Shape(format!(
            "query width {} vs phrase width {}",
            q.a.len(),
            p.a.len()
        )));
    }
    Ok(q.a.dot(&p.a) + q.b.dot(&p.b) + q.c * p.c)
}

/// Produces token encodings for paragraphs and questions.
pub trait Encoder: Send + Sync {
    fn config(&self) -> EncoderConfig;

    fn encode_paragraph(&self, doc_id: &str, para_idx: usize, tokens: &[Token]) -> Result<TokenMatrix>;

    /// Encodes `[marker, tokens...]`; row 0 is the marker.
    fn encode_question(&self, tokens: &[Token]) -> Result<TokenMatrix>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(cfg: EncoderConfig, rows: usize, seed: u64) -> TokenMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = Array2::from_shape_fn((rows, cfg.d), |_| rng.random_range(-1.0..1.0));
        TokenMatrix::new(cfg, h).unwrap()
    }

    #[test]
    fn config_invariant() {
        assert!(EncoderConfig::default().validate().is_ok());
        assert_eq!(EncoderConfig::default().phrase_dim(), 961);
        let bad = EncoderConfig { d: 10, d_b: 3, d_c: 1 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn width_mismatch_rejected() {
        let cfg = EncoderConfig::new(3, 1);
        assert!(TokenMatrix::new(cfg, Array2::zeros((2, 7))).is_err());
    }

    #[test]
    fn orthogonal_coherency_is_zero() {
        let cfg = EncoderConfig::new(2, 2);
        let mut h = Array2::zeros((2, cfg.d));
        h[[0, 4]] = 1.0; // h3[0] = e1
        h[[1, 7]] = 1.0; // h4[1] = e2
        let m = TokenMatrix::new(cfg, h).unwrap();
        assert_eq!(phrase_dense(&m, 0, 1).unwrap().c, 0.0);
    }

    #[test]
    fn aligned_unit_coherency_is_one() {
        let cfg = EncoderConfig::new(2, 2);
        let mut h = Array2::zeros((2, cfg.d));
        h[[0, 4]] = 1.0;
        h[[1, 6]] = 1.0;
        let m = TokenMatrix::new(cfg, h).unwrap();
        assert_eq!(phrase_dense(&m, 0, 1).unwrap().c, 1.0);
    }

    #[test]
    fn out_of_range_span() {
        let m = random_matrix(EncoderConfig::new(2, 1), 3, 0);
        assert!(phrase_dense(&m, 2, 1).is_err());
        assert!(phrase_dense(&m, 0, 3).is_err());
    }

    #[test]
    fn phrase_matches_manual_slicing() {
        let cfg = EncoderConfig::new(5, 3);
        let m = random_matrix(cfg, 7, 11);
        let h = m.matrix();
        for i in 0..7 {
            for j in i..7 {
                let p = phrase_dense(&m, i, j).unwrap().flatten();
                let mut expected: Vec<f64> = (0..5).map(|k| h[[i, k]]).collect();
                expected.extend((5..10).map(|k| h[[j, k]]));
                expected.push((0..3).map(|k| h[[i, 10 + k]] * h[[j, 13 + k]]).sum());
                for (x, y) in p.iter().zip(&expected) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn question_from_marker_row() {
        let cfg = EncoderConfig::new(3, 2);
        let zero = TokenMatrix::new(cfg, Array2::zeros((2, cfg.d))).unwrap();
        assert_eq!(question_dense(&zero).unwrap(), QueryDenseVector::zeros(3));

        let mut h = Array2::zeros((2, cfg.d));
        h[[0, 0]] = 1.0;
        let q = question_dense(&TokenMatrix::new(cfg, h).unwrap()).unwrap();
        assert_eq!(q.a.to_vec(), [1.0, 0.0, 0.0]);
        assert_eq!(q.b.to_vec(), [0.0; 3]);
        assert_eq!(q.c, 0.0);

        let empty = TokenMatrix::new(cfg, Array2::zeros((0, cfg.d))).unwrap();
        assert!(matches!(question_dense(&empty), Err(Error::EmptyQuestion)));
    }

    #[test]
    fn question_matches_manual_slicing() {
        let cfg = EncoderConfig::new(4, 2);
        let m = random_matrix(cfg, 3, 5);
        let h = m.matrix();
        let q = question_dense(&m).unwrap().flatten();
        let mut expected: Vec<f64> = (0..8).map(|k| h[[0, k]]).collect();
        expected.push((0..2).map(|k| h[[0, 8 + k]] * h[[0, 10 + k]]).sum());
        for (x, y) in q.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn score_cases() {
        let zero_q = QueryDenseVector::zeros(3);
        let zero_p = DensePhraseVector {
            a: Array1::zeros(3),
            b: Array1::zeros(3),
            c: 0.0,
        };
        assert_eq!(dense_score(&zero_q, &zero_p).unwrap(), 0.0);

        let cfg = EncoderConfig::new(6, 2);
        let m = random_matrix(cfg, 4, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (i, j) in [(0, 0), (0, 3), (1, 2), (3, 3)] {
            let p = phrase_dense(&m, i, j).unwrap();
            let q = QueryDenseVector {
                a: p.a.clone(),
                b: p.b.clone(),
                c: p.c,
            };
            let norm2 = p.flatten().dot(&p.flatten());
            assert!((dense_score(&q, &p).unwrap() - norm2).abs() < 1e-12);

            let q = QueryDenseVector {
                a: Array1::from_shape_fn(6, |_| rng.random_range(-1.0..1.0)),
                b: Array1::from_shape_fn(6, |_| rng.random_range(-1.0..1.0)),
                c: rng.random_range(-1.0..1.0),
            };
            let flat = q.flatten().dot(&p.flatten());
            assert!((dense_score(&q, &p).unwrap() - flat).abs() < 1e-9);
        }
        let short = QueryDenseVector::zeros(2);
        assert!(dense_score(&short, &zero_p).is_err());
    }
}
