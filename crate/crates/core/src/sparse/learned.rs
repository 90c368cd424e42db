//! Learned sparse encoder: `S = max(0, Q(D) K(D)^T) X`.
//!
//! `D` holds one dense row per token, `X` the one-hot vocabulary id of each
//! token. Each output row is a nonnegative bag-of-words weighting over the
//! vocabulary. Start and end positions use independent `(Q, K)` pairs and a
//! phrase's vector is the concatenation `[s1_i, s2_j]`. Vectors are left
//! unnormalized.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SparseVector;
use crate::corpus::{CorpusStore, Token};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TransformKind {
    #[default]
    Linear,
    /// Two-layer perceptron with a ReLU hidden layer.
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Linear {
        w: Array2<f64>,
    },
    Mlp {
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    },
}

impl Transform {
    pub fn zeros(kind: TransformKind, d: usize) -> Self {
        match kind {
            TransformKind::Linear => Transform::Linear {
                w: Array2::zeros((d, d)),
            },
            TransformKind::Mlp => Transform::Mlp {
                w1: Array2::zeros((d, d)),
                b1: Array1::zeros(d),
                w2: Array2::zeros((d, d)),
                b2: Array1::zeros(d),
            },
        }
    }

    /// Gaussian init with variance `1/d`.
    pub fn random<R: Rng>(kind: TransformKind, d: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (d as f64).sqrt();
        let mut mat = |r: usize, c: usize| {
            Array2::from_shape_fn((r, c), |_| rng.sample::<f64, _>(StandardNormal) * scale)
        };
        match kind {
            TransformKind::Linear => Transform::Linear { w: mat(d, d) },
            TransformKind::Mlp => Transform::Mlp {
                w1: mat(d, d),
                b1: Array1::zeros(d),
                w2: mat(d, d),
                b2: Array1::zeros(d),
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Transform::Linear { w } => w.nrows(),
            Transform::Mlp { w1, .. } => w1.nrows(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Transform::Linear { w } => w.ncols(),
            Transform::Mlp { w2, .. } => w2.ncols(),
        }
    }

    /// Applies the transform row-wise to a `T x d` matrix.
    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "transform expects width {}, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(match self {
            Transform::Linear { w } => x.dot(w),
            Transform::Mlp { w1, b1, w2, b2 } => {
                let hidden = (x.dot(w1) + b1).mapv(|v| v.max(0.0));
                hidden.dot(w2) + b2
            }
        })
    }
}

/// Row-major sparse matrix with `n_cols` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub n_cols: u32,
    pub rows: Vec<SparseVector>,
}

/// Computes `max(0, Q(D) K(D)^T) X` without materializing `X`.
///
/// `token_ids[t]` is the column of the single 1 in row `t` of `X`.
pub fn learned_sparse_encode(
    dense: &Array2<f64>,
    token_ids: &[u32],
    vocab_size: u32,
    q: &Transform,
    k: &Transform,
) -> Result<SparseMatrix> {
    if token_ids.len() != dense.nrows() {
        return Err(Error::Shape(format!(
            "{} token ids for {} dense rows",
            token_ids.len(),
            dense.nrows()
        )));
    }
    if let Some(&bad) = token_ids.iter().find(|&&id| id >= vocab_size) {
        return Err(Error::Shape(format!("token id {bad} outside vocabulary of {vocab_size}")));
    }
    let qd = q.apply(dense)?;
    let kd = k.apply(dense)?;
    if qd.ncols() != kd.ncols() {
        return Err(Error::Shape(format!(
            "Q output width {} differs from K output width {}",
            qd.ncols(),
            kd.ncols()
        )));
    }
    let attention = qd.dot(&kd.t());
    let rows = attention
        .axis_iter(Axis(0))
        .map(|row| {
            let pairs = row
                .iter()
                .zip(token_ids)
                .filter(|(&a, _)| a > 0.0)
                .map(|(&a, &id)| (id, a))
                .collect();
            SparseVector::from_pairs(pairs)
        })
        .collect();
    Ok(SparseMatrix {
        n_cols: vocab_size,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedSparseConfig {
    /// Vocabulary size including the overflow bin.
    pub vocab_size: u32,
    pub transform: TransformKind,
}

/// Start/end learned sparse encoders over a corpus vocabulary.
#[derive(Debug, Clone)]
pub struct LearnedSparseEncoder {
    pub config: LearnedSparseConfig,
    vocab: BTreeMap<String, u32>,
    pub start: (Transform, Transform),
    pub end: (Transform, Transform),
}

impl LearnedSparseEncoder {
    /// Builds the vocabulary from lowercased corpus tokens; unseen words map
    /// to a final overflow bin.
    pub fn new<R: Rng>(corpus: &CorpusStore, dim: usize, kind: TransformKind, rng: &mut R) -> Self {
        let mut words: Vec<String> = corpus
            .documents()
            .iter()
            .flat_map(|d| &d.paragraphs)
            .flat_map(|p| p.tokens.iter().map(Token::normalized))
            .collect();
        words.sort();
        words.dedup();
        let vocab: BTreeMap<String, u32> = words
            .into_iter()
            .enumerate()
            .map(|(n, w)| (w, n as u32))
            .collect();
        let config = LearnedSparseConfig {
            vocab_size: vocab.len() as u32 + 1,
            transform: kind,
        };
        LearnedSparseEncoder {
            config,
            vocab,
            start: (Transform::random(kind, dim, rng), Transform::random(kind, dim, rng)),
            end: (Transform::random(kind, dim, rng), Transform::random(kind, dim, rng)),
        }
    }

    pub fn overflow_bin(&self) -> u32 {
        self.config.vocab_size - 1
    }

    pub fn token_ids(&self, tokens: &[Token]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.vocab.get(&t.normalized()).copied().unwrap_or(self.overflow_bin()))
            .collect()
    }

    /// Start and end sparse matrices for one paragraph, given its start
    /// (`D1`) and end (`D2`) dense rows.
    pub fn encode(
        &self,
        start_dense: &Array2<f64>,
        end_dense: &Array2<f64>,
        tokens: &[Token],
    ) -> Result<(SparseMatrix, SparseMatrix)> {
        let ids = self.token_ids(tokens);
        let v = self.config.vocab_size;
        let s1 = learned_sparse_encode(start_dense, &ids, v, &self.start.0, &self.start.1)?;
        let s2 = learned_sparse_encode(end_dense, &ids, v, &self.end.0, &self.end.1)?;
        Ok((s1, s2))
    }

    /// `[s1_i, s2_j]`, with end bins offset by the vocabulary size.
    pub fn phrase_vector(&self, s1: &SparseMatrix, s2: &SparseMatrix, i: usize, j: usize) -> SparseVector {
        s1.rows[i].concat(&s2.rows[j], self.config.vocab_size)
    }

    /// Question-side vector: the phrase transforms applied to the question
    /// tokens, read at the marker row (row 0). The marker maps to the
    /// overflow bin.
    pub fn question_vector(
        &self,
        start_dense: &Array2<f64>,
        end_dense: &Array2<f64>,
        question_tokens: &[Token],
    ) -> Result<SparseVector> {
        let marker = Token {
            surface: String::new(),
            char_start: 0,
            char_end: 0,
        };
        let mut tokens = Vec::with_capacity(question_tokens.len() + 1);
        tokens.push(marker);
        tokens.extend_from_slice(question_tokens);
        let (s1, s2) = self.encode(start_dense, end_dense, &tokens)?;
        Ok(self.phrase_vector(&s1, &s2, 0, 0))
    }
}
