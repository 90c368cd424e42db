//! A small deterministic contextual encoder.
//!
//! Each token is described by a hashed bag of features of its ±2 neighbours,
//! tagged with their relative position. The bag is projected through a fixed
//! Gaussian matrix derived from the seed, then through an optional trainable
//! `d x d` linear layer. The question marker row instead sees every question
//! word, so the question vector depends on the whole question.

use std::hash::Hasher;
use std::io::{Read, Write};

use fnv::FnvHasher;
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Encoder, EncoderConfig, TokenMatrix};
use crate::corpus::Token;
use crate::error::{Error, Result};

/// Surface used for the prepended question position.
pub const QUESTION_MARKER: &str = "[Q]";

const WINDOW: isize = 2;
const PARAMS_MAGIC: &[u8; 8] = b"PHXTOY01";

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoderParams {
    pub config: EncoderConfig,
    pub seed: u64,
    pub n_features: usize,
    /// Trainable layer applied after the fixed projection (`H = Z W`).
    pub layer: Option<Array2<f64>>,
}

impl ToyEncoderParams {
    pub fn new(config: EncoderConfig, seed: u64) -> Self {
        ToyEncoderParams {
            config,
            seed,
            n_features: 4096,
            layer: None,
        }
    }

    /// Adds an identity-initialised trainable layer.
    pub fn with_layer(mut self) -> Self {
        self.layer = Some(Array2::eye(self.config.d));
        self
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(PARAMS_MAGIC)?;
        for v in [self.config.d, self.config.d_b, self.config.d_c, self.n_features] {
            out.write_all(&(v as u64).to_le_bytes())?;
        }
        out.write_all(&self.seed.to_le_bytes())?;
        match &self.layer {
            None => out.write_all(&[0])?,
            Some(w) => {
                out.write_all(&[1])?;
                for v in w.iter() {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let bad = |m: &str| Error::format("encoder", m);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != PARAMS_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut word = [0u8; 8];
        let mut next = |input: &mut R| -> Result<u64> {
            input.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
            Ok(u64::from_le_bytes(word))
        };
        let d = next(&mut input)? as usize;
        let d_b = next(&mut input)? as usize;
        let d_c = next(&mut input)? as usize;
        let n_features = next(&mut input)? as usize;
        let seed = next(&mut input)?;
        let config = EncoderConfig { d, d_b, d_c };
        config.validate()?;
        let mut flag = [0u8; 1];
        input.read_exact(&mut flag).map_err(|_| bad("truncated header"))?;
        let layer = if flag[0] == 1 {
            let mut buf = vec![0u8; d * d * 8];
            input.read_exact(&mut buf).map_err(|_| bad("truncated layer"))?;
            let vals = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Some(Array2::from_shape_vec((d, d), vals).map_err(|e| bad(&e.to_string()))?)
        } else {
            None
        };
        Ok(ToyEncoderParams {
            config,
            seed,
            n_features,
            layer,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ToyEncoder {
    params: ToyEncoderParams,
    projection: Array2<f64>,
}

fn feature_bin(key: &str, n_features: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(key.as_bytes());
    (h.finish() % n_features as u64) as usize
}

impl ToyEncoder {
    pub fn new(params: ToyEncoderParams) -> Result<Self> {
        params.config.validate()?;
        if let Some(w) = &params.layer {
            if w.dim() != (params.config.d, params.config.d) {
                return Err(Error::Shape(format!("trainable layer is {:?}", w.dim())));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        // Coordinates of a projected row get variance 1/sqrt(d_b), so
        // start/end inner products have unit scale.
        let scale = (params.config.d_b as f64).powf(-0.25);
        let projection = Array2::from_shape_fn((params.n_features, params.config.d), |_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            x * scale
        });
        Ok(ToyEncoder { params, projection })
    }

    pub fn params(&self) -> &ToyEncoderParams {
        &self.params
    }

    pub fn set_layer(&mut self, layer: Array2<f64>) {
        self.params.layer = Some(layer);
    }

    fn project(&self, bags: &[Vec<usize>]) -> Array2<f64> {
        let mut z = Array2::zeros((bags.len(), self.params.config.d));
        for (mut row, bag) in z.axis_iter_mut(Axis(0)).zip(bags) {
            if bag.is_empty() {
                continue;
            }
            for &f in bag {
                row += &self.projection.row(f);
            }
            row /= (bag.len() as f64).sqrt();
        }
        z
    }

    fn window_bags(&self, words: &[String]) -> Vec<Vec<usize>> {
        let n = words.len() as isize;
        (0..n)
            .map(|i| {
                (-WINDOW..=WINDOW)
                    .filter(|o| (0..n).contains(&(i + o)))
                    .map(|o| feature_bin(&format!("{o}:{}", words[(i + o) as usize]), self.params.n_features))
                    .collect()
            })
            .collect()
    }

    /// Fixed-projection encodings `Z` of a paragraph, before the layer.
    pub fn base_paragraph(&self, tokens: &[Token]) -> Array2<f64> {
        let words: Vec<String> = tokens.iter().map(Token::normalized).collect();
        self.project(&self.window_bags(&words))
    }

    /// Fixed-projection encodings of `[marker, tokens...]`.
    pub fn base_question(&self, tokens: &[Token]) -> Array2<f64> {
        let mut words = vec![QUESTION_MARKER.to_string()];
        words.extend(tokens.iter().map(Token::normalized));
        let mut bags = self.window_bags(&words);
        let n = self.params.n_features;
        bags[0] = std::iter::once(feature_bin("marker", n))
            .chain(words[1..].iter().map(|w| feature_bin(&format!("q:{w}"), n)))
            .collect();
        self.project(&bags)
    }

    /// Applies the trainable layer, if any.
    pub fn apply_layer(&self, z: Array2<f64>) -> Array2<f64> {
        match &self.params.layer {
            Some(w) => z.dot(w),
            None => z,
        }
    }

    fn wrap(&self, h: Array2<f64>) -> Result<TokenMatrix> {
        TokenMatrix::new(self.params.config, h)
    }
}

impl Encoder for ToyEncoder {
    fn config(&self) -> EncoderConfig {
        self.params.config
    }

    fn encode_paragraph(&self, _doc_id: &str, _para_idx: usize, tokens: &[Token]) -> Result<TokenMatrix> {
        self.wrap(self.apply_layer(self.base_paragraph(tokens)))
    }

    fn encode_question(&self, tokens: &[Token]) -> Result<TokenMatrix> {
        self.wrap(self.apply_layer(self.base_question(tokens)))
    }
}

/// Plain-function form of [`ToyEncoder::encode_paragraph`].
pub fn toy_encode(tokens: &[Token], params: &ToyEncoderParams) -> Result<TokenMatrix> {
    ToyEncoder::new(params.clone())?.encode_paragraph("", 0, tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    fn encoder() -> ToyEncoder {
        ToyEncoder::new(ToyEncoderParams::new(EncoderConfig::new(6, 2), 7)).unwrap()
    }

    #[test]
    fn deterministic() {
        let toks = tokenize("the quick brown fox");
        let a = toy_encode(&toks, &ToyEncoderParams::new(EncoderConfig::new(6, 2), 7)).unwrap();
        let b = toy_encode(&toks, &ToyEncoderParams::new(EncoderConfig::new(6, 2), 7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn context_sensitive() {
        let e = encoder();
        let x = e.encode_paragraph("", 0, &tokenize("a b c")).unwrap();
        let y = e.encode_paragraph("", 0, &tokenize("a b d")).unwrap();
        assert_ne!(x.matrix().row(1), y.matrix().row(1));
    }

    #[test]
    fn single_token() {
        let h = encoder().encode_paragraph("", 0, &tokenize("solo")).unwrap();
        assert_eq!(h.matrix().dim(), (1, 16));
        assert!(h.matrix().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn question_has_marker_row() {
        let e = encoder();
        let q = e.encode_question(&tokenize("who are you")).unwrap();
        assert_eq!(q.rows(), 4);
        let r = e.encode_question(&tokenize("who were you")).unwrap();
        assert_ne!(q.matrix().row(0), r.matrix().row(0));
        let empty = e.encode_question(&[]).unwrap();
        assert_eq!(empty.rows(), 1);
    }

    #[test]
    fn identity_layer_is_noop() {
        let plain = encoder();
        let layered = ToyEncoder::new(plain.params().clone().with_layer()).unwrap();
        let toks = tokenize("some words here");
        assert_eq!(
            plain.encode_paragraph("", 0, &toks).unwrap(),
            layered.encode_paragraph("", 0, &toks).unwrap()
        );
    }

    #[test]
    fn params_round_trip() {
        let mut p = ToyEncoderParams::new(EncoderConfig::new(3, 1), 99).with_layer();
        p.layer.as_mut().unwrap()[[0, 1]] = 0.25;
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(ToyEncoderParams::read_from(buf.as_slice()).unwrap(), p);
        assert!(ToyEncoderParams::read_from(&buf[..10]).is_err());
    }
}
