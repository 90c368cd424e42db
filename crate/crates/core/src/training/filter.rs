//! Question-independent start/end filter.
//!
//! Two logistic regressions, one over start vectors and one over end
//! vectors, predict whether a token can begin (resp. end) any answer. Tokens
//! scoring below the threshold are dropped from the index.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FILTER_MAGIC: &[u8; 8] = b"PHXFLT01";

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterModel {
    pub w_start: Array1<f64>,
    pub b_start: f64,
    pub w_end: Array1<f64>,
    pub b_end: f64,
    /// Keep a token when its probability is at least this value.
    pub threshold: f64,
}

impl FilterModel {
    /// Keeps every token.
    pub fn keep_all(d_b: usize) -> Self {
        FilterModel {
            w_start: Array1::zeros(d_b),
            b_start: 0.0,
            w_end: Array1::zeros(d_b),
            b_end: 0.0,
            threshold: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w_start.len()
    }

    pub fn start_prob(&self, a: ArrayView1<'_, f64>) -> f64 {
        sigmoid(self.w_start.dot(&a) + self.b_start)
    }

    pub fn end_prob(&self, b: ArrayView1<'_, f64>) -> f64 {
        sigmoid(self.w_end.dot(&b) + self.b_end)
    }

    /// `threshold <= 0` keeps everything and `threshold >= 1` nothing.
    fn keeps(&self, p: f64) -> bool {
        if self.threshold <= 0.0 {
            true
        } else if self.threshold >= 1.0 {
            false
        } else {
            p >= self.threshold
        }
    }

    pub fn keeps_start(&self, a: ArrayView1<'_, f64>) -> bool {
        self.keeps(self.start_prob(a))
    }

    pub fn keeps_end(&self, b: ArrayView1<'_, f64>) -> bool {
        self.keeps(self.end_prob(b))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(FILTER_MAGIC)?;
        out.write_all(&(self.dim() as u64).to_le_bytes())?;
        out.write_all(&self.threshold.to_le_bytes())?;
        out.write_all(&self.b_start.to_le_bytes())?;
        out.write_all(&self.b_end.to_le_bytes())?;
        for v in self.w_start.iter().chain(self.w_end.iter()) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut buf = Vec::new();
        input
            .read_to_end(&mut buf)
            .map_err(|e| Error::format("filter", e.to_string()))?;
        if buf.len() < 40 || &buf[..8] != FILTER_MAGIC {
            return Err(Error::format("filter", "bad header"));
        }
        let f = |k: usize| f64::from_le_bytes(buf[k..k + 8].try_into().unwrap());
        let dim = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        if buf.len() != 40 + 16 * dim {
            return Err(Error::format("filter", "length does not match dimension"));
        }
        let w_start = (0..dim).map(|k| f(40 + 8 * k)).collect();
        let w_end = (0..dim).map(|k| f(40 + 8 * (dim + k))).collect();
        Ok(FilterModel {
            w_start,
            b_start: f(24),
            w_end,
            b_end: f(32),
            threshold: f(16),
        })
    }
}

/// Labelled vectors for one side of the filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterData {
    pub vectors: Array2<f64>,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub threshold: f64,
    /// Reweight positives by `n_neg / n_pos`.
    pub balanced: bool,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            learning_rate: 0.5,
            epochs: 200,
            threshold: 0.5,
            balanced: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    /// Fraction of tokens kept.
    pub survival: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub start: ClassifierMetrics,
    pub end: ClassifierMetrics,
}

fn fit_logistic(data: &FilterData, cfg: &FilterConfig, rng: &mut ChaCha8Rng) -> Result<(Array1<f64>, f64)> {
    let n = data.labels.len();
    if n != data.vectors.nrows() {
        return Err(Error::Shape(format!("{} labels for {} vectors", n, data.vectors.nrows())));
    }
    let n_pos = data.labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::SingleClass);
    }
    let pos_weight = if cfg.balanced {
        (n - n_pos) as f64 / n_pos as f64
    } else {
        1.0
    };
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let mut w = Array1::from_shape_fn(data.vectors.ncols(), |_| init.sample(rng));
    let mut b = 0.0;
    let y = Array1::from_iter(data.labels.iter().map(|&l| if l { 1.0 } else { 0.0 }));
    let sample_w = Array1::from_iter(data.labels.iter().map(|&l| if l { pos_weight } else { 1.0 }));
    let norm = sample_w.sum();
    for _ in 0..cfg.epochs {
        let p = (data.vectors.dot(&w) + b).mapv(sigmoid);
        let residual = (p - &y) * &sample_w;
        let grad_w = data.vectors.t().dot(&residual) / norm;
        let grad_b = residual.sum() / norm;
        w.scaled_add(-cfg.learning_rate, &grad_w);
        b -= cfg.learning_rate * grad_b;
    }
    Ok((w, b))
}

fn metrics(keep: impl Fn(ArrayView1<'_, f64>) -> bool, data: &FilterData) -> ClassifierMetrics {
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (row, &label) in data.vectors.rows().into_iter().zip(&data.labels) {
        match (keep(row), label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    ClassifierMetrics {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
        survival: ratio(tp + fp, tp + fp + fn_ + tn),
    }
}

/// Trains both classifiers by full-batch gradient descent.
///
/// Metrics are measured on `validation` when given, otherwise on the
/// training data.
pub fn train_filter(
    start: &FilterData,
    end: &FilterData,
    cfg: &FilterConfig,
    validation: Option<(&FilterData, &FilterData)>,
) -> Result<(FilterModel, FilterReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w_start, b_start) = fit_logistic(start, cfg, &mut rng)?;
    let (w_end, b_end) = fit_logistic(end, cfg, &mut rng)?;
    let model = FilterModel {
        w_start,
        b_start,
        w_end,
        b_end,
        threshold: cfg.threshold,
    };
    let (vs, ve) = validation.unwrap_or((start, end));
    let report = FilterReport {
        start: metrics(|a| model.keeps_start(a), vs),
        end: metrics(|b| model.keeps_end(b), ve),
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Two blobs at ±3 along a random direction, plus small noise.
    fn separable(n: usize, dim: usize, seed: u64) -> FilterData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir = Array1::from_shape_fn(dim, |_| rng.random_range(-1.0f64..1.0));
        let dir = &dir / dir.dot(&dir).sqrt();
        let labels: Vec<bool> = (0..n).map(|k| k % 4 == 0).collect();
        let mut vectors = Array2::zeros((n, dim));
        for (k, mut row) in vectors.rows_mut().into_iter().enumerate() {
            let sign = if labels[k] { 3.0 } else { -3.0 };
            for c in 0..dim {
                row[c] = sign * dir[c] + rng.random_range(-0.3..0.3);
            }
        }
        FilterData { vectors, labels }
    }

    #[test]
    fn separable_data_is_learned_exactly() {
        let start = separable(80, 6, 1);
        let end = separable(80, 6, 2);
        let (model, report) = train_filter(&start, &end, &FilterConfig::default(), None).unwrap();
        assert_eq!(report.start.accuracy, 1.0);
        assert_eq!(report.end.accuracy, 1.0);
        let kept: Vec<bool> = start.vectors.rows().into_iter().map(|r| model.keeps_start(r)).collect();
        assert_eq!(kept, start.labels);
    }

    #[test]
    fn threshold_limits() {
        let data = separable(40, 4, 3);
        let mut cfg = FilterConfig {
            threshold: 0.0,
            ..FilterConfig::default()
        };
        let (_, report) = train_filter(&data, &data, &cfg, None).unwrap();
        assert_eq!(report.start.survival, 1.0);
        cfg.threshold = 1.0;
        let (_, report) = train_filter(&data, &data, &cfg, None).unwrap();
        assert_eq!(report.start.survival, 0.0);
    }

    #[test]
    fn zero_model_keeps_at_half() {
        let mut m = FilterModel::keep_all(3);
        m.threshold = 0.5;
        assert!(m.keeps_start(Array1::from_vec(vec![5.0, -1.0, 2.0]).view()));
    }

    #[test]
    fn single_class_rejected() {
        let data = FilterData {
            vectors: Array2::zeros((3, 2)),
            labels: vec![true; 3],
        };
        assert!(matches!(
            train_filter(&data, &data, &FilterConfig::default(), None),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn persistence_round_trip() {
        let (model, _) = train_filter(&separable(20, 3, 5), &separable(20, 3, 6), &FilterConfig::default(), None).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        assert_eq!(FilterModel::read_from(buf.as_slice()).unwrap(), model);
        assert!(FilterModel::read_from(&buf[..30]).is_err());
    }
}
