//! Span losses over a masked logit matrix.
//!
//! Only spans with `i <= j` and `j - i < max_len` take part in any partition
//! function. The auxiliary losses average each row (or column) over its
//! valid entries rather than over all `T`.

use ndarray::{Array1, Array2};

use super::logits::LogitBundle;
use crate::error::{Error, Result};

/// What a training example asks the model to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Span(usize, usize),
    /// Extra class scored by the no-answer bias.
    NoAnswer,
}

/// Relative weights of the true and auxiliary losses.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub true_loss: f64,
    pub start: f64,
    pub end: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            true_loss: 0.5,
            start: 0.25,
            end: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub true_loss: f64,
    pub start: f64,
    pub end: f64,
    pub total: f64,
}

/// Gradient of a loss with respect to the logits it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrad {
    /// d loss / d L
    pub full: Array2<f64>,
    /// Direct dependence on `l1`, on top of the path through `L`.
    pub start: Array1<f64>,
    /// Direct dependence on `l2`.
    pub end: Array1<f64>,
    pub bias: f64,
}

impl LogitGrad {
    fn zeros(t: usize) -> Self {
        LogitGrad {
            full: Array2::zeros((t, t)),
            start: Array1::zeros(t),
            end: Array1::zeros(t),
            bias: 0.0,
        }
    }
}

/// A logit bundle viewed through the span-length mask, optionally augmented
/// with a no-answer class.
#[derive(Debug, Clone, Copy)]
pub struct SpanLogits<'a> {
    pub bundle: &'a LogitBundle,
    pub max_len: usize,
    pub no_answer_bias: Option<f64>,
}

/// Adds a no-answer class with logit `bias` to every partition function.
pub fn apply_no_answer(bundle: &LogitBundle, max_len: usize, bias: f64) -> SpanLogits<'_> {
    SpanLogits {
        bundle,
        max_len,
        no_answer_bias: Some(bias),
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl<'a> SpanLogits<'a> {
    pub fn new(bundle: &'a LogitBundle, max_len: usize) -> Self {
        SpanLogits {
            bundle,
            max_len,
            no_answer_bias: None,
        }
    }

    fn t(&self) -> usize {
        self.bundle.len()
    }

    /// Valid end positions for a start `i`.
    fn ends_of(&self, i: usize) -> std::ops::Range<usize> {
        i..(i + self.max_len).min(self.t())
    }

    /// Valid start positions for an end `j`.
    fn starts_of(&self, j: usize) -> std::ops::RangeInclusive<usize> {
        (j + 1).saturating_sub(self.max_len)..=j
    }

    pub fn validate(&self, target: Target) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::Config("max span length must be at least 1".into()));
        }
        match target {
            Target::Span(i, j) if i > j || j >= self.t() || j - i >= self.max_len => {
                Err(Error::OutOfRange(format!(
                    "answer span ({i}, {j}) with T = {} and max length {}",
                    self.t(),
                    self.max_len
                )))
            }
            Target::NoAnswer if self.no_answer_bias.is_none() => Err(Error::Config(
                "no-answer target without a no-answer bias".into(),
            )),
            _ => Ok(()),
        }
    }

    fn target_logit(&self, target: Target, span_logit: impl Fn(usize, usize) -> f64) -> f64 {
        match target {
            Target::Span(i, j) => span_logit(i, j),
            Target::NoAnswer => self.no_answer_bias.expect("validated"),
        }
    }

    /// Softmax over `classes` plus the bias class: returns
    /// `(lse, probs, bias_prob)`.
    fn softmax(&self, classes: &[f64]) -> (f64, Vec<f64>, f64) {
        let lse = log_sum_exp(classes.iter().copied().chain(self.no_answer_bias));
        let probs = classes.iter().map(|&v| (v - lse).exp()).collect();
        let bias_prob = self.no_answer_bias.map_or(0.0, |b| (b - lse).exp());
        (lse, probs, bias_prob)
    }

    /// `-L[i*][j*] + logsumexp over valid (i, j)`.
    pub fn true_loss(&self, target: Target) -> Result<f64> {
        self.validate(target)?;
        Ok(self.true_loss_grad(target, 0.0, &mut LogitGrad::zeros(self.t())))
    }

    /// `-l1[i*] + logsumexp_i(mean over valid j of L[i][j])`.
    pub fn aux_loss_start(&self, target: Target) -> Result<f64> {
        self.validate(target)?;
        Ok(self.aux_start_grad(target, 0.0, &mut LogitGrad::zeros(self.t())))
    }

    /// `-l2[j*] + logsumexp_j(mean over valid i of L[i][j])`.
    pub fn aux_loss_end(&self, target: Target) -> Result<f64> {
        self.validate(target)?;
        Ok(self.aux_end_grad(target, 0.0, &mut LogitGrad::zeros(self.t())))
    }

    /// Weighted sum of the three losses.
    pub fn combined_loss(&self, target: Target, weights: LossWeights) -> Result<LossBreakdown> {
        Ok(self.combined_loss_grad(target, weights)?.0)
    }

    /// Combined loss together with its gradient with respect to the logits.
    pub fn combined_loss_grad(&self, target: Target, weights: LossWeights) -> Result<(LossBreakdown, LogitGrad)> {
        self.validate(target)?;
        let mut grad = LogitGrad::zeros(self.t());
        let true_loss = self.true_loss_grad(target, weights.true_loss, &mut grad);
        let start = self.aux_start_grad(target, weights.start, &mut grad);
        let end = self.aux_end_grad(target, weights.end, &mut grad);
        let total = weights.true_loss * true_loss + weights.start * start + weights.end * end;
        Ok((
            LossBreakdown {
                true_loss,
                start,
                end,
                total,
            },
            grad,
        ))
    }

    fn true_loss_grad(&self, target: Target, weight: f64, grad: &mut LogitGrad) -> f64 {
        let full = &self.bundle.full;
        let spans: Vec<(usize, usize)> = (0..self.t())
            .flat_map(|i| self.ends_of(i).map(move |j| (i, j)))
            .collect();
        let logits: Vec<f64> = spans.iter().map(|&(i, j)| full[[i, j]]).collect();
        let (lse, probs, bias_prob) = self.softmax(&logits);
        let loss = lse - self.target_logit(target, |i, j| full[[i, j]]);
        if weight != 0.0 {
            for (&(i, j), p) in spans.iter().zip(probs) {
                grad.full[[i, j]] += weight * p;
            }
            grad.bias += weight * bias_prob;
            match target {
                Target::Span(i, j) => grad.full[[i, j]] -= weight,
                Target::NoAnswer => grad.bias -= weight,
            }
        }
        loss
    }

    fn aux_start_grad(&self, target: Target, weight: f64, grad: &mut LogitGrad) -> f64 {
        let full = &self.bundle.full;
        let means: Vec<f64> = (0..self.t())
            .map(|i| {
                let ends = self.ends_of(i);
                let n = ends.len() as f64;
                ends.map(|j| full[[i, j]]).sum::<f64>() / n
            })
            .collect();
        let (lse, probs, bias_prob) = self.softmax(&means);
        let loss = lse - self.target_logit(target, |i, _| self.bundle.start[i]);
        if weight != 0.0 {
            for (i, p) in probs.into_iter().enumerate() {
                let ends = self.ends_of(i);
                let share = weight * p / ends.len() as f64;
                for j in ends {
                    grad.full[[i, j]] += share;
                }
            }
            grad.bias += weight * bias_prob;
            match target {
                Target::Span(i, _) => grad.start[i] -= weight,
                Target::NoAnswer => grad.bias -= weight,
            }
        }
        loss
    }

    fn aux_end_grad(&self, target: Target, weight: f64, grad: &mut LogitGrad) -> f64 {
        let full = &self.bundle.full;
        let means: Vec<f64> = (0..self.t())
            .map(|j| {
                let starts = self.starts_of(j);
                let n = starts.clone().count() as f64;
                starts.map(|i| full[[i, j]]).sum::<f64>() / n
            })
            .collect();
        let (lse, probs, bias_prob) = self.softmax(&means);
        let loss = lse - self.target_logit(target, |_, j| self.bundle.end[j]);
        if weight != 0.0 {
            for (j, p) in probs.into_iter().enumerate() {
                let starts = self.starts_of(j);
                let share = weight * p / starts.clone().count() as f64;
                for i in starts {
                    grad.full[[i, j]] += share;
                }
            }
            grad.bias += weight * bias_prob;
            match target {
                Target::Span(_, j) => grad.end[j] -= weight,
                Target::NoAnswer => grad.bias -= weight,
            }
        }
        loss
    }
}

/// Free-function forms of the losses over a bundle without the no-answer slot.
pub fn true_loss(bundle: &LogitBundle, answer: (usize, usize), max_len: usize) -> Result<f64> {
    SpanLogits::new(bundle, max_len).true_loss(Target::Span(answer.0, answer.1))
}

pub fn aux_loss_start(bundle: &LogitBundle, answer: (usize, usize), max_len: usize) -> Result<f64> {
    SpanLogits::new(bundle, max_len).aux_loss_start(Target::Span(answer.0, answer.1))
}

pub fn aux_loss_end(bundle: &LogitBundle, answer: (usize, usize), max_len: usize) -> Result<f64> {
    SpanLogits::new(bundle, max_len).aux_loss_end(Target::Span(answer.0, answer.1))
}

/// `L/2 + (L1 + L2)/4`.
pub fn combined_loss(bundle: &LogitBundle, answer: (usize, usize), max_len: usize) -> Result<LossBreakdown> {
    SpanLogits::new(bundle, max_len).combined_loss(Target::Span(answer.0, answer.1), LossWeights::default())
}
