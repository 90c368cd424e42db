use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::filter::{train_filter, FilterConfig, FilterData, FilterModel, FilterReport};
use super::logits::compute_logits;
use super::loss::{LossBreakdown, LossWeights, SpanLogits, Target};
use super::negatives::{mine_negatives, PoolQuestion};
use crate::corpus::{tokenize, CorpusStore, QaExample, Token, DEFAULT_MAX_SPAN_LEN};
use crate::dense::{question_dense, EncoderConfig, QueryDenseVector, TokenMatrix, ToyEncoder, ToyEncoderParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub encoder: EncoderConfig,
    pub n_features: usize,
    pub seed: u64,
    pub max_span_len: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub no_answer_bias_init: f64,
    /// 0 disables negatives; at most one foreign and one same-article
    /// negative are mined per paragraph.
    pub negatives_per_paragraph: usize,
    pub loss_weights: LossWeights,
    pub filter: FilterConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            encoder: EncoderConfig::default(),
            n_features: 4096,
            seed: 0,
            max_span_len: DEFAULT_MAX_SPAN_LEN,
            learning_rate: 0.05,
            epochs: 3,
            batch_size: 12,
            no_answer_bias_init: 0.0,
            negatives_per_paragraph: 2,
            loss_weights: LossWeights::default(),
            filter: FilterConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let w = self.loss_weights;
        if ((w.true_loss + w.start + w.end) - 1.0).abs() > 1e-9 {
            return Err(Error::Config("loss weights must sum to 1".into()));
        }
        if self.max_span_len == 0 || self.batch_size == 0 || self.n_features == 0 {
            return Err(Error::Config("max_span_len, batch_size and n_features must be positive".into()));
        }
        Ok(())
    }
}

/// One (paragraph, question, target) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub doc: usize,
    pub para: usize,
    pub question: Vec<Token>,
    pub target: Target,
}

/// Resolves gold spans of a QA set against the corpus.
///
/// Uses `answer_span` when present, otherwise the first token-aligned
/// occurrence of any gold answer in the document. Unresolvable or
/// over-long answers are skipped with a warning.
pub fn prepare_examples(corpus: &CorpusStore, qa: &[QaExample], max_len: usize) -> Vec<TrainingExample> {
    let mut out = Vec::new();
    for (n, ex) in qa.iter().enumerate() {
        let Some(doc_ord) = ex.doc_id.as_deref().and_then(|id| corpus.ordinal(id)) else {
            warn!(question = n, "no resolvable doc_id; skipped");
            continue;
        };
        let doc = corpus.get(doc_ord).expect("ordinal from corpus");
        let located = match ex.answer_span {
            Some([p, cs, ce]) => doc
                .paragraphs
                .get(p)
                .and_then(|para| para.token_span_for_chars(cs, ce))
                .map(|(i, j)| (p, i, j)),
            None => doc.paragraphs.iter().enumerate().find_map(|(p, para)| {
                ex.answers
                    .iter()
                    .find_map(|a| para.find_answer(a))
                    .map(|(i, j)| (p, i, j))
            }),
        };
        match located {
            Some((p, i, j)) if j - i < max_len => out.push(TrainingExample {
                doc: doc_ord,
                para: p,
                question: tokenize(&ex.question),
                target: Target::Span(i, j),
            }),
            _ => warn!(question = n, "answer not located within max span length; skipped"),
        }
    }
    out
}

/// Combined loss of one example and its gradient with respect to the
/// trainable layer `W` (with `H = Z W` on both the paragraph and the
/// question side) and the no-answer bias.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_layer_grad(
    config: EncoderConfig,
    z_para: &Array2<f64>,
    z_question: &Array2<f64>,
    layer: &Array2<f64>,
    no_answer_bias: Option<f64>,
    target: Target,
    max_len: usize,
    weights: LossWeights,
) -> Result<(LossBreakdown, Array2<f64>, f64)> {
    let (b, c) = (config.d_b, config.d_c);
    let h = TokenMatrix::new(config, z_para.dot(layer))?;
    let zq0 = z_question.row(0);
    let hq0 = zq0.dot(layer);
    let hq = TokenMatrix::new(config, hq0.clone().insert_axis(Axis(0)))?;
    let q = question_dense(&hq)?;
    let bundle = compute_logits(&h, &q);
    let logits = SpanLogits {
        bundle: &bundle,
        max_len,
        no_answer_bias,
    };
    let (loss, g) = logits.combined_loss_grad(target, weights)?;

    let dl1 = &g.start + &g.full.sum_axis(Axis(1));
    let dl2 = &g.end + &g.full.sum_axis(Axis(0));
    let dc_mat = &g.full * q.c;
    let dcq = (&g.full * &bundle.coherency).sum();

    let t = h.rows();
    let mut dh = Array2::zeros((t, config.d));
    dh.slice_mut(s![.., ..b]).assign(&outer(&dl1, &q.a));
    dh.slice_mut(s![.., b..2 * b]).assign(&outer(&dl2, &q.b));
    dh.slice_mut(s![.., 2 * b..2 * b + c]).assign(&dc_mat.dot(&h.coh_ends()));
    dh.slice_mut(s![.., 2 * b + c..]).assign(&dc_mat.t().dot(&h.coh_starts()));

    let mut dhq = Array1::zeros(config.d);
    dhq.slice_mut(s![..b]).assign(&h.starts().t().dot(&dl1));
    dhq.slice_mut(s![b..2 * b]).assign(&h.ends().t().dot(&dl2));
    dhq.slice_mut(s![2 * b..2 * b + c]).assign(&(&hq0.slice(s![2 * b + c..]) * dcq));
    dhq.slice_mut(s![2 * b + c..]).assign(&(&hq0.slice(s![2 * b..2 * b + c]) * dcq));

    let mut dw = z_para.t().dot(&dh);
    dw += &outer(&zq0.to_owned(), &dhq);
    Ok((loss, dw, g.bias))
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    a.view().insert_axis(Axis(1)).dot(&b.view().insert_axis(Axis(0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean over all examples, measured after the epoch's updates.
    pub loss: LossBreakdown,
    pub n_examples: usize,
    pub n_negatives: usize,
    pub no_answer_bias: f64,
    pub filter: Option<FilterReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: ToyEncoderParams,
    pub no_answer_bias: f64,
    pub filter: FilterModel,
    /// Epoch 0 is the untrained model.
    pub epochs: Vec<EpochMetrics>,
}

struct Prepared {
    examples: Vec<TrainingExample>,
    para_z: BTreeMap<(usize, usize), Array2<f64>>,
    question_z: Vec<Array2<f64>>,
}

/// Gradient-descent trainer for the toy encoder's linear layer and the
/// no-answer bias.
pub struct Trainer<'a> {
    corpus: &'a CorpusStore,
    config: TrainingConfig,
    encoder: ToyEncoder,
}

impl<'a> Trainer<'a> {
    pub fn new(corpus: &'a CorpusStore, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let params = ToyEncoderParams {
            n_features: config.n_features,
            ..ToyEncoderParams::new(config.encoder, config.seed)
        }
        .with_layer();
        let encoder = ToyEncoder::new(params)?;
        Ok(Trainer {
            corpus,
            config,
            encoder,
        })
    }

    fn question_vector(&self, z_question: &Array2<f64>, layer: &Array2<f64>) -> Result<QueryDenseVector> {
        let hq = z_question.row(0).dot(layer).insert_axis(Axis(0));
        question_dense(&TokenMatrix::new(self.config.encoder, hq)?)
    }

    fn prepare(&self, qa: &[QaExample], rng: &mut ChaCha8Rng) -> Result<Prepared> {
        let mut examples = prepare_examples(self.corpus, qa, self.config.max_span_len);
        if examples.is_empty() {
            return Err(Error::EmptyQaSet);
        }
        let mut para_z = BTreeMap::new();
        for ex in &examples {
            para_z.entry((ex.doc, ex.para)).or_insert_with(|| {
                let tokens = &self.corpus.get(ex.doc).unwrap().paragraphs[ex.para].tokens;
                self.encoder.base_paragraph(tokens)
            });
        }
        if self.config.negatives_per_paragraph > 0 {
            let layer = self.encoder.params().layer.clone().expect("trainer encoder has a layer");
            let pool = examples
                .iter()
                .map(|ex| {
                    let z = self.encoder.base_question(&ex.question);
                    Ok(PoolQuestion {
                        doc_id: self.corpus.get(ex.doc).unwrap().id.clone(),
                        para_idx: ex.para,
                        embedding: self.question_vector(&z, &layer)?.flatten(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let paragraphs: Vec<(usize, usize)> = para_z.keys().copied().collect();
            for (doc, para) in paragraphs {
                let doc_id = &self.corpus.get(doc).unwrap().id;
                let picks = mine_negatives(doc_id, para, &pool, rng);
                for pick in picks.into_iter().take(self.config.negatives_per_paragraph) {
                    examples.push(TrainingExample {
                        doc,
                        para,
                        question: examples[pick.pool_index].question.clone(),
                        target: Target::NoAnswer,
                    });
                }
            }
        }
        let question_z = examples
            .iter()
            .map(|ex| self.encoder.base_question(&ex.question))
            .collect();
        Ok(Prepared {
            examples,
            para_z,
            question_z,
        })
    }

    fn evaluate(&self, data: &Prepared, layer: &Array2<f64>, bias: f64) -> Result<LossBreakdown> {
        let mut sum = LossBreakdown::default();
        for (ex, zq) in data.examples.iter().zip(&data.question_z) {
            let (loss, _, _) = self.example_grad(data, ex, zq, layer, bias)?;
            sum.true_loss += loss.true_loss;
            sum.start += loss.start;
            sum.end += loss.end;
            sum.total += loss.total;
        }
        let n = data.examples.len() as f64;
        Ok(LossBreakdown {
            true_loss: sum.true_loss / n,
            start: sum.start / n,
            end: sum.end / n,
            total: sum.total / n,
        })
    }

    fn example_grad(
        &self,
        data: &Prepared,
        ex: &TrainingExample,
        zq: &Array2<f64>,
        layer: &Array2<f64>,
        bias: f64,
    ) -> Result<(LossBreakdown, Array2<f64>, f64)> {
        loss_and_layer_grad(
            self.config.encoder,
            &data.para_z[&(ex.doc, ex.para)],
            zq,
            layer,
            Some(bias),
            ex.target,
            self.config.max_span_len,
            self.config.loss_weights,
        )
    }

    fn fit_filter(&self, data: &Prepared, layer: &Array2<f64>) -> Result<(FilterModel, FilterReport)> {
        let cfg = self.config.encoder;
        let mut starts = BTreeMap::<(usize, usize), Vec<bool>>::new();
        let mut ends = BTreeMap::<(usize, usize), Vec<bool>>::new();
        for ex in &data.examples {
            let t = data.para_z[&(ex.doc, ex.para)].nrows();
            let s = starts.entry((ex.doc, ex.para)).or_insert_with(|| vec![false; t]);
            if let Target::Span(i, _) = ex.target {
                s[i] = true;
            }
            let e = ends.entry((ex.doc, ex.para)).or_insert_with(|| vec![false; t]);
            if let Target::Span(_, j) = ex.target {
                e[j] = true;
            }
        }
        let mut start_rows = Vec::new();
        let mut end_rows = Vec::new();
        for (key, z) in &data.para_z {
            let h = z.dot(layer);
            start_rows.push(h.slice(s![.., ..cfg.d_b]).to_owned());
            end_rows.push(h.slice(s![.., cfg.d_b..2 * cfg.d_b]).to_owned());
            let _ = key;
        }
        let stack = |rows: &[Array2<f64>]| {
            let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("equal widths")
        };
        let start = FilterData {
            vectors: stack(&start_rows),
            labels: starts.into_values().flatten().collect(),
        };
        let end = FilterData {
            vectors: stack(&end_rows),
            labels: ends.into_values().flatten().collect(),
        };
        train_filter(&start, &end, &self.config.filter, None)
    }

    /// Trains on `qa`, calling `on_epoch` after every epoch (and once for
    /// the untrained model).
    pub fn run(mut self, qa: &[QaExample], mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<TrainOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let data = self.prepare(qa, &mut rng)?;
        let n_negatives = data
            .examples
            .iter()
            .filter(|e| e.target == Target::NoAnswer)
            .count();
        let mut layer = self.encoder.params().layer.clone().expect("trainer encoder has a layer");
        let mut bias = self.config.no_answer_bias_init;

        let mut epochs = Vec::with_capacity(self.config.epochs + 1);
        let mut record = |epoch: usize, layer: &Array2<f64>, bias: f64, filter: Option<FilterReport>, this: &Self| -> Result<()> {
            let metrics = EpochMetrics {
                epoch,
                loss: this.evaluate(&data, layer, bias)?,
                n_examples: data.examples.len(),
                n_negatives,
                no_answer_bias: bias,
                filter,
            };
            info!(epoch, loss = metrics.loss.total, "epoch done");
            on_epoch(&metrics);
            epochs.push(metrics);
            Ok(())
        };
        record(0, &layer, bias, None, &self)?;

        let mut order: Vec<usize> = (0..data.examples.len()).collect();
        let mut filter = None;
        for epoch in 1..=self.config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(self.config.batch_size) {
                let mut dw = Array2::zeros(layer.dim());
                let mut db = 0.0;
                for &n in batch {
                    let (_, gw, gb) = self.example_grad(&data, &data.examples[n], &data.question_z[n], &layer, bias)?;
                    dw += &gw;
                    db += gb;
                }
                let step = self.config.learning_rate / batch.len() as f64;
                layer.scaled_add(-step, &dw);
                bias -= step * db;
            }
            let fitted = self.fit_filter(&data, &layer);
            let report = match fitted {
                Ok((model, report)) => {
                    filter = Some(model);
                    Some(report)
                }
                Err(Error::SingleClass) => None,
                Err(e) => return Err(e),
            };
            record(epoch, &layer, bias, report, &self)?;
        }

        self.encoder.set_layer(layer);
        Ok(TrainOutcome {
            encoder: self.encoder.params().clone(),
            no_answer_bias: bias,
            filter: filter.unwrap_or_else(|| FilterModel::keep_all(self.config.encoder.d_b)),
            epochs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::fact_corpus;
    use rand::Rng;

    fn small_config() -> TrainingConfig {
        TrainingConfig {
            encoder: EncoderConfig::new(12, 4),
            n_features: 512,
            epochs: 2,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn layer_gradient_matches_finite_differences() {
        let cfg = EncoderConfig::new(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rand_mat = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
        let z_para = rand_mat(6, cfg.d);
        let z_q = rand_mat(3, cfg.d);
        let layer = rand_mat(cfg.d, cfg.d);
        let weights = LossWeights::default();
        for (target, bias) in [(Target::Span(1, 3), None), (Target::NoAnswer, Some(0.4)), (Target::Span(2, 2), Some(-0.5))] {
            let (_, dw, db) = loss_and_layer_grad(cfg, &z_para, &z_q, &layer, bias, target, 4, weights).unwrap();
            let f = |w: &Array2<f64>, bias: Option<f64>| {
                loss_and_layer_grad(cfg, &z_para, &z_q, w, bias, target, 4, weights).unwrap().0.total
            };
            let h = 1e-5;
            for r in 0..cfg.d {
                for c in 0..cfg.d {
                    let mut p = layer.clone();
                    p[[r, c]] += h;
                    let mut m = layer.clone();
                    m[[r, c]] -= h;
                    let fd = (f(&p, bias) - f(&m, bias)) / (2.0 * h);
                    assert!((fd - dw[[r, c]]).abs() < 1e-6, "[{r},{c}] {fd} vs {}", dw[[r, c]]);
                }
            }
            if let Some(b) = bias {
                let fd = (f(&layer, Some(b + h)) - f(&layer, Some(b - h))) / (2.0 * h);
                assert!((fd - db).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn prepare_resolves_spans() {
        let (corpus, qa) = fact_corpus(3, 1, 2, 1);
        let examples = prepare_examples(&corpus, &qa, 20);
        assert_eq!(examples.len(), qa.len());
        for (ex, q) in examples.iter().zip(&qa) {
            let Target::Span(i, j) = ex.target else { panic!() };
            let para = &corpus.get(ex.doc).unwrap().paragraphs[ex.para];
            assert_eq!(para.span_text(i, j), q.answers[0]);
        }
    }

    #[test]
    fn training_is_deterministic_and_mines_negatives() {
        let (corpus, qa) = fact_corpus(4, 2, 2, 9);
        let run = || {
            Trainer::new(&corpus, small_config())
                .unwrap()
                .run(&qa, |_| {})
                .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.epochs.len(), 3);
        assert!(a.epochs[0].n_negatives > 0);
        assert!(a.epochs[1].filter.is_some());
    }

    #[test]
    fn invalid_weights_rejected() {
        let mut cfg = small_config();
        cfg.loss_weights.start = 0.5;
        let (corpus, _) = fact_corpus(1, 1, 1, 0);
        assert!(Trainer::new(&corpus, cfg).is_err());
    }
}
