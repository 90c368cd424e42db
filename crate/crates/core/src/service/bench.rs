use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::eval::{score_question, QuestionScore};
use crate::corpus::QaExample;
use crate::error::{Error, Result};
use crate::index::PhraseIndex;
use crate::search::{embed_query, search, SearchConfig, SearchOutcome, Strategy};

/// Nearest-rank percentile of ascending `sorted`: the value at rank
/// `ceil(p / 100 * n)`, so no interpolation ever happens.
pub fn percentile_nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub p50: f64,
    pub p95: f64,
    pub mean: f64,
}

impl LatencyStats {
    pub fn from_seconds(mut samples: Vec<f64>) -> Self {
        samples.sort_by(f64::total_cmp);
        LatencyStats {
            p50: percentile_nearest_rank(&samples, 50.0),
            p95: percentile_nearest_rank(&samples, 95.0),
            mean: samples.iter().sum::<f64>() / samples.len() as f64,
        }
    }
}

/// Accuracy and cost of one strategy over a QA set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: Strategy,
    pub n_questions: usize,
    pub em: f64,
    pub f1: f64,
    /// Seconds per query (embedding plus search).
    pub s_per_q: LatencyStats,
    /// Indexed corpus tokens times queries, over total query wall time.
    pub words_per_second: f64,
    /// Mean number of documents whose phrases were scored.
    pub docs_per_query: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub question: String,
    pub answer: String,
    pub score: QuestionScore,
    pub seconds: f64,
    pub docs_visited: usize,
}

fn answer_one(index: &PhraseIndex, ex: &QaExample, config: &SearchConfig) -> Result<(SearchOutcome, f64)> {
    let t0 = Instant::now();
    let q = embed_query(index, &ex.question)?;
    let out = search(index, &q, config)?;
    Ok((out, t0.elapsed().as_secs_f64()))
}

fn predict(index: &PhraseIndex, ex: &QaExample, n: usize, config: &SearchConfig) -> Result<Prediction> {
    let (out, seconds) = answer_one(index, ex, config)?;
    let answer = out.results.first().map(|r| r.text.clone()).unwrap_or_default();
    let score = score_question(&answer, &ex.answers).map_err(|_| Error::EmptyGold(n))?;
    Ok(Prediction {
        question: ex.question.clone(),
        answer,
        score,
        seconds,
        docs_visited: out.docs_visited,
    })
}

fn report(index: &PhraseIndex, strategy: Strategy, preds: &[Prediction]) -> EvalReport {
    let n = preds.len() as f64;
    let total_time: f64 = preds.iter().map(|p| p.seconds).sum();
    let words = index.manifest().counts.tokens as f64 * n;
    EvalReport {
        strategy,
        n_questions: preds.len(),
        em: preds.iter().map(|p| p.score.em).sum::<f64>() / n,
        f1: preds.iter().map(|p| p.score.f1).sum::<f64>() / n,
        s_per_q: LatencyStats::from_seconds(preds.iter().map(|p| p.seconds).collect()),
        words_per_second: if total_time > 0.0 { words / total_time } else { f64::INFINITY },
        docs_per_query: preds.iter().map(|p| p.docs_visited as f64).sum::<f64>() / n,
    }
}

/// Answers every question with `config.strategy` on all available cores.
///
/// Predictions are returned in QA order, so the report does not depend on
/// scheduling (latencies aside).
pub fn evaluate(index: &PhraseIndex, qa: &[QaExample], config: &SearchConfig) -> Result<(EvalReport, Vec<Prediction>)> {
    if qa.is_empty() {
        return Err(Error::EmptyQaSet);
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(qa.len());
    let chunk = qa.len().div_ceil(workers);
    let parts: Vec<Result<Vec<Prediction>>> = std::thread::scope(|s| {
        let handles: Vec<_> = qa
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(k, ex)| predict(index, ex, c * chunk + k, config))
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut preds = Vec::with_capacity(qa.len());
    for part in parts {
        preds.extend(part?);
    }
    Ok((report(index, config.strategy, &preds), preds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub search: SearchConfig,
    pub strategies: Vec<Strategy>,
    /// Untimed queries run before measuring each strategy.
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            search: SearchConfig::default(),
            strategies: Strategy::ALL.to_vec(),
            warmup: 3,
        }
    }
}

/// Sequential, single-threaded timing of each strategy.
pub fn benchmark(index: &PhraseIndex, qa: &[QaExample], config: &BenchConfig) -> Result<Vec<EvalReport>> {
    if qa.is_empty() {
        return Err(Error::EmptyQaSet);
    }
    config.strategies
        .iter()
        .map(|&strategy| {
            let cfg = SearchConfig {
                strategy,
                ..config.search
            };
            for ex in qa.iter().cycle().take(config.warmup) {
                answer_one(index, ex, &cfg)?;
            }
            let preds = qa
                .iter()
                .enumerate()
                .map(|(n, ex)| predict(index, ex, n, &cfg))
                .collect::<Result<Vec<_>>>()?;
            Ok(report(index, strategy, &preds))
        })
        .collect()
}
