#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array1;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phrase_index::corpus::{CorpusStore, Document, Token};
use phrase_index::dense::{Encoder, EncoderConfig, QueryDenseVector, ToyEncoder, ToyEncoderParams};
use phrase_index::index::{build_index, load_index, IndexConfig, IvfConfig, PhraseIndex};
use phrase_index::search::QueryVector;
use phrase_index::sparse::{fit_tfidf, SparseVector};
use phrase_index::training::FilterModel;

pub const VOCAB: &[&str] = &[
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet", "kilo", "lima",
    "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey",
    "xray", "yankee", "zulu", "red", "green", "blue", "river", "mountain", "city", "king", "queen", "war", "peace",
];

/// Random corpus of up to `max_tokens` tokens per document over a small
/// vocabulary, so documents share terms.
pub fn random_corpus(rng: &mut ChaCha8Rng, n_docs: usize, max_tokens: usize) -> CorpusStore {
    let docs = (0..n_docs)
        .map(|d| {
            let n_paras = rng.random_range(1..=3usize);
            let budget = rng.random_range(n_paras..=max_tokens.max(n_paras));
            let mut paras = Vec::new();
            for p in 0..n_paras {
                let len = if p + 1 == n_paras {
                    budget - (budget / n_paras) * (n_paras - 1)
                } else {
                    budget / n_paras
                };
                let words: Vec<&str> = (0..len.max(1)).map(|_| *VOCAB.choose(rng).unwrap()).collect();
                paras.push(words.join(" "));
            }
            let refs: Vec<&str> = paras.iter().map(String::as_str).collect();
            Document::new(format!("d{d:03}"), format!("Doc {d}"), &refs)
        })
        .collect();
    CorpusStore::from_documents(docs).unwrap()
}

pub fn random_question(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..6);
    (0..n).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn small_encoder(seed: u64) -> ToyEncoderParams {
    ToyEncoderParams {
        n_features: 512,
        ..ToyEncoderParams::new(EncoderConfig::new(16, 4), seed)
    }
}

/// Builds an index with the toy encoder, tf-idf, and an exhaustive IVF of
/// `n_clusters` cells (`None`: one per start).
pub fn build_toy(
    dir: &Path,
    corpus: &CorpusStore,
    params: &ToyEncoderParams,
    filter: &FilterModel,
    max_span_len: usize,
    n_clusters: Option<usize>,
) -> PhraseIndex {
    let encoder = ToyEncoder::new(params.clone()).unwrap();
    let tfidf = fit_tfidf(corpus).unwrap();
    let cfg = IndexConfig {
        max_span_len,
        ivf: Some(IvfConfig { n_clusters, seed: 3 }),
        ..IndexConfig::default()
    };
    build_index(corpus, &encoder, params, &tfidf, filter, &cfg, dir).unwrap();
    load_index(dir).unwrap()
}

// ---------------------------------------------------------------------------
// Brute-force tf-idf.

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn ngrams(seq: &[Token]) -> Vec<String> {
    let words: Vec<String> = seq.iter().map(|t| t.surface.to_lowercase()).collect();
    let mut out: Vec<String> = words.clone();
    out.extend(words.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    out
}

pub struct BruteTfIdf {
    pub n_bins: u64,
    pub n_docs: f64,
    pub df: BTreeMap<u64, f64>,
}

impl BruteTfIdf {
    pub fn fit(corpus: &CorpusStore, n_bins: u64) -> Self {
        let mut df = BTreeMap::new();
        for doc in corpus.documents() {
            let bins: BTreeSet<u64> = doc
                .paragraphs
                .iter()
                .flat_map(|p| ngrams(&p.tokens))
                .map(|g| fnv1a(g.as_bytes()) % n_bins)
                .collect();
            for b in bins {
                *df.entry(b).or_insert(0.0) += 1.0;
            }
        }
        BruteTfIdf {
            n_bins,
            n_docs: corpus.len() as f64,
            df,
        }
    }

    /// Unit-normalized tf-idf of several token sequences, as a dense map.
    pub fn embed(&self, seqs: &[&[Token]]) -> BTreeMap<u64, f64> {
        let mut tf: BTreeMap<u64, f64> = BTreeMap::new();
        for seq in seqs {
            for g in ngrams(seq) {
                *tf.entry(fnv1a(g.as_bytes()) % self.n_bins).or_insert(0.0) += 1.0;
            }
        }
        let mut v: BTreeMap<u64, f64> = tf
            .into_iter()
            .map(|(b, c)| {
                let df = self.df.get(&b).copied().unwrap_or(0.0);
                let idf = ((self.n_docs - df + 0.5) / (df + 0.5)).ln().max(0.0);
                (b, c * idf)
            })
            .filter(|&(_, w)| w != 0.0)
            .collect();
        let norm = v.values().map(|w| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return BTreeMap::new();
        }
        v.values_mut().for_each(|w| *w /= norm);
        v
    }
}

pub fn dense_map(v: &SparseVector) -> BTreeMap<u64, f64> {
    v.entries().iter().map(|&(b, w)| (u64::from(b), w)).collect()
}

pub fn map_dot(a: &BTreeMap<u64, f64>, b: &BTreeMap<u64, f64>) -> f64 {
    a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum()
}

pub fn map_add_normalize(a: &BTreeMap<u64, f64>, b: &BTreeMap<u64, f64>) -> BTreeMap<u64, f64> {
    let mut out = a.clone();
    for (k, v) in b {
        *out.entry(*k).or_insert(0.0) += v;
    }
    let norm = out.values().map(|w| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.values_mut().for_each(|w| *w /= norm);
    }
    out
}

// ---------------------------------------------------------------------------
// Full-enumeration phrase scorer, outside the index code path.

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn keeps(threshold: f64, p: f64) -> bool {
    threshold <= 0.0 || (threshold < 1.0 && p >= threshold)
}

fn fit_grid(rows: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let d = rows[0].len();
    (0..d)
        .map(|k| {
            let lo = rows.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
            ((lo + hi) / 2.0, if hi > lo { (hi - lo) / 254.0 } else { 1.0 })
        })
        .collect()
}

fn round_trip(v: &[f64], grid: &[(f64, f64)]) -> Vec<f64> {
    v.iter()
        .zip(grid)
        .map(|(&x, &(o, s))| o + s * ((x - o) / s).round_ties_even().clamp(-128.0, 127.0))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleHit {
    pub score: f64,
    pub doc: usize,
    pub para: usize,
    pub i: usize,
    pub j: usize,
}

pub struct Oracle {
    /// Per stored phrase: (doc, para, i, j, deq a, deq b, coherency as f32).
    phrases: Vec<(usize, usize, usize, usize, Vec<f64>, Vec<f64>, f64)>,
    /// Combined sparse vector per (doc, para).
    sparse: BTreeMap<(usize, usize), BTreeMap<u64, f64>>,
    pub raw: Vec<(usize, usize, usize, usize, Vec<f64>, Vec<f64>, f64)>,
}

impl Oracle {
    pub fn new(corpus: &CorpusStore, encoder: &dyn Encoder, filter: &FilterModel, max_len: usize, n_bins: u64) -> Self {
        let d_b = encoder.config().d_b;
        let tfidf = BruteTfIdf::fit(corpus, n_bins);
        let mut starts_kept = Vec::new();
        let mut ends_kept = Vec::new();
        let mut raw = Vec::new();
        let mut sparse = BTreeMap::new();
        for (d, doc) in corpus.documents().iter().enumerate() {
            let doc_seqs: Vec<&[Token]> = doc.paragraphs.iter().map(|p| p.tokens.as_slice()).collect();
            let doc_vec = tfidf.embed(&doc_seqs);
            for (p, para) in doc.paragraphs.iter().enumerate() {
                sparse.insert((d, p), map_add_normalize(&doc_vec, &tfidf.embed(&[para.tokens.as_slice()])));
                let t = para.len();
                if t == 0 {
                    continue;
                }
                let h = encoder.encode_paragraph(&doc.id, p, &para.tokens).unwrap();
                let m = h.matrix();
                let row = |r: usize, lo: usize, hi: usize| -> Vec<f64> { (lo..hi).map(|c| m[[r, c]]).collect() };
                let dot = |x: &[f64], w: &Array1<f64>| x.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>();
                let s: Vec<bool> = (0..t)
                    .map(|r| keeps(filter.threshold, sigmoid(dot(&row(r, 0, d_b), &filter.w_start) + filter.b_start)))
                    .collect();
                let e: Vec<bool> = (0..t)
                    .map(|r| keeps(filter.threshold, sigmoid(dot(&row(r, d_b, 2 * d_b), &filter.w_end) + filter.b_end)))
                    .collect();
                for r in 0..t {
                    if s[r] || e[r] {
                        starts_kept.push(row(r, 0, d_b));
                        ends_kept.push(row(r, d_b, 2 * d_b));
                    }
                }
                let dc = h.config().d_c;
                for i in (0..t).filter(|&i| s[i]) {
                    for j in (i..t.min(i + max_len)).filter(|&j| e[j]) {
                        let h3 = row(i, 2 * d_b, 2 * d_b + dc);
                        let h4 = row(j, 2 * d_b + dc, 2 * d_b + 2 * dc);
                        let coh: f64 = h3.iter().zip(&h4).map(|(a, b)| a * b).sum();
                        raw.push((d, p, i, j, row(i, 0, d_b), row(j, d_b, 2 * d_b), coh));
                    }
                }
            }
        }
        let phrases = if starts_kept.is_empty() {
            Vec::new()
        } else {
            let (ga, gb) = (fit_grid(&starts_kept), fit_grid(&ends_kept));
            raw.iter()
                .map(|(d, p, i, j, a, b, c)| (*d, *p, *i, *j, round_trip(a, &ga), round_trip(b, &gb), f64::from(*c as f32)))
                .collect()
        };
        Oracle { phrases, sparse, raw }
    }

    pub fn n_phrases(&self) -> usize {
        self.phrases.len()
    }

    /// All phrases ranked by total score, ties by (doc, para, i, j).
    pub fn rank(&self, q: &QueryVector, sparse_scale: f64, docs: Option<&BTreeSet<usize>>) -> Vec<OracleHit> {
        let qs = dense_map(&q.sparse);
        let mut hits: Vec<OracleHit> = self
            .phrases
            .iter()
            .filter(|ph| docs.is_none_or(|set| set.contains(&ph.0)))
            .map(|(d, p, i, j, a, b, c)| {
                let dense: f64 = a.iter().zip(q.dense.a.iter()).map(|(x, y)| x * y).sum::<f64>()
                    + b.iter().zip(q.dense.b.iter()).map(|(x, y)| x * y).sum::<f64>()
                    + q.dense.c * c;
                let sparse = map_dot(&qs, &self.sparse[&(*d, *p)]);
                OracleHit {
                    score: dense + sparse_scale * sparse,
                    doc: *d,
                    para: *p,
                    i: *i,
                    j: *j,
                }
            })
            .collect();
        hits.sort_by(|x, y| {
            y.score
                .total_cmp(&x.score)
                .then((x.doc, x.para, x.i, x.j).cmp(&(y.doc, y.para, y.i, y.j)))
        });
        hits
    }
}

pub fn random_query(rng: &mut ChaCha8Rng, d_b: usize, sparse: SparseVector) -> QueryVector {
    QueryVector {
        dense: QueryDenseVector {
            a: Array1::from_shape_fn(d_b, |_| rng.random_range(-1.0..1.0)),
            b: Array1::from_shape_fn(d_b, |_| rng.random_range(-1.0..1.0)),
            c: rng.random_range(-1.0..1.0),
        },
        sparse,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
