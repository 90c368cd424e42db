//! Exact, sparse-first, dense-first and hybrid phrase search.
//!
//! Every strategy scores phrases through the same [`Scorer`], so a span's
//! score is bit-identical whichever strategy surfaces it, and ranking is by
//! total score descending with ties broken by (doc ordinal, paragraph,
//! start, end) ascending.

mod ivf;

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use ivf::{kmeans_train, IvfIndex, IVF_MAX_CLUSTERS};

use crate::corpus::{tokenize, SpanRef};
use crate::dense::{question_dense, Encoder, QueryDenseVector};
use crate::error::{Error, Result};
use crate::index::{PhraseIndex, StartRecord};
use crate::sparse::{retrieve_top_docs, sparse_score, SparseVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Exact,
    Sfs,
    Dfs,
    Hybrid,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Exact, Strategy::Sfs, Strategy::Dfs, Strategy::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Exact => "exact",
            Strategy::Sfs => "sfs",
            Strategy::Dfs => "dfs",
            Strategy::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub strategy: Strategy,
    /// Documents retrieved by the sparse stage.
    pub k_s: usize,
    /// Start vectors retrieved by the dense stage.
    pub k_d: usize,
    /// IVF cells probed by the dense stage.
    pub nprobe: usize,
    pub sparse_scale: f64,
    pub top_k: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            strategy: Strategy::Hybrid,
            k_s: 5,
            k_d: 1000,
            nprobe: 64,
            sparse_scale: 0.05,
            top_k: 10,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_s == 0 || self.k_d == 0 || self.nprobe == 0 || self.top_k == 0 {
            return Err(Error::Config("k_s, k_d, nprobe and top_k must be at least 1".into()));
        }
        if !(self.sparse_scale >= 0.0 && self.sparse_scale.is_finite()) {
            return Err(Error::Config("sparse_scale must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Question embedding `(a', b', c', s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryVector {
    pub dense: QueryDenseVector,
    pub sparse: SparseVector,
}

/// Embeds a question with the index's own question encoder and tf-idf model.
pub fn embed_query(index: &PhraseIndex, question: &str) -> Result<QueryVector> {
    let tokens = tokenize(question);
    if tokens.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    let h = index.question_encoder().encode_question(&tokens)?;
    Ok(QueryVector {
        dense: question_dense(&h)?,
        sparse: index.tfidf().embed_sequences([tokens.as_slice()]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub text: String,
    pub span: SpanRef,
    /// `dense_score + sparse_scale * sparse_score`.
    pub score: f64,
    pub dense_score: f64,
    pub sparse_score: f64,
    pub title: String,
    /// Strategy that surfaced the span; hybrid results name the sub-strategy,
    /// or `hybrid` when both found it.
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub results: Vec<SearchResult>,
    /// Distinct documents whose phrases were scored.
    pub docs_visited: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    score: f64,
    dense: f64,
    sparse: f64,
    doc: u32,
    paragraph: u32,
    i: u32,
    j: u32,
}

impl Candidate {
    fn key(&self) -> (u32, u32, u32, u32) {
        (self.doc, self.paragraph, self.i, self.j)
    }

    /// `Less` means `self` ranks ahead of `other`.
    fn rank(&self, other: &Self) -> Ordering {
        other.score.total_cmp(&self.score).then(self.key().cmp(&other.key()))
    }
}

/// Max-heap on rank so the worst kept candidate is on top.
struct Ranked(Candidate);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank(&other.0)
    }
}

struct TopK {
    k: usize,
    heap: BinaryHeap<Ranked>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn push(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(Ranked(c));
        } else if let Some(worst) = self.heap.peek() {
            if c.rank(&worst.0) == Ordering::Less {
                self.heap.pop();
                self.heap.push(Ranked(c));
            }
        }
    }

    fn into_sorted(self) -> Vec<Candidate> {
        let mut v: Vec<Candidate> = self.heap.into_iter().map(|r| r.0).collect();
        v.sort_by(Candidate::rank);
        v
    }
}

/// Query-side state shared by all strategies.
///
/// `a' . deq(a)` is evaluated as `sum_k (a'_k scale_k) q_k + sum_k a'_k
/// offset_k`, always in that form.
pub struct Scorer<'a> {
    index: &'a PhraseIndex,
    query: &'a QueryVector,
    sparse_scale: f64,
    wa: Vec<f64>,
    ca: f64,
    wb: Vec<f64>,
    cb: f64,
    sparse_cache: HashMap<u32, f64>,
}

fn weighted_sum(w: &[f64], bytes: &[u8]) -> f64 {
    w.iter().zip(bytes).map(|(w, &b)| w * f64::from(b as i8)).sum()
}

impl<'a> Scorer<'a> {
    pub fn new(index: &'a PhraseIndex, query: &'a QueryVector, sparse_scale: f64) -> Result<Self> {
        let d_b = index.d_b();
        if query.dense.a.len() != d_b || query.dense.b.len() != d_b {
            return Err(Error::Shape(format!(
                "query width {} vs index d_b {d_b}",
                query.dense.a.len()
            )));
        }
        let fold = |q: &[f64], p: &crate::index::QuantizationParams| {
            let w: Vec<f64> = q.iter().zip(&p.scale).map(|(q, s)| q * s).collect();
            let c: f64 = q.iter().zip(&p.offset).map(|(q, o)| q * o).sum();
            (w, c)
        };
        let a = query.dense.a.as_slice().expect("contiguous query");
        let b = query.dense.b.as_slice().expect("contiguous query");
        let (wa, ca) = fold(a, index.start_quant());
        let (wb, cb) = fold(b, index.end_quant());
        Ok(Scorer {
            index,
            query,
            sparse_scale,
            wa,
            ca,
            wb,
            cb,
            sparse_cache: HashMap::new(),
        })
    }

    /// `a' . a` for start row `row`.
    pub fn start_term(&self, row: u32) -> f64 {
        self.ca + weighted_sum(&self.wa, self.index.start_row_bytes(row as usize))
    }

    /// `b' . b` for end row `row`.
    pub fn end_term(&self, row: u32) -> f64 {
        self.cb + weighted_sum(&self.wb, self.index.end_row_bytes(row as usize))
    }

    /// `s' . s` against the combined vector of paragraph entry `p`.
    pub fn sparse_term(&mut self, p: u32) -> f64 {
        let (index, query) = (self.index, self.query);
        *self
            .sparse_cache
            .entry(p)
            .or_insert_with(|| sparse_score(&query.sparse, index.paragraph_vector(p as usize)))
    }

    fn phrase(&mut self, rec: &StartRecord, start: f64, j: usize, end_row: u32, coherency: f32) -> Candidate {
        let dense = start + self.end_term(end_row) + self.query.dense.c * f64::from(coherency);
        let sparse = self.sparse_term(rec.paragraph);
        Candidate {
            score: dense + self.sparse_scale * sparse,
            dense,
            sparse,
            doc: self.index.paragraphs()[rec.paragraph as usize].doc,
            paragraph: rec.paragraph,
            i: rec.i,
            j: j as u32,
        }
    }

    fn expand(&mut self, k: usize, top: &mut TopK) {
        let rec = self.index.start_record(k);
        let start = self.start_term(rec.row);
        let mut ends = Vec::with_capacity(rec.n_ends as usize);
        self.index.for_each_end(&rec, |j, row, coh| ends.push((j, row, coh)));
        for (j, row, coh) in ends {
            let c = self.phrase(&rec, start, j, row, coh);
            top.push(c);
        }
    }

    /// Total score of an arbitrary stored span, if it is in the index.
    pub fn score_span(&mut self, paragraph: u32, i: usize, j: usize) -> Option<f64> {
        let entry = self.index.paragraphs()[paragraph as usize];
        let records = entry.start_base as usize..(entry.start_base + entry.n_starts) as usize;
        let k = records.clone().find(|&k| self.index.start_record(k).i as usize == i)?;
        let rec = self.index.start_record(k);
        let mut hit = None;
        self.index.for_each_end(&rec, |jj, row, coh| {
            if jj == j {
                hit = Some((row, coh));
            }
        });
        let (row, coh) = hit?;
        let start = self.start_term(rec.row);
        Some(self.phrase(&rec, start, j, row, coh).score)
    }
}

fn finish(index: &PhraseIndex, cands: Vec<Candidate>, strategy: Strategy) -> Vec<SearchResult> {
    cands
        .into_iter()
        .map(|c| {
            let entry = index.paragraphs()[c.paragraph as usize];
            let doc = index.corpus().get(entry.doc as usize).expect("doc of stored phrase");
            let para = &doc.paragraphs[entry.para as usize];
            SearchResult {
                text: para.span_text(c.i as usize, c.j as usize).to_string(),
                span: SpanRef {
                    doc_id: doc.id.clone(),
                    para_idx: entry.para as usize,
                    i: c.i as usize,
                    j: c.j as usize,
                },
                score: c.score,
                dense_score: c.dense,
                sparse_score: c.sparse,
                title: doc.title.clone(),
                strategy,
            }
        })
        .collect()
}

struct Raw {
    cands: Vec<Candidate>,
    docs: BTreeSet<u32>,
}

fn exact_raw(index: &PhraseIndex, query: &QueryVector, config: &SearchConfig) -> Result<Raw> {
    let mut scorer = Scorer::new(index, query, config.sparse_scale)?;
    let mut top = TopK::new(config.top_k);
    for k in 0..index.n_start_records() {
        scorer.expand(k, &mut top);
    }
    Ok(Raw {
        cands: top.into_sorted(),
        docs: (0..index.corpus().len() as u32).collect(),
    })
}

/// Documents chosen by the sparse stage. An empty sparse query scores every
/// document 0, so the tie-break selects the lowest ordinals.
fn sparse_docs(index: &PhraseIndex, query: &QueryVector, k_s: usize) -> Vec<u32> {
    if query.sparse.is_empty() {
        return (0..index.corpus().len().min(k_s) as u32).collect();
    }
    retrieve_top_docs(&query.sparse, index.inverted(), k_s)
        .into_iter()
        .map(|(d, _)| d as u32)
        .collect()
}

fn sfs_raw(index: &PhraseIndex, query: &QueryVector, config: &SearchConfig) -> Result<Raw> {
    let docs: BTreeSet<u32> = sparse_docs(index, query, config.k_s).into_iter().collect();
    let mut scorer = Scorer::new(index, query, config.sparse_scale)?;
    let mut top = TopK::new(config.top_k);
    for entry in index.paragraphs().iter().filter(|p| docs.contains(&p.doc)) {
        for k in entry.start_base..entry.start_base + entry.n_starts {
            scorer.expand(k as usize, &mut top);
        }
    }
    Ok(Raw {
        cands: top.into_sorted(),
        docs,
    })
}

fn dfs_raw(index: &PhraseIndex, ivf: &IvfIndex, query: &QueryVector, config: &SearchConfig) -> Result<Raw> {
    if ivf.centroids.ncols() != index.d_b() || ivf.lists.iter().flatten().any(|&r| r as usize >= index.n_start_records()) {
        return Err(Error::Shape("IVF does not match the index".into()));
    }
    let mut scorer = Scorer::new(index, query, config.sparse_scale)?;
    let a = query.dense.a.as_slice().expect("contiguous query");
    let mut starts: Vec<(f64, u32)> = ivf
        .probe(a, config.nprobe)
        .into_iter()
        .flat_map(|c| ivf.lists[c].iter().copied())
        .map(|k| (scorer.start_term(index.start_record(k as usize).row), k))
        .collect();
    starts.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    starts.truncate(config.k_d);

    let mut top = TopK::new(config.top_k);
    let mut docs = BTreeSet::new();
    for &(_, k) in &starts {
        let rec = index.start_record(k as usize);
        docs.insert(index.paragraphs()[rec.paragraph as usize].doc);
        scorer.expand(k as usize, &mut top);
    }
    Ok(Raw {
        cands: top.into_sorted(),
        docs,
    })
}

fn check_nonempty(index: &PhraseIndex) -> Result<()> {
    if index.n_start_records() == 0 {
        return Err(Error::EmptyIndex);
    }
    Ok(())
}

/// Scores every stored phrase.
pub fn exact_search(index: &PhraseIndex, query: &QueryVector, config: &SearchConfig) -> Result<SearchOutcome> {
    config.validate()?;
    check_nonempty(index)?;
    let raw = exact_raw(index, query, config)?;
    Ok(SearchOutcome {
        results: finish(index, raw.cands, Strategy::Exact),
        docs_visited: raw.docs.len(),
    })
}

/// Exact search restricted to the top `k_s` documents by sparse score.
pub fn sfs_search(index: &PhraseIndex, query: &QueryVector, config: &SearchConfig) -> Result<SearchOutcome> {
    config.validate()?;
    check_nonempty(index)?;
    let raw = sfs_raw(index, query, config)?;
    Ok(SearchOutcome {
        results: finish(index, raw.cands, Strategy::Sfs),
        docs_visited: raw.docs.len(),
    })
}

/// Start-first dense search: probe `nprobe` IVF cells, keep the top `k_d`
/// starts by `a' . a`, then expand each to its best ends.
pub fn dfs_search(
    index: &PhraseIndex,
    ivf: &IvfIndex,
    query: &QueryVector,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    config.validate()?;
    check_nonempty(index)?;
    let raw = dfs_raw(index, ivf, query, config)?;
    Ok(SearchOutcome {
        results: finish(index, raw.cands, Strategy::Dfs),
        docs_visited: raw.docs.len(),
    })
}

/// Union of the SFS and DFS results, deduplicated and reranked.
pub fn hybrid_search(
    index: &PhraseIndex,
    ivf: &IvfIndex,
    query: &QueryVector,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    config.validate()?;
    check_nonempty(index)?;
    let sfs = sfs_raw(index, query, config)?;
    let dfs = dfs_raw(index, ivf, query, config)?;
    let mut found: HashMap<(u32, u32, u32, u32), (Candidate, Strategy)> = HashMap::new();
    for (cands, st) in [(&sfs.cands, Strategy::Sfs), (&dfs.cands, Strategy::Dfs)] {
        for c in cands {
            found
                .entry(c.key())
                .and_modify(|e| e.1 = Strategy::Hybrid)
                .or_insert((*c, st));
        }
    }
    let mut merged: Vec<(Candidate, Strategy)> = found.into_values().collect();
    merged.sort_by(|x, y| x.0.rank(&y.0));
    merged.truncate(config.top_k);
    let results = merged
        .into_iter()
        .map(|(c, st)| finish(index, vec![c], st).pop().expect("one result"))
        .collect();
    Ok(SearchOutcome {
        results,
        docs_visited: sfs.docs.union(&dfs.docs).count(),
    })
}

/// Dispatches on `config.strategy`, using the index's stored IVF.
pub fn search(index: &PhraseIndex, query: &QueryVector, config: &SearchConfig) -> Result<SearchOutcome> {
    match config.strategy {
        Strategy::Exact => exact_search(index, query, config),
        Strategy::Sfs => sfs_search(index, query, config),
        Strategy::Dfs => dfs_search(index, index.ivf().ok_or(Error::MissingIvf)?, query, config),
        Strategy::Hybrid => hybrid_search(index, index.ivf().ok_or(Error::MissingIvf)?, query, config),
    }
}
