use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::SparseVector;
use crate::corpus::{CorpusStore, Document, Paragraph, Token};
use crate::error::{Error, Result};

/// 2^24 hashed bins.
pub const DEFAULT_BINS: u32 = 1 << 24;

/// Stable 64-bit FNV-1a hash of an n-gram, reduced to `n_bins`.
pub fn hash_ngram(ngram: &str, n_bins: u32) -> u32 {
    let mut h = FnvHasher::default();
    h.write(ngram.as_bytes());
    (h.finish() % u64::from(n_bins)) as u32
}

/// Document frequencies over hashed unigrams and bigrams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel {
    pub n_bins: u32,
    pub doc_count: u64,
    pub doc_freq: BTreeMap<u32, u64>,
}

impl TfIdfModel {
    /// Hashed unigram and bigram bins of one token sequence, with repetition.
    pub fn ngram_bins(&self, tokens: &[Token]) -> Vec<u32> {
        let lower: Vec<String> = tokens.iter().map(Token::normalized).collect();
        let mut bins = Vec::with_capacity(lower.len() * 2);
        for (n, word) in lower.iter().enumerate() {
            bins.push(hash_ngram(word, self.n_bins));
            if let Some(next) = lower.get(n + 1) {
                bins.push(hash_ngram(&format!("{word} {next}"), self.n_bins));
            }
        }
        bins
    }

    pub fn idf(&self, bin: u32) -> f64 {
        let n = self.doc_count as f64;
        let df = self.doc_freq.get(&bin).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }

    /// tf-idf over several token sequences (bigrams never cross sequences),
    /// unit-normalized.
    pub fn embed_sequences<'a>(&self, seqs: impl IntoIterator<Item = &'a [Token]>) -> SparseVector {
        let mut tf: BTreeMap<u32, u64> = BTreeMap::new();
        for seq in seqs {
            for bin in self.ngram_bins(seq) {
                *tf.entry(bin).or_default() += 1;
            }
        }
        let entries = tf
            .into_iter()
            .map(|(bin, count)| (bin, count as f64 * self.idf(bin)))
            .filter(|&(_, w)| w != 0.0)
            .collect();
        SparseVector::from_sorted(entries).normalized()
    }

    pub fn embed_paragraph(&self, para: &Paragraph) -> SparseVector {
        self.embed_sequences([para.tokens.as_slice()])
    }

    pub fn embed_document(&self, doc: &Document) -> SparseVector {
        self.embed_sequences(doc.paragraphs.iter().map(|p| p.tokens.as_slice()))
    }

    pub fn embed_text(&self, text: &str) -> SparseVector {
        let tokens = crate::corpus::tokenize(text);
        self.embed_sequences([tokens.as_slice()])
    }

    /// FNV digest of the model contents, recorded in index manifests.
    pub fn digest(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write_u32(self.n_bins);
        h.write_u64(self.doc_count);
        for (&bin, &df) in &self.doc_freq {
            h.write_u32(bin);
            h.write_u64(df);
        }
        h.finish()
    }
}

/// A paragraph or a whole document.
#[derive(Debug, Clone, Copy)]
pub enum TextUnit<'a> {
    Paragraph(&'a Paragraph),
    Document(&'a Document),
}

impl<'a> From<&'a Paragraph> for TextUnit<'a> {
    fn from(p: &'a Paragraph) -> Self {
        TextUnit::Paragraph(p)
    }
}

impl<'a> From<&'a Document> for TextUnit<'a> {
    fn from(d: &'a Document) -> Self {
        TextUnit::Document(d)
    }
}

pub fn embed_text_sparse<'a>(unit: impl Into<TextUnit<'a>>, model: &TfIdfModel) -> SparseVector {
    match unit.into() {
        TextUnit::Paragraph(p) => model.embed_paragraph(p),
        TextUnit::Document(d) => model.embed_document(d),
    }
}

pub fn fit_tfidf(corpus: &CorpusStore) -> Result<TfIdfModel> {
    fit_tfidf_with_bins(corpus, DEFAULT_BINS)
}

pub fn fit_tfidf_with_bins(corpus: &CorpusStore, n_bins: u32) -> Result<TfIdfModel> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut model = TfIdfModel {
        n_bins,
        doc_count: corpus.len() as u64,
        doc_freq: BTreeMap::new(),
    };
    for doc in corpus.documents() {
        let mut bins: Vec<u32> = doc
            .paragraphs
            .iter()
            .flat_map(|p| model.ngram_bins(&p.tokens))
            .collect();
        bins.sort_unstable();
        bins.dedup();
        for bin in bins {
            *model.doc_freq.entry(bin).or_default() += 1;
        }
    }
    Ok(model)
}
