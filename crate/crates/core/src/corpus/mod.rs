//! Corpus ingestion, tokenization and candidate span enumeration.
//!
//! A corpus is a list of documents, each an ordered list of paragraphs. Spans
//! never cross a paragraph boundary.

mod qa;
mod tokenize;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use qa::{load_qa, parse_qa, QaExample};
pub use tokenize::{slice_chars, tokenize, Token};

/// Default maximum span length, in tokens.
pub const DEFAULT_MAX_SPAN_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Paragraph {
    pub raw_text: String,
    pub tokens: Vec<Token>,
}

impl Paragraph {
    pub fn new(raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let tokens = tokenize(&raw_text);
        Paragraph { raw_text, tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Character range covered by tokens `i..=j`.
    pub fn span_chars(&self, i: usize, j: usize) -> (usize, usize) {
        (self.tokens[i].char_start, self.tokens[j].char_end)
    }

    pub fn span_text(&self, i: usize, j: usize) -> &str {
        let (s, e) = self.span_chars(i, j);
        slice_chars(&self.raw_text, s, e)
    }

    /// Smallest token span covering the character range `[start, end)`.
    pub fn token_span_for_chars(&self, start: usize, end: usize) -> Option<(usize, usize)> {
        let i = self.tokens.iter().position(|t| t.char_end > start)?;
        let j = self.tokens.iter().rposition(|t| t.char_start < end)?;
        (i <= j).then_some((i, j))
    }

    /// First token span whose lowercased surfaces equal those of `answer`.
    pub fn find_answer(&self, answer: &str) -> Option<(usize, usize)> {
        let needle: Vec<String> = tokenize(answer).iter().map(Token::normalized).collect();
        if needle.is_empty() || needle.len() > self.tokens.len() {
            return None;
        }
        let hay: Vec<String> = self.tokens.iter().map(Token::normalized).collect();
        hay.windows(needle.len())
            .position(|w| w == needle.as_slice())
            .map(|i| (i, i + needle.len() - 1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub paragraphs: Vec<Paragraph>,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, paragraphs: &[&str]) -> Self {
        Document {
            id: id.into(),
            title: title.into(),
            paragraphs: paragraphs.iter().map(|p| Paragraph::new(*p)).collect(),
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.paragraphs.iter().map(Paragraph::len).sum()
    }
}

/// A candidate answer span: tokens `i..=j` of one paragraph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpanRef {
    pub doc_id: String,
    pub para_idx: usize,
    pub i: usize,
    pub j: usize,
}

/// Number of spans of length at most `max_len` in a paragraph of `n_tokens`.
pub fn span_count(n_tokens: usize, max_len: usize) -> usize {
    (0..n_tokens).map(|i| max_len.min(n_tokens - i)).sum()
}

/// Token index pairs `(i, j)` with `j - i < max_len`, in lexicographic order.
pub fn span_pairs(n_tokens: usize, max_len: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n_tokens).flat_map(move |i| (i..(i + max_len).min(n_tokens)).map(move |j| (i, j)))
}

/// Lazily enumerates every span of length at most `max_len` in `para`.
pub fn enumerate_spans<'a>(
    doc_id: &'a str,
    para_idx: usize,
    para: &Paragraph,
    max_len: usize,
) -> impl Iterator<Item = SpanRef> + 'a {
    assert!(max_len >= 1, "max span length must be at least 1");
    span_pairs(para.len(), max_len).map(move |(i, j)| SpanRef {
        doc_id: doc_id.to_string(),
        para_idx,
        i,
        j,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    /// One `{"id", "title", "paragraphs": [..]}` object per line.
    #[default]
    JsonLines,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocumentRecord {
    id: String,
    #[serde(default)]
    title: String,
    paragraphs: Vec<String>,
}

/// Immutable set of documents addressed by ordinal or id.
#[derive(Debug, Clone, Default)]
pub struct CorpusStore {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl CorpusStore {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut by_id = HashMap::with_capacity(docs.len());
        for (ord, doc) in docs.iter().enumerate() {
            if doc.paragraphs.is_empty() {
                return Err(Error::NoParagraphs(doc.id.clone()));
            }
            if by_id.insert(doc.id.clone(), ord).is_some() {
                return Err(Error::DuplicateDocument(doc.id.clone()));
            }
        }
        Ok(CorpusStore { docs, by_id })
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, ordinal: usize) -> Option<&Document> {
        self.docs.get(ordinal)
    }

    pub fn ordinal(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn by_id(&self, id: &str) -> Option<&Document> {
        self.ordinal(id).map(|o| &self.docs[o])
    }

    pub fn n_tokens(&self) -> usize {
        self.docs.iter().map(Document::n_tokens).sum()
    }

    pub fn paragraph(&self, span: &SpanRef) -> Option<&Paragraph> {
        self.by_id(&span.doc_id)?.paragraphs.get(span.para_idx)
    }

    /// Writes the corpus back out as JSON lines.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for doc in &self.docs {
            let record = DocumentRecord {
                id: doc.id.clone(),
                title: doc.title.clone(),
                paragraphs: doc.paragraphs.iter().map(|p| p.raw_text.clone()).collect(),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn parse_corpus<R: BufRead>(reader: R, format: CorpusFormat) -> Result<CorpusStore> {
    let CorpusFormat::JsonLines = format;
    let mut docs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DocumentRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        docs.push(Document {
            id: record.id,
            title: record.title,
            paragraphs: record.paragraphs.into_iter().map(Paragraph::new).collect(),
        });
    }
    CorpusStore::from_documents(docs)
}

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<CorpusStore> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), format)
}
