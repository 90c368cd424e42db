//! Externally produced token encodings.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic "PHXEMB01" | version u32 | d u32 | n_records u32
//! n_records x { id_len u32 | id utf-8 | T u32 | T*d f32, row-major }
//! ```
//!
//! A record holds every token of one document, paragraphs concatenated in
//! order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array2};

use super::{Encoder, EncoderConfig, TokenMatrix, ToyEncoder};
use crate::corpus::{CorpusStore, Token};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"PHXEMB01";
const EMBEDDING_VERSION: u32 = 1;

pub fn write_precomputed<'a>(
    path: impl AsRef<Path>,
    d: usize,
    records: impl IntoIterator<Item = (&'a str, &'a Array2<f64>)>,
) -> Result<()> {
    let path = path.as_ref();
    let records: Vec<_> = records.into_iter().collect();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(io);
    write(EMBEDDING_MAGIC)?;
    write(&EMBEDDING_VERSION.to_le_bytes())?;
    write(&(d as u32).to_le_bytes())?;
    write(&(records.len() as u32).to_le_bytes())?;
    for (id, m) in records {
        if m.ncols() != d {
            return Err(Error::Shape(format!("record {id:?} has width {}", m.ncols())));
        }
        write(&(id.len() as u32).to_le_bytes())?;
        write(id.as_bytes())?;
        write(&(m.nrows() as u32).to_le_bytes())?;
        for v in m.iter() {
            write(&(*v as f32).to_le_bytes())?;
        }
    }
    out.flush().map_err(io)
}

/// Reads a precomputed-embedding file into `doc id -> T x d` matrices.
pub fn read_precomputed(path: impl AsRef<Path>) -> Result<(usize, HashMap<String, Array2<f64>>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let bad = |m: String| Error::format("embeddings", m);
    let read_u32 = |input: &mut BufReader<File>| -> Result<u32> {
        let mut b = [0u8; 4];
        input.read_exact(&mut b).map_err(|e| bad(e.to_string()))?;
        Ok(u32::from_le_bytes(b))
    };
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
    if &magic != EMBEDDING_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != EMBEDDING_VERSION {
        return Err(Error::Version {
            found: version,
            expected: EMBEDDING_VERSION,
        });
    }
    let d = read_u32(&mut input)? as usize;
    let n = read_u32(&mut input)?;
    let mut out = HashMap::with_capacity(n as usize);
    for _ in 0..n {
        let id_len = read_u32(&mut input)? as usize;
        let mut id = vec![0u8; id_len];
        input.read_exact(&mut id).map_err(|e| bad(e.to_string()))?;
        let id = String::from_utf8(id).map_err(|e| bad(e.to_string()))?;
        let t = read_u32(&mut input)? as usize;
        let mut buf = vec![0u8; t * d * 4];
        input.read_exact(&mut buf).map_err(|e| bad(e.to_string()))?;
        let vals = buf
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let m = Array2::from_shape_vec((t, d), vals).map_err(|e| bad(e.to_string()))?;
        if out.insert(id.clone(), m).is_some() {
            return Err(bad(format!("duplicate record {id:?}")));
        }
    }
    Ok((d, out))
}

/// Serves document encodings from a precomputed file and delegates
/// questions to a toy encoder of the same width.
#[derive(Debug, Clone)]
pub struct PrecomputedEncoder {
    config: EncoderConfig,
    /// doc id -> (matrix, paragraph start offsets)
    docs: HashMap<String, (Array2<f64>, Vec<usize>)>,
    question: ToyEncoder,
}

impl PrecomputedEncoder {
    pub fn new(
        records: HashMap<String, Array2<f64>>,
        corpus: &CorpusStore,
        question: ToyEncoder,
    ) -> Result<Self> {
        let config = question.config();
        let mut docs = HashMap::with_capacity(records.len());
        for (id, m) in records {
            let doc = corpus.by_id(&id).ok_or_else(|| Error::UnknownDocument(id.clone()))?;
            if m.ncols() != config.d {
                return Err(Error::Shape(format!(
                    "record {id:?} has width {}, encoder expects {}",
                    m.ncols(),
                    config.d
                )));
            }
            if m.nrows() != doc.n_tokens() {
                return Err(Error::Shape(format!(
                    "record {id:?} has {} rows for {} tokens",
                    m.nrows(),
                    doc.n_tokens()
                )));
            }
            let offsets = doc
                .paragraphs
                .iter()
                .scan(0, |acc, p| {
                    let start = *acc;
                    *acc += p.len();
                    Some(start)
                })
                .collect();
            docs.insert(id, (m, offsets));
        }
        Ok(PrecomputedEncoder {
            config,
            docs,
            question,
        })
    }

    pub fn from_file(path: impl AsRef<Path>, corpus: &CorpusStore, question: ToyEncoder) -> Result<Self> {
        let (_, records) = read_precomputed(path)?;
        Self::new(records, corpus, question)
    }

    pub fn question_encoder(&self) -> &ToyEncoder {
        &self.question
    }
}

impl Encoder for PrecomputedEncoder {
    fn config(&self) -> EncoderConfig {
        self.config
    }

    fn encode_paragraph(&self, doc_id: &str, para_idx: usize, tokens: &[Token]) -> Result<TokenMatrix> {
        let (m, offsets) = self
            .docs
            .get(doc_id)
            .ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))?;
        let start = *offsets
            .get(para_idx)
            .ok_or_else(|| Error::OutOfRange(format!("paragraph {para_idx} of {doc_id:?}")))?;
        let rows = m.slice(s![start..start + tokens.len(), ..]).to_owned();
        TokenMatrix::new(self.config, rows)
    }

    fn encode_question(&self, tokens: &[Token]) -> Result<TokenMatrix> {
        self.question.encode_question(tokens)
    }
}
