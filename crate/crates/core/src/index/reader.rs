use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::build::{FLAG_END, FLAG_START, NO_ROW};
use super::format::{ByteReader, Section, FORMAT_VERSION};
use super::quant::QuantizationParams;
use super::{files, magic, IndexManifest};
use crate::corpus::{parse_corpus, CorpusFormat, CorpusStore, SpanRef};
use crate::dense::{ToyEncoder, ToyEncoderParams};
use crate::error::{Error, Result};
use crate::search::IvfIndex;
use crate::sparse::{InvertedIndex, SparseVector, TfIdfModel};
use crate::training::FilterModel;

const PARA_ENTRY: usize = 36;
const START_RECORD: usize = 24;
const PHRASES_HEADER: usize = 32;
const ROWS_HEADER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParagraphEntry {
    pub doc: u32,
    pub para: u32,
    pub n_tokens: u32,
    /// Index of the paragraph's first token in the global token arrays.
    pub token_base: u64,
    /// First start record of the paragraph.
    pub start_base: u64,
    pub n_starts: u64,
}

/// A surviving start token together with its run of phrase ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StartRecord {
    pub paragraph: u32,
    pub i: u32,
    /// Row in `starts.bin` (and `ends.bin`) of token `i`.
    pub row: u32,
    pub n_ends: u32,
    /// Position of the first phrase of this start in `coherency.bin`.
    pub coh_offset: u64,
}

/// One stored phrase with pointers to its shared vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseRecord {
    pub start_ptr: u32,
    pub end_ptr: u32,
    pub coherency: f32,
    pub span: SpanRef,
    pub doc: u32,
    pub paragraph: u32,
}

/// Read-only handle over an index directory.
///
/// Dense sections are memory-mapped; sparse data, the corpus and the small
/// models are held in memory.
#[derive(Debug)]
pub struct PhraseIndex {
    dir: PathBuf,
    manifest: IndexManifest,
    corpus: CorpusStore,
    question_encoder: ToyEncoder,
    tfidf: TfIdfModel,
    doc_vectors: Vec<SparseVector>,
    para_vectors: Vec<SparseVector>,
    inverted: InvertedIndex,
    start_quant: QuantizationParams,
    end_quant: QuantizationParams,
    filter: FilterModel,
    ivf: Option<IvfIndex>,
    starts: Section,
    ends: Section,
    phrases: Section,
    coherency: Section,
    paragraphs: Vec<ParagraphEntry>,
    tokens_off: usize,
    flags_off: usize,
    records_off: usize,
    n_tokens: usize,
    n_records: usize,
    d_b: usize,
}

fn read_sparse_vector(r: &mut ByteReader<'_>) -> Result<SparseVector> {
    let n = r.u32()? as usize;
    let mut entries = Vec::with_capacity(n);
    let mut prev = None;
    for _ in 0..n {
        let bin = r.u32()?;
        if prev.is_some_and(|p| p >= bin) {
            return Err(Error::format("sparse_docs", "unsorted sparse vector"));
        }
        prev = Some(bin);
        entries.push((bin, r.f64()?));
    }
    Ok(SparseVector::from_sorted(entries))
}

type SparseParts = (TfIdfModel, Vec<SparseVector>, Vec<SparseVector>);

fn read_sparse(payload: &[u8]) -> Result<SparseParts> {
    let mut r = ByteReader::new(payload, "sparse_docs");
    let n_bins = r.u32()?;
    let doc_count = r.u64()?;
    let n_df = r.usize()?;
    let mut doc_freq = BTreeMap::new();
    for _ in 0..n_df {
        let bin = r.u32()?;
        doc_freq.insert(bin, r.u64()?);
    }
    let n_docs = r.usize()?;
    let docs = (0..n_docs).map(|_| read_sparse_vector(&mut r)).collect::<Result<_>>()?;
    let n_paras = r.usize()?;
    let paras = (0..n_paras).map(|_| read_sparse_vector(&mut r)).collect::<Result<_>>()?;
    if !r.is_at_end() {
        return Err(Error::format("sparse_docs", "trailing bytes"));
    }
    Ok((
        TfIdfModel {
            n_bins,
            doc_count,
            doc_freq,
        },
        docs,
        paras,
    ))
}

fn read_postings(payload: &[u8]) -> Result<InvertedIndex> {
    let mut r = ByteReader::new(payload, "postings");
    let n_docs = r.usize()?;
    let n_bins = r.usize()?;
    let mut postings = BTreeMap::new();
    for _ in 0..n_bins {
        let bin = r.u32()?;
        let len = r.varint()? as usize;
        let mut list = Vec::with_capacity(len);
        let mut doc = 0u64;
        for _ in 0..len {
            doc += r.varint()?;
            if doc >= n_docs as u64 {
                return Err(Error::format("postings", "doc ordinal out of range"));
            }
            list.push((doc as u32, r.f64()?));
        }
        postings.insert(bin, list);
    }
    Ok(InvertedIndex::from_postings(n_docs, postings))
}

fn read_checked(dir: &Path, name: &str, manifest: &IndexManifest) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let info = manifest
        .sections
        .get(name)
        .ok_or_else(|| Error::format(name, "missing from manifest"))?;
    if info.bytes != bytes.len() as u64 || info.crc32 != crc32fast::hash(&bytes) {
        return Err(Error::Checksum(name.to_string()));
    }
    Ok(bytes)
}

fn open_section(dir: &Path, name: &'static str, magic: &[u8; 8], manifest: &IndexManifest) -> Result<Section> {
    let section = Section::open(&dir.join(name), name, magic)?;
    match manifest.sections.get(name) {
        Some(info) if info.bytes == (section.payload().len() + super::format::HEADER_LEN) as u64 => Ok(section),
        Some(_) => Err(Error::Checksum(name.to_string())),
        None => Err(Error::format(name, "missing from manifest")),
    }
}

/// Opens and validates an index directory.
pub fn load_index(dir: impl AsRef<Path>) -> Result<PhraseIndex> {
    PhraseIndex::open(dir.as_ref())
}

impl PhraseIndex {
    fn open(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(files::MANIFEST);
        let text = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: IndexManifest = serde_json::from_slice(&text)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: manifest.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let d_b = manifest.encoder.d_b;

        let corpus_bytes = read_checked(dir, files::CORPUS, &manifest)?;
        let corpus = parse_corpus(corpus_bytes.as_slice(), CorpusFormat::JsonLines)?;
        let encoder_bytes = read_checked(dir, files::ENCODER, &manifest)?;
        let question_encoder = ToyEncoder::new(ToyEncoderParams::read_from(encoder_bytes.as_slice())?)?;
        if question_encoder.params().config != manifest.encoder {
            return Err(Error::format("encoder", "config differs from manifest"));
        }

        let sparse = open_section(dir, files::SPARSE, magic::SPARSE, &manifest)?;
        let (tfidf, doc_vectors, para_vectors) = read_sparse(sparse.payload())?;
        if format!("{:016x}", tfidf.digest()) != manifest.sparse_digest {
            return Err(Error::format("sparse_docs", "model digest differs from manifest"));
        }
        let inverted = read_postings(open_section(dir, files::POSTINGS, magic::POSTINGS, &manifest)?.payload())?;

        let quant = open_section(dir, files::QUANT, magic::QUANT, &manifest)?;
        let mut qr = ByteReader::new(quant.payload(), "quant");
        let start_quant = QuantizationParams::read(&mut qr)?;
        let end_quant = QuantizationParams::read(&mut qr)?;
        if start_quant.dim() != d_b || end_quant.dim() != d_b {
            return Err(Error::format("quant", "width differs from d_b"));
        }

        let filter = FilterModel::read_from(open_section(dir, files::FILTER, magic::FILTER, &manifest)?.payload())?;
        let ivf = if manifest.sections.contains_key(files::IVF) {
            let s = open_section(dir, files::IVF, magic::IVF, &manifest)?;
            Some(IvfIndex::read(&mut ByteReader::new(s.payload(), "ivf"))?)
        } else {
            None
        };

        let starts = open_section(dir, files::STARTS, magic::STARTS, &manifest)?;
        let ends = open_section(dir, files::ENDS, magic::ENDS, &manifest)?;
        let phrases = open_section(dir, files::PHRASES, magic::PHRASES, &manifest)?;
        let coherency = open_section(dir, files::COHERENCY, magic::COHERENCY, &manifest)?;

        let counts = &manifest.counts;
        for (s, name) in [(&starts, "starts"), (&ends, "ends")] {
            let mut r = ByteReader::new(s.payload(), "rows");
            let (n, d) = (r.u64()?, r.usize()?);
            if n != counts.start_rows || d != d_b || s.payload().len() != ROWS_HEADER + n as usize * d_b {
                return Err(Error::format(name, "row count or width differs from manifest"));
            }
        }
        let mut cr = ByteReader::new(coherency.payload(), "coherency");
        if cr.u64()? != counts.phrases || coherency.payload().len() != 8 + 4 * counts.phrases as usize {
            return Err(Error::format("coherency", "length differs from manifest"));
        }

        let mut pr = ByteReader::new(phrases.payload(), "phrases");
        let n_paragraphs = pr.usize()?;
        let n_tokens = pr.usize()?;
        let n_records = pr.usize()?;
        let max_len = pr.usize()?;
        if n_paragraphs as u64 != counts.paragraphs
            || n_tokens as u64 != counts.tokens
            || n_records as u64 != counts.start_records
            || max_len != manifest.max_span_len
        {
            return Err(Error::format("phrases", "header differs from manifest"));
        }
        let mut paragraphs = Vec::with_capacity(n_paragraphs);
        for _ in 0..n_paragraphs {
            paragraphs.push(ParagraphEntry {
                doc: pr.u32()?,
                para: pr.u32()?,
                n_tokens: pr.u32()?,
                token_base: pr.u64()?,
                start_base: pr.u64()?,
                n_starts: pr.u64()?,
            });
        }
        let tokens_off = PHRASES_HEADER + n_paragraphs * PARA_ENTRY;
        let flags_off = tokens_off + 4 * n_tokens;
        let records_off = flags_off + n_tokens;
        if phrases.payload().len() != records_off + START_RECORD * n_records {
            return Err(Error::format("phrases", "length differs from header"));
        }
        if doc_vectors.len() != corpus.len() || para_vectors.len() != n_paragraphs || inverted.n_docs() != corpus.len() {
            return Err(Error::format("sparse_docs", "vector counts differ from corpus"));
        }

        Ok(PhraseIndex {
            dir: dir.to_path_buf(),
            manifest,
            corpus,
            question_encoder,
            tfidf,
            doc_vectors,
            para_vectors,
            inverted,
            start_quant,
            end_quant,
            filter,
            ivf,
            starts,
            ends,
            phrases,
            coherency,
            paragraphs,
            tokens_off,
            flags_off,
            records_off,
            n_tokens,
            n_records,
            d_b,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    pub fn corpus(&self) -> &CorpusStore {
        &self.corpus
    }

    pub fn question_encoder(&self) -> &ToyEncoder {
        &self.question_encoder
    }

    pub fn tfidf(&self) -> &TfIdfModel {
        &self.tfidf
    }

    pub fn inverted(&self) -> &InvertedIndex {
        &self.inverted
    }

    pub fn doc_vector(&self, doc: usize) -> &SparseVector {
        &self.doc_vectors[doc]
    }

    /// Combined document and paragraph vector of paragraph entry `paragraph`.
    pub fn paragraph_vector(&self, paragraph: usize) -> &SparseVector {
        &self.para_vectors[paragraph]
    }

    pub fn start_quant(&self) -> &QuantizationParams {
        &self.start_quant
    }

    pub fn end_quant(&self) -> &QuantizationParams {
        &self.end_quant
    }

    pub fn filter(&self) -> &FilterModel {
        &self.filter
    }

    pub fn ivf(&self) -> Option<&IvfIndex> {
        self.ivf.as_ref()
    }

    pub fn d_b(&self) -> usize {
        self.d_b
    }

    pub fn max_span_len(&self) -> usize {
        self.manifest.max_span_len
    }

    pub fn paragraphs(&self) -> &[ParagraphEntry] {
        &self.paragraphs
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn n_start_records(&self) -> usize {
        self.n_records
    }

    pub fn n_rows(&self) -> usize {
        self.manifest.counts.start_rows as usize
    }

    fn payload_u32(&self, off: usize) -> u32 {
        u32::from_le_bytes(self.phrases.payload()[off..off + 4].try_into().unwrap())
    }

    /// Row of global token `t`, or `None` when both filters dropped it.
    pub fn token_row(&self, t: usize) -> Option<u32> {
        let r = self.payload_u32(self.tokens_off + 4 * t);
        (r != NO_ROW).then_some(r)
    }

    /// Whether global token `t` survived the (start, end) filters.
    pub fn token_survives(&self, t: usize) -> (bool, bool) {
        let f = self.phrases.payload()[self.flags_off + t];
        (f & FLAG_START != 0, f & FLAG_END != 0)
    }

    pub fn start_record(&self, k: usize) -> StartRecord {
        let off = self.records_off + START_RECORD * k;
        let p = &self.phrases.payload()[off..off + START_RECORD];
        let u = |a: usize| u32::from_le_bytes(p[a..a + 4].try_into().unwrap());
        StartRecord {
            paragraph: u(0),
            i: u(4),
            row: u(8),
            n_ends: u(12),
            coh_offset: u64::from_le_bytes(p[16..24].try_into().unwrap()),
        }
    }

    /// Quantized start row `row` as raw bytes (reinterpret as `i8`).
    pub fn start_row_bytes(&self, row: usize) -> &[u8] {
        let off = ROWS_HEADER + row * self.d_b;
        &self.starts.payload()[off..off + self.d_b]
    }

    pub fn end_row_bytes(&self, row: usize) -> &[u8] {
        let off = ROWS_HEADER + row * self.d_b;
        &self.ends.payload()[off..off + self.d_b]
    }

    pub fn start_row(&self, row: usize) -> Vec<i8> {
        self.start_row_bytes(row).iter().map(|&b| b as i8).collect()
    }

    pub fn end_row(&self, row: usize) -> Vec<i8> {
        self.end_row_bytes(row).iter().map(|&b| b as i8).collect()
    }

    pub fn dequantized_start(&self, row: usize) -> Vec<f64> {
        self.start_quant.dequantize(&self.start_row(row))
    }

    pub fn dequantized_end(&self, row: usize) -> Vec<f64> {
        self.end_quant.dequantize(&self.end_row(row))
    }

    pub fn coherency(&self, k: usize) -> f32 {
        let off = 8 + 4 * k;
        f32::from_le_bytes(self.coherency.payload()[off..off + 4].try_into().unwrap())
    }

    /// Calls `f(j, end_row, coherency)` for every phrase of start record `rec`.
    pub fn for_each_end(&self, rec: &StartRecord, mut f: impl FnMut(usize, u32, f32)) {
        let entry = &self.paragraphs[rec.paragraph as usize];
        let t = entry.n_tokens as usize;
        let base = entry.token_base as usize;
        let i = rec.i as usize;
        let mut k = rec.coh_offset as usize;
        for j in i..t.min(i + self.max_span_len()) {
            if self.token_survives(base + j).1 {
                let row = self.token_row(base + j).expect("surviving end has a row");
                f(j, row, self.coherency(k));
                k += 1;
            }
        }
        debug_assert_eq!(k - rec.coh_offset as usize, rec.n_ends as usize);
    }

    pub fn span_ref(&self, paragraph: usize, i: usize, j: usize) -> SpanRef {
        let entry = &self.paragraphs[paragraph];
        SpanRef {
            doc_id: self.corpus.get(entry.doc as usize).unwrap().id.clone(),
            para_idx: entry.para as usize,
            i,
            j,
        }
    }

    /// Every stored phrase, in storage order.
    pub fn phrases(&self) -> impl Iterator<Item = PhraseRecord> + '_ {
        (0..self.n_records).flat_map(move |k| {
            let rec = self.start_record(k);
            let mut out = Vec::with_capacity(rec.n_ends as usize);
            self.for_each_end(&rec, |j, end_row, coherency| {
                let p = rec.paragraph as usize;
                out.push(PhraseRecord {
                    start_ptr: rec.row,
                    end_ptr: end_row,
                    coherency,
                    span: self.span_ref(p, rec.i as usize, j),
                    doc: self.paragraphs[p].doc,
                    paragraph: rec.paragraph,
                });
            });
            out
        })
    }
}
