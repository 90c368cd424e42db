use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use tracing::info;

use super::format::{encode_section, ByteWriter, FORMAT_VERSION};
use super::quant::{QuantizationParams, DEFAULT_RESERVOIR};
use super::{files, magic, IndexCounts, IndexManifest, SectionInfo};
use crate::corpus::{CorpusStore, DEFAULT_MAX_SPAN_LEN};
use crate::dense::{Encoder, TokenMatrix, ToyEncoderParams};
use crate::error::{Error, Result};
use crate::search::{kmeans_train, IVF_MAX_CLUSTERS};
use crate::sparse::{combine_doc_para, InvertedIndex, SparseVector, TfIdfModel};
use crate::training::FilterModel;

pub(crate) const NO_ROW: u32 = u32::MAX;
pub(crate) const FLAG_START: u8 = 1;
pub(crate) const FLAG_END: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IvfConfig {
    /// `None` means `min(start records, 2^20)`.
    pub n_clusters: Option<usize>,
    pub seed: u64,
}

impl Default for IvfConfig {
    fn default() -> Self {
        IvfConfig {
            n_clusters: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub max_span_len: usize,
    pub reservoir_size: usize,
    pub seed: u64,
    /// Builds the optional `ivf.bin` section when set.
    pub ivf: Option<IvfConfig>,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            max_span_len: DEFAULT_MAX_SPAN_LEN,
            reservoir_size: DEFAULT_RESERVOIR,
            seed: 0,
            ivf: Some(IvfConfig::default()),
        }
    }
}

/// Tokenwise filter decisions for one paragraph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurvivalMask {
    pub start: Vec<bool>,
    pub end: Vec<bool>,
}

impl SurvivalMask {
    /// Fraction of tokens kept as (start, end).
    pub fn survival(&self) -> (f64, f64) {
        let frac = |v: &[bool]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().filter(|&&k| k).count() as f64 / v.len() as f64
            }
        };
        (frac(&self.start), frac(&self.end))
    }
}

pub fn apply_filter(h: &TokenMatrix, filter: &FilterModel) -> SurvivalMask {
    SurvivalMask {
        start: h.starts().rows().into_iter().map(|a| filter.keeps_start(a)).collect(),
        end: h.ends().rows().into_iter().map(|b| filter.keeps_end(b)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub counts: IndexCounts,
    pub start_survival: f64,
    pub end_survival: f64,
    pub bytes_on_disk: u64,
}

struct ParagraphEntryBuf {
    doc: u32,
    para: u32,
    n_tokens: u32,
    token_base: u64,
    start_base: u64,
    n_starts: u64,
}

struct StartRecordBuf {
    paragraph: u32,
    i: u32,
    row: u32,
    n_ends: u32,
    coh_offset: u64,
}

struct Collected {
    paragraphs: Vec<ParagraphEntryBuf>,
    token_rows: Vec<u32>,
    token_flags: Vec<u8>,
    starts: Vec<f64>,
    ends: Vec<f64>,
    records: Vec<StartRecordBuf>,
    coherency: Vec<f32>,
    start_tokens: u64,
    end_tokens: u64,
}

fn collect(corpus: &CorpusStore, encoder: &dyn Encoder, filter: &FilterModel, max_len: usize) -> Result<Collected> {
    let cfg = encoder.config();
    let d_b = cfg.d_b;
    let mut c = Collected {
        paragraphs: Vec::new(),
        token_rows: Vec::new(),
        token_flags: Vec::new(),
        starts: Vec::new(),
        ends: Vec::new(),
        records: Vec::new(),
        coherency: Vec::new(),
        start_tokens: 0,
        end_tokens: 0,
    };
    for (ord, doc) in corpus.documents().iter().enumerate() {
        for (p, para) in doc.paragraphs.iter().enumerate() {
            let t = para.len();
            let pid = c.paragraphs.len() as u32;
            let token_base = c.token_rows.len() as u64;
            let start_base = c.records.len() as u64;
            if t > 0 {
                let h = encoder.encode_paragraph(&doc.id, p, &para.tokens)?;
                if h.config() != cfg || h.rows() != t {
                    return Err(Error::Shape(format!(
                        "encoder returned {} rows of width {} for a {t}-token paragraph",
                        h.rows(),
                        h.config().d
                    )));
                }
                let mask = apply_filter(&h, filter);
                let mut rows = vec![NO_ROW; t];
                for k in 0..t {
                    let flags = u8::from(mask.start[k]) * FLAG_START | u8::from(mask.end[k]) * FLAG_END;
                    c.token_flags.push(flags);
                    if flags != 0 {
                        rows[k] = (c.starts.len() / d_b) as u32;
                        c.starts.extend(h.starts().row(k).iter());
                        c.ends.extend(h.ends().row(k).iter());
                    }
                }
                c.start_tokens += mask.start.iter().filter(|&&s| s).count() as u64;
                c.end_tokens += mask.end.iter().filter(|&&e| e).count() as u64;
                let (h3, h4) = (h.coh_starts(), h.coh_ends());
                for i in (0..t).filter(|&i| mask.start[i]) {
                    let coh_offset = c.coherency.len() as u64;
                    for j in (i..t.min(i + max_len)).filter(|&j| mask.end[j]) {
                        c.coherency.push(h3.row(i).dot(&h4.row(j)) as f32);
                    }
                    let n_ends = (c.coherency.len() as u64 - coh_offset) as u32;
                    if n_ends > 0 {
                        c.records.push(StartRecordBuf {
                            paragraph: pid,
                            i: i as u32,
                            row: rows[i],
                            n_ends,
                            coh_offset,
                        });
                    }
                }
                c.token_rows.extend(rows);
            }
            c.paragraphs.push(ParagraphEntryBuf {
                doc: ord as u32,
                para: p as u32,
                n_tokens: t as u32,
                token_base,
                start_base,
                n_starts: c.records.len() as u64 - start_base,
            });
        }
    }
    Ok(c)
}

fn write_rows(rows: ArrayView2<'_, f64>, params: &QuantizationParams) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.u64(rows.nrows() as u64);
    w.u64(rows.ncols() as u64);
    for row in rows.rows() {
        let q = params.quantize(row.as_slice().expect("standard layout"));
        w.bytes(&q.iter().map(|&v| v as u8).collect::<Vec<_>>());
    }
    w.buf
}

fn write_sparse_vector(w: &mut ByteWriter, v: &SparseVector) {
    w.u32(v.len() as u32);
    for &(bin, weight) in v.entries() {
        w.u32(bin);
        w.f64(weight);
    }
}

fn sparse_payload(tfidf: &TfIdfModel, docs: &[SparseVector], paras: &[SparseVector]) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.u32(tfidf.n_bins);
    w.u64(tfidf.doc_count);
    w.u64(tfidf.doc_freq.len() as u64);
    for (&bin, &df) in &tfidf.doc_freq {
        w.u32(bin);
        w.u64(df);
    }
    w.u64(docs.len() as u64);
    docs.iter().for_each(|v| write_sparse_vector(&mut w, v));
    w.u64(paras.len() as u64);
    paras.iter().for_each(|v| write_sparse_vector(&mut w, v));
    w.buf
}

/// Postings with delta-encoded doc ordinals.
fn postings_payload(inv: &InvertedIndex) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.u64(inv.n_docs() as u64);
    w.u64(inv.postings().len() as u64);
    for (&bin, list) in inv.postings() {
        w.u32(bin);
        w.varint(list.len() as u64);
        let mut prev = 0u32;
        for &(doc, weight) in list {
            w.varint(u64::from(doc - prev));
            w.f64(weight);
            prev = doc;
        }
    }
    w.buf
}

fn phrases_payload(c: &Collected, max_len: usize) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.u64(c.paragraphs.len() as u64);
    w.u64(c.token_rows.len() as u64);
    w.u64(c.records.len() as u64);
    w.u64(max_len as u64);
    for p in &c.paragraphs {
        w.u32(p.doc);
        w.u32(p.para);
        w.u32(p.n_tokens);
        w.u64(p.token_base);
        w.u64(p.start_base);
        w.u64(p.n_starts);
    }
    c.token_rows.iter().for_each(|&r| w.u32(r));
    w.bytes(&c.token_flags);
    for r in &c.records {
        w.u32(r.paragraph);
        w.u32(r.i);
        w.u32(r.row);
        w.u32(r.n_ends);
        w.u64(r.coh_offset);
    }
    w.buf
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], sections: &mut BTreeMap<String, SectionInfo>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    sections.insert(
        name.to_string(),
        SectionInfo {
            bytes: bytes.len() as u64,
            crc32: crc32fast::hash(bytes),
        },
    );
    Ok(())
}

fn staging_dir(out: &Path) -> PathBuf {
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Builds an index directory at `out`, replacing any previous one.
///
/// Paragraphs are encoded by `encoder`; `question_encoder` is stored so the
/// index can embed questions on its own. All files are written to a staging
/// directory which is renamed into place last.
pub fn build_index(
    corpus: &CorpusStore,
    encoder: &dyn Encoder,
    question_encoder: &ToyEncoderParams,
    tfidf: &TfIdfModel,
    filter: &FilterModel,
    config: &IndexConfig,
    out: &Path,
) -> Result<BuildReport> {
    let cfg = encoder.config();
    cfg.validate()?;
    if question_encoder.config != cfg {
        return Err(Error::Config("question encoder config differs from paragraph encoder".into()));
    }
    if filter.dim() != cfg.d_b {
        return Err(Error::Config(format!("filter width {} differs from d_b {}", filter.dim(), cfg.d_b)));
    }
    if config.max_span_len == 0 || config.reservoir_size == 0 {
        return Err(Error::Config("max_span_len and reservoir_size must be positive".into()));
    }

    let c = collect(corpus, encoder, filter, config.max_span_len)?;
    if c.records.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let n_rows = c.starts.len() / cfg.d_b;
    let starts = Array2::from_shape_vec((n_rows, cfg.d_b), c.starts.clone()).expect("row-major rows");
    let ends = Array2::from_shape_vec((n_rows, cfg.d_b), c.ends.clone()).expect("row-major rows");
    let start_quant = QuantizationParams::fit_reservoir(starts.view(), config.reservoir_size, config.seed)?;
    let end_quant = QuantizationParams::fit_reservoir(ends.view(), config.reservoir_size, config.seed ^ 1)?;

    let doc_vectors: Vec<SparseVector> = corpus.documents().iter().map(|d| tfidf.embed_document(d)).collect();
    let para_vectors: Vec<SparseVector> = c
        .paragraphs
        .iter()
        .map(|p| {
            let para = &corpus.get(p.doc as usize).unwrap().paragraphs[p.para as usize];
            combine_doc_para(&doc_vectors[p.doc as usize], &tfidf.embed_paragraph(para))
        })
        .collect();
    let inverted = InvertedIndex::build(&doc_vectors);

    let ivf = match &config.ivf {
        Some(ivf_cfg) => {
            let rows: Vec<Vec<f64>> = c
                .records
                .iter()
                .map(|r| {
                    let k = r.row as usize;
                    start_quant.dequantize(&start_quant.quantize(starts.row(k).as_slice().unwrap()))
                })
                .collect();
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            let m = Array2::from_shape_vec((c.records.len(), cfg.d_b), flat).expect("row-major rows");
            let k = ivf_cfg.n_clusters.unwrap_or(c.records.len().min(IVF_MAX_CLUSTERS));
            Some(kmeans_train(m.view(), k, ivf_cfg.seed)?)
        }
        None => None,
    };

    let staging = staging_dir(out);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;

    let mut sections = BTreeMap::new();
    let put = |name: &str, magic: &[u8; 8], payload: Vec<u8>, sections: &mut BTreeMap<String, SectionInfo>| {
        write_file(&staging, name, &encode_section(magic, &payload), sections)
    };
    put(files::STARTS, magic::STARTS, write_rows(starts.view(), &start_quant), &mut sections)?;
    put(files::ENDS, magic::ENDS, write_rows(ends.view(), &end_quant), &mut sections)?;
    let mut qw = ByteWriter::default();
    start_quant.write(&mut qw);
    end_quant.write(&mut qw);
    put(files::QUANT, magic::QUANT, qw.buf, &mut sections)?;
    put(files::PHRASES, magic::PHRASES, phrases_payload(&c, config.max_span_len), &mut sections)?;
    let mut cw = ByteWriter::default();
    cw.u64(c.coherency.len() as u64);
    c.coherency.iter().for_each(|&v| cw.f32(v));
    put(files::COHERENCY, magic::COHERENCY, cw.buf, &mut sections)?;
    put(files::SPARSE, magic::SPARSE, sparse_payload(tfidf, &doc_vectors, &para_vectors), &mut sections)?;
    put(files::POSTINGS, magic::POSTINGS, postings_payload(&inverted), &mut sections)?;
    let mut fw = Vec::new();
    filter.write_to(&mut fw).expect("in-memory write");
    put(files::FILTER, magic::FILTER, fw, &mut sections)?;
    if let Some(ivf) = &ivf {
        let mut iw = ByteWriter::default();
        ivf.write(&mut iw);
        put(files::IVF, magic::IVF, iw.buf, &mut sections)?;
    }
    let mut ew = Vec::new();
    question_encoder.write_to(&mut ew).expect("in-memory write");
    write_file(&staging, files::ENCODER, &ew, &mut sections)?;
    let mut corpus_bytes = Vec::new();
    corpus.write_jsonl(&mut corpus_bytes).expect("in-memory write");
    write_file(&staging, files::CORPUS, &corpus_bytes, &mut sections)?;

    let counts = IndexCounts {
        docs: corpus.len() as u64,
        paragraphs: c.paragraphs.len() as u64,
        tokens: c.token_rows.len() as u64,
        surviving_tokens: n_rows as u64,
        start_tokens: c.start_tokens,
        end_tokens: c.end_tokens,
        start_records: c.records.len() as u64,
        start_rows: n_rows as u64,
        end_rows: n_rows as u64,
        phrases: c.coherency.len() as u64,
    };
    let manifest = IndexManifest {
        format_version: FORMAT_VERSION,
        created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        encoder: cfg,
        max_span_len: config.max_span_len,
        sparse_digest: format!("{:016x}", tfidf.digest()),
        filter_threshold: filter.threshold,
        ivf_clusters: ivf.as_ref().map(|i| i.n_clusters()),
        counts: counts.clone(),
        sections,
    };
    let manifest_path = staging.join(files::MANIFEST);
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    let bytes_on_disk = manifest.sections.values().map(|s| s.bytes).sum();

    if out.exists() {
        let old = out.with_file_name(format!(
            ".{}.old-{}",
            out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            std::process::id()
        ));
        fs::rename(out, &old).map_err(|e| Error::io(out, e))?;
        fs::rename(&staging, out).map_err(|e| Error::io(out, e))?;
        fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    } else {
        fs::rename(&staging, out).map_err(|e| Error::io(out, e))?;
    }

    let tokens = counts.tokens.max(1) as f64;
    let report = BuildReport {
        start_survival: counts.start_tokens as f64 / tokens,
        end_survival: counts.end_tokens as f64 / tokens,
        counts,
        bytes_on_disk,
    };
    info!(phrases = report.counts.phrases, rows = n_rows, "index built");
    Ok(report)
}
