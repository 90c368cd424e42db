//! On-disk phrase index: build, load and size accounting.
//!
//! Start and end vectors are stored once per surviving token and shared by
//! every phrase that begins or ends there. Phrases are implicit: each start
//! record owns a contiguous run of coherency scalars, one per surviving end
//! inside its span window.

mod build;
mod format;
mod quant;
mod reader;
mod size;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use build::{apply_filter, build_index, BuildReport, IndexConfig, IvfConfig, SurvivalMask};
pub use format::FORMAT_VERSION;
pub(crate) use format::{ByteReader, ByteWriter};
pub use quant::{QuantizationParams, DEFAULT_RESERVOIR};
pub use reader::{load_index, ParagraphEntry, PhraseIndex, PhraseRecord, StartRecord};
pub use size::{estimate_index_size, SizeEstimate, POINTER_RECORD_BYTES};

use crate::dense::EncoderConfig;

pub mod files {
    pub const MANIFEST: &str = "manifest.json";
    pub const STARTS: &str = "starts.bin";
    pub const ENDS: &str = "ends.bin";
    pub const PHRASES: &str = "phrases.bin";
    pub const COHERENCY: &str = "coherency.bin";
    pub const QUANT: &str = "quant.bin";
    pub const SPARSE: &str = "sparse_docs.bin";
    pub const POSTINGS: &str = "postings.bin";
    pub const IVF: &str = "ivf.bin";
    pub const FILTER: &str = "filter.bin";
    pub const ENCODER: &str = "encoder.bin";
    pub const CORPUS: &str = "corpus.jsonl";
}

pub(crate) mod magic {
    pub const STARTS: &[u8; 8] = b"PHXSTART";
    pub const ENDS: &[u8; 8] = b"PHXENDS\0";
    pub const PHRASES: &[u8; 8] = b"PHXPHRAS";
    pub const COHERENCY: &[u8; 8] = b"PHXCOHER";
    pub const QUANT: &[u8; 8] = b"PHXQUANT";
    pub const SPARSE: &[u8; 8] = b"PHXSPARS";
    pub const POSTINGS: &[u8; 8] = b"PHXPOSTS";
    pub const IVF: &[u8; 8] = b"PHXIVF\0\0";
    pub const FILTER: &[u8; 8] = b"PHXFILTR";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexCounts {
    pub docs: u64,
    pub paragraphs: u64,
    pub tokens: u64,
    /// Tokens kept by the start or the end filter; each stores one start
    /// row and one end row.
    pub surviving_tokens: u64,
    pub start_tokens: u64,
    pub end_tokens: u64,
    /// Surviving starts with at least one surviving end in their window.
    pub start_records: u64,
    pub start_rows: u64,
    pub end_rows: u64,
    pub phrases: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionInfo {
    pub bytes: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format_version: u32,
    /// Seconds since the Unix epoch; the only non-deterministic field.
    pub created_at: u64,
    pub encoder: EncoderConfig,
    pub max_span_len: usize,
    pub sparse_digest: String,
    pub filter_threshold: f64,
    pub ivf_clusters: Option<usize>,
    pub counts: IndexCounts,
    /// Whole-file sizes and CRCs of every other file in the directory.
    pub sections: BTreeMap<String, SectionInfo>,
}
