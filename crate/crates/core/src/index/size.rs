//! Storage arithmetic for the compression stages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bytes per phrase of an explicit pointer table: two u32 pointers plus an
/// f32 coherency scalar.
pub const POINTER_RECORD_BYTES: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeEstimate {
    /// Every phrase stored as a full `2 d_b + 1` vector.
    pub naive: u128,
    /// Start and end vectors stored once per token.
    pub pointer: u128,
    /// Phrase-to-vector pointers, reported separately from `pointer`.
    pub pointer_table: u128,
    /// `pointer * survival_rate`.
    pub filtered: f64,
    /// `filtered` at one byte per value.
    pub quantized: f64,
}

impl SizeEstimate {
    pub fn naive_over_pointer(&self) -> f64 {
        self.naive as f64 / self.pointer as f64
    }
}

pub fn estimate_index_size(
    n_phrases: u64,
    n_tokens: u64,
    d_b: u64,
    survival_rate: f64,
    bytes_per_value: u64,
) -> Result<SizeEstimate> {
    if n_phrases == 0 || n_tokens == 0 || d_b == 0 || bytes_per_value == 0 {
        return Err(Error::Config("size estimate arguments must be positive".into()));
    }
    if !(survival_rate > 0.0 && survival_rate <= 1.0) {
        return Err(Error::Config("survival rate must be in (0, 1]".into()));
    }
    let (p, t, d, w) = (n_phrases as u128, n_tokens as u128, d_b as u128, bytes_per_value as u128);
    let naive = p * (2 * d + 1) * w;
    let pointer = 2 * t * d * w;
    let filtered = pointer as f64 * survival_rate;
    Ok(SizeEstimate {
        naive,
        pointer,
        pointer_table: p * u128::from(POINTER_RECORD_BYTES),
        filtered,
        quantized: filtered / bytes_per_value as f64,
    })
}
