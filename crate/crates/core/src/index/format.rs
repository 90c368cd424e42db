//! Section framing and little-endian byte helpers.
//!
//! Every binary section is `magic[8] | version u32 | crc32 u32 | len u64`
//! followed by `len` payload bytes. The CRC covers the payload only.

use std::fs;
use std::path::Path;

use memmap2::Mmap;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

pub fn encode_section(magic: &[u8; 8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// A memory-mapped, validated section.
#[derive(Debug)]
pub struct Section {
    map: Mmap,
}

impl Section {
    /// Maps `path` and validates magic, version, length and checksum.
    pub fn open(path: &Path, name: &str, magic: &[u8; 8]) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        // SAFETY: index files are never modified after the atomic build.
        let map = unsafe { Mmap::map(&file) }.map_err(|e| Error::io(path, e))?;
        validate(&map, name, magic)?;
        Ok(Section { map })
    }

    pub fn payload(&self) -> &[u8] {
        &self.map[HEADER_LEN..]
    }
}

pub fn validate(bytes: &[u8], name: &str, magic: &[u8; 8]) -> Result<()> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Checksum(name.to_string()));
    }
    if &bytes[..8] != magic {
        return Err(Error::format(name, "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let crc = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let len = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != len || crc32fast::hash(payload) != crc {
        return Err(Error::Checksum(name.to_string()));
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    /// Unsigned LEB128.
    pub fn varint(&mut self, mut v: u64) {
        loop {
            let byte = (v & 0x7f) as u8;
            v >>= 7;
            if v == 0 {
                self.buf.push(byte);
                return;
            }
            self.buf.push(byte | 0x80);
        }
    }
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
}

/// Bounds-checked cursor over a payload.
#[derive(Debug)]
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8], section: &'static str) -> Self {
        ByteReader { buf, pos: 0, section }
    }

    pub fn is_at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(self.section, "unexpected end of section"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    pub fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }
    pub fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }
    pub fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }
    pub fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let byte = self.u8()?;
            v |= u64::from(byte & 0x7f) << shift;
            if byte & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::format(self.section, "varint overflow"))
    }
    pub fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::format(self.section, "count overflows usize"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn corrupted_payload_is_detected() {
        let mut bytes = encode_section(b"TESTSECT", b"hello");
        validate(&bytes, "t", b"TESTSECT").unwrap();
        bytes[HEADER_LEN] ^= 1;
        assert!(matches!(validate(&bytes, "t", b"TESTSECT"), Err(Error::Checksum(s)) if s == "t"));
        let bytes = encode_section(b"TESTSECT", b"hello");
        assert!(matches!(validate(&bytes[..bytes.len() - 1], "t", b"TESTSECT"), Err(Error::Checksum(_))));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode_section(b"TESTSECT", b"");
        bytes[8] = 9;
        assert!(matches!(validate(&bytes, "t", b"TESTSECT"), Err(Error::Version { found: 9, .. })));
    }

    proptest! {
        #[test]
        fn varint_round_trip(values in proptest::collection::vec(any::<u64>(), 0..20)) {
            let mut w = ByteWriter::default();
            for &v in &values {
                w.varint(v);
            }
            let mut r = ByteReader::new(&w.buf, "t");
            for &v in &values {
                prop_assert_eq!(r.varint().unwrap(), v);
            }
            prop_assert!(r.is_at_end());
        }
    }
}
