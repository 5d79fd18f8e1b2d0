//! Versioned binary container of named arrays, strings and scalars.
//!
//! Layout (little endian):
//!
//! ```text
//! magic        8 bytes  "CMSSACK\0"
//! version      u32
//! float width  u8       8 or 4, applies to array payloads
//! config       7 × u32  depth, patch_count, patch_dim, token_dim,
//!                       max_text_len, shared_dim, input_side
//! entry count  u32
//! entries      tag u8, name length u32, name bytes, payload
//!   0 array    rows u32, cols u32, value count u64, values
//!   1 text     byte length u32, UTF-8 bytes
//!   2 integer  u64
//!   3 real     f64
//! ```

use std::path::Path;

use super::EncoderConfig;
use crate::audit;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CMSSACK\0";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FloatWidth {
    #[default]
    F64,
    /// Lossy; array values are rounded to single precision.
    F32,
}

impl FloatWidth {
    fn bytes(self) -> u8 {
        match self {
            FloatWidth::F64 => 8,
            FloatWidth::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Array(Tensor),
    Text(String),
    Int(u64),
    Real(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub config: EncoderConfig,
    pub width: FloatWidth,
    pub entries: Vec<(String, Entry)>,
}

impl Container {
    pub fn new(config: EncoderConfig, width: FloatWidth) -> Self {
        Container {
            config,
            width,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, entry: Entry) {
        self.entries.push((name.into(), entry));
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    fn missing(name: &str, kind: &str) -> Error {
        Error::Invalid(format!("checkpoint has no {kind} entry {name:?}"))
    }

    pub fn array(&self, name: &str) -> Result<&Tensor> {
        match self.get(name) {
            Some(Entry::Array(t)) => Ok(t),
            _ => Err(Self::missing(name, "array")),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name) {
            Some(Entry::Text(s)) => Ok(s),
            _ => Err(Self::missing(name, "text")),
        }
    }

    pub fn int(&self, name: &str) -> Result<u64> {
        match self.get(name) {
            Some(Entry::Int(v)) => Ok(*v),
            _ => Err(Self::missing(name, "integer")),
        }
    }

    pub fn real(&self, name: &str) -> Result<f64> {
        match self.get(name) {
            Some(Entry::Real(v)) => Ok(*v),
            _ => Err(Self::missing(name, "real")),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.width.bytes());
        let c = &self.config;
        for v in [
            c.depth,
            c.patch_count,
            c.patch_dim,
            c.token_dim,
            c.max_text_len,
            c.shared_dim,
            c.input_side,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            let tag: u8 = match entry {
                Entry::Array(_) => 0,
                Entry::Text(_) => 1,
                Entry::Int(_) => 2,
                Entry::Real(_) => 3,
            };
            out.push(tag);
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match entry {
                Entry::Array(t) => {
                    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
                    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
                    out.extend_from_slice(&(t.len() as u64).to_le_bytes());
                    for &v in t.data() {
                        match self.width {
                            FloatWidth::F64 => out.extend_from_slice(&v.to_le_bytes()),
                            FloatWidth::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                        }
                    }
                }
                Entry::Text(s) => {
                    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
                Entry::Int(v) => out.extend_from_slice(&v.to_le_bytes()),
                Entry::Real(v) => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Container> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(r.error_at(0, "bad magic; not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let width_at = r.pos;
        let width = match r.u8()? {
            8 => FloatWidth::F64,
            4 => FloatWidth::F32,
            other => return Err(r.error_at(width_at, &format!("unknown float width {other}"))),
        };
        let mut dims = [0usize; 7];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let config = EncoderConfig {
            depth: dims[0],
            patch_count: dims[1],
            patch_dim: dims[2],
            token_dim: dims[3],
            max_text_len: dims[4],
            shared_dim: dims[5],
            input_side: dims[6],
        };
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let tag_at = r.pos;
            let tag = r.u8()?;
            let name_len = r.len_u32()?;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.error_at(name_at, "entry name is not UTF-8"))?
                .to_string();
            let entry = match tag {
                0 => {
                    let rows = r.u32()? as usize;
                    let cols = r.u32()? as usize;
                    let len_at = r.pos;
                    let n = r.u64()? as usize;
                    if Some(n) != rows.checked_mul(cols) {
                        return Err(r.error_at(
                            len_at,
                            &format!("array {name:?}: value count {n} != {rows}x{cols}"),
                        ));
                    }
                    let w = width.bytes() as usize;
                    if n.checked_mul(w).is_none_or(|b| b > r.remaining()) {
                        return Err(r.error_at(
                            len_at,
                            &format!("array {name:?}: {n} values exceed remaining bytes"),
                        ));
                    }
                    let raw = r.take(n * w)?;
                    let data = match width {
                        FloatWidth::F64 => raw
                            .chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk")))
                            .collect(),
                        FloatWidth::F32 => raw
                            .chunks_exact(4)
                            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk")) as f64)
                            .collect(),
                    };
                    Entry::Array(Tensor::from_vec(rows, cols, data)?)
                }
                1 => {
                    let len = r.len_u32()?;
                    let at = r.pos;
                    let s = std::str::from_utf8(r.take(len)?)
                        .map_err(|_| r.error_at(at, "text entry is not UTF-8"))?;
                    Entry::Text(s.to_string())
                }
                2 => Entry::Int(r.u64()?),
                3 => Entry::Real(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"))),
                other => return Err(r.error_at(tag_at, &format!("unknown entry tag {other}"))),
            };
            entries.push((name, entry));
        }
        if r.remaining() != 0 {
            return Err(r.error_at(r.pos, "trailing bytes after last entry"));
        }
        Ok(Container {
            config,
            width,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Container> {
        Container::decode(&audit::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, message: &str) -> Error {
        Error::Checkpoint {
            offset,
            message: message.to_string(),
        }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(self.error_at(
                self.pos,
                &format!("truncated: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// A u32 length that must fit in the remaining input.
    fn len_u32(&mut self) -> Result<usize> {
        let at = self.pos;
        let n = self.u32()? as usize;
        if n > self.remaining() {
            return Err(self.error_at(at, &format!("length {n} exceeds remaining bytes")));
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new(EncoderConfig::default(), FloatWidth::F64);
        c.push("w", Entry::Array(Tensor::from_vec(2, 2, vec![1.0, -2.5, 3.25, 0.1]).unwrap()));
        c.push("levels", Entry::Text("Simple Complexity\nHigh Complexity".into()));
        c.push("step", Entry::Int(42));
        c.push("loss", Entry::Real(0.125));
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        assert_eq!(Container::decode(&c.encode()).unwrap(), c);
    }

    #[test]
    fn unknown_version_rejected() {
        let mut b = sample().encode();
        b[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Container::decode(&b),
            Err(Error::Version { found: 7, .. })
        ));
    }

    #[test]
    fn corrupted_length_reports_offset() {
        let c = sample();
        let mut b = c.encode();
        // header: 8 magic + 4 version + 1 width + 28 config + 4 count = 45
        // first entry: tag(1) + name len(4) + "w"(1) + rows(4) + cols(4)
        let len_at = 45 + 1 + 4 + 1 + 4 + 4;
        b[len_at..len_at + 8].copy_from_slice(&999u64.to_le_bytes());
        match Container::decode(&b) {
            Err(Error::Checkpoint { offset, .. }) => assert_eq!(offset, len_at),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation_rejected() {
        let b = sample().encode();
        for cut in [3, 20, 50, b.len() - 1] {
            assert!(Container::decode(&b[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn f32_width_is_close() {
        let mut c = sample();
        c.width = FloatWidth::F32;
        let back = Container::decode(&c.encode()).unwrap();
        let (a, b) = (c.array("w").unwrap(), back.array("w").unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-7);
        }
    }
}
