//! Indexed vector files used to pass measurements and reconstructions
//! between command-line stages.
//!
//! ```text
//! "SBVB1" | u64 len | u64 count | count * (u64 index | len f64)
//! ```
//! All values little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const BUNDLE_MAGIC: &[u8; 5] = b"SBVB1";
const HEADER_LEN: usize = BUNDLE_MAGIC.len() + 16;

#[derive(Debug, Clone, PartialEq)]
pub struct VectorBundle {
    pub len: usize,
    pub entries: Vec<(usize, Vec<f64>)>,
}

impl VectorBundle {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, index: usize, values: Vec<f64>) -> Result<()> {
        crate::error::check_len("bundle entry", self.len, values.len())?;
        self.entries.push((index, values));
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.entries.len() * (8 + 8 * self.len));
        out.extend_from_slice(BUNDLE_MAGIC);
        out.extend_from_slice(&(self.len as u64).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (index, values) in &self.entries {
            out.extend_from_slice(&(*index as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..BUNDLE_MAGIC.len()] != BUNDLE_MAGIC {
            return Err(Error::MalformedHeader("not a vector bundle".into()));
        }
        let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let len = word(BUNDLE_MAGIC.len()) as usize;
        let count = word(BUNDLE_MAGIC.len() + 8) as usize;
        let stride = len
            .checked_mul(8)
            .and_then(|b| b.checked_add(8))
            .ok_or_else(|| Error::MalformedHeader("entry length overflows".into()))?;
        let expected = count
            .checked_mul(stride)
            .ok_or_else(|| Error::MalformedHeader("entry count overflows".into()))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(Error::MalformedHeader("trailing bytes after payload".into()));
        }
        let entries = payload
            .chunks_exact(stride)
            .map(|chunk| {
                let index = u64::from_le_bytes(chunk[..8].try_into().unwrap()) as usize;
                let values = chunk[8..]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                (index, values)
            })
            .collect();
        Ok(Self { len, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
