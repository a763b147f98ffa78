//! Versioned binary container: a JSON metadata block followed by raw
//! little-endian `f64` tensors. Floats round-trip bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CRGRASP\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub tensors: Vec<Array2<f64>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.metadata).expect("metadata serializes");
        let floats: usize = self.tensors.iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(32 + meta.len() + 16 * self.tensors.len() + 8 * floats);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            message: m.to_string(),
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok_or_else(|| bad("truncated header"))? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(r.take(4).ok_or_else(|| bad("truncated header"))?.try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}, expected {VERSION}")));
        }
        let meta_len = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
        let meta = r.take(meta_len).ok_or_else(|| bad("truncated metadata"))?;
        let metadata = serde_json::from_slice(meta).map_err(|e| bad(&format!("metadata: {e}")))?;
        let n = r.u64().ok_or_else(|| bad("truncated tensor table"))? as usize;
        let mut tensors = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let rows = r.u64().ok_or_else(|| bad("truncated tensor"))? as usize;
            let cols = r.u64().ok_or_else(|| bad("truncated tensor"))? as usize;
            let len = rows.checked_mul(cols).ok_or_else(|| bad("tensor too large"))?;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)
                .ok_or_else(|| bad("truncated tensor data"))?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Array2::from_shape_vec((rows, cols), data).map_err(|e| bad(&e.to_string()))?);
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { metadata, tensors })
    }

    /// Writes through a temporary file and a rename, so a crash never leaves
    /// a half-written checkpoint under the final name.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            metadata: serde_json::json!({"update": 3, "note": "x"}),
            tensors: vec![
                Array2::from_shape_vec((2, 2), vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap(),
                Array2::zeros((0, 3)),
            ],
        }
    }

    #[test]
    fn bitwise_round_trip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back.metadata, c.metadata);
        for (a, b) in c.tensors.iter().zip(&back.tensors) {
            assert_eq!(a.dim(), b.dim());
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        let err = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("unsupported version 9"));
    }

    #[test]
    fn truncation_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], Path::new("mem")).is_err());
        assert!(Checkpoint::from_bytes(b"garbage!", Path::new("mem")).is_err());
    }
}
