//! `EPLCKPT1` model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"EPLCKPT1"
//! u32 kind length, kind bytes (UTF-8)
//! u32 tensor count, then per tensor: u32 rows, u32 cols
//! f64 values, tensors concatenated in order, each row-major
//! ```
//!
//! A text sidecar `<file>.manifest.txt` holds `key = value` lines describing
//! how the model was trained.

use std::fs;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EPLCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub shapes: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn new(kind: &str, shapes: Vec<(usize, usize)>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shapes.iter().map(|(r, c)| r * c).sum();
        if expected != values.len() {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Checkpoint {
            kind: kind.to_string(),
            shapes,
            values,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.kind.len() + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.kind.len() as u32).to_le_bytes());
        out.extend_from_slice(self.kind.as_bytes());
        out.extend_from_slice(&(self.shapes.len() as u32).to_le_bytes());
        for &(r, c) in &self.shapes {
            out.extend_from_slice(&(r as u32).to_le_bytes());
            out.extend_from_slice(&(c as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let kind_len = r.u32()? as usize;
        let kind = std::str::from_utf8(r.take(kind_len)?)
            .map_err(|_| Error::Checkpoint("kind tag is not UTF-8".into()))?
            .to_string();
        let count = r.u32()? as usize;
        let mut shapes = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            shapes.push((r.u32()? as usize, r.u32()? as usize));
        }
        let total: usize = shapes.iter().map(|(a, b)| a * b).sum();
        let mut values = Vec::with_capacity(total);
        for _ in 0..total {
            let raw: [u8; 8] = r.take(8)?.try_into().expect("8 bytes");
            values.push(f64::from_le_bytes(raw));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            kind,
            shapes,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Errors unless the stored kind tag equals `kind`.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn manifest_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".manifest.txt");
    PathBuf::from(name)
}

pub fn write_manifest(checkpoint: &Path, entries: &[(String, String)]) -> Result<()> {
    let path = manifest_path(checkpoint);
    let mut text = String::new();
    for (k, v) in entries {
        text.push_str(k);
        text.push_str(" = ");
        text.push_str(v);
        text.push('\n');
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let c = Checkpoint::new("encoder", vec![(2, 3), (1, 1)], (0..7).map(|i| i as f64 * 0.5).collect())
            .unwrap();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert!(back.expect_kind("linear").is_err());
    }

    #[test]
    fn rejects_damage() {
        let c = Checkpoint::new("x", vec![(1, 2)], vec![1.0, 2.0]).unwrap();
        let bytes = c.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
        assert!(Checkpoint::new("x", vec![(2, 2)], vec![1.0]).is_err());
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(
            manifest_path(Path::new("out/enc.ckpt")),
            PathBuf::from("out/enc.ckpt.manifest.txt")
        );
    }
}
