//! Binary checkpoint format.
//!
//! ```text
//! magic    b"LDARM1"
//! version  u32 LE
//! meta     u32 LE count, then (key, value) string pairs
//! entries  u32 LE count, then per entry:
//!            name string, dtype u8 (0 = f64), rank u32 LE,
//!            dims u64 LE × rank, payload little-endian
//! checksum SHA-256 of every preceding byte
//! ```
//! Strings are a u32 LE byte length followed by UTF-8. Metadata keys are
//! kept sorted, so equal archives serialize to equal bytes.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"LDARM1";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub meta: BTreeMap<String, String>,
    pub entries: Vec<(String, Tensor)>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        self.meta.insert(key.to_string(), value.into());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Archive(format!("missing metadata `{key}`")))
    }

    pub fn push(&mut self, name: impl Into<String>, t: &Tensor) {
        self.entries.push((name.into(), t.clone()));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Adds every tensor of `store` under `prefix`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for (name, t) in store.iter() {
            self.push(format!("{prefix}{name}"), t);
        }
    }

    /// Collects the entries under `prefix` back into a store, in order.
    pub fn store(&self, prefix: &str) -> ParamStore {
        let mut s = ParamStore::new();
        for (name, t) in &self.entries {
            if let Some(rest) = name.strip_prefix(prefix) {
                s.push(rest, t.clone());
            }
        }
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut b, k);
            put_str(&mut b, v);
        }
        b.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            put_str(&mut b, name);
            b.push(DTYPE_F64);
            b.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                b.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(bytes.len() >= MAGIC.len() + 4 + 32, Archive, "archive is truncated");
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        ensure!(&bytes[..MAGIC.len()] == MAGIC, Archive, "bad magic");
        ensure!(Sha256::digest(body).as_slice() == sum, Archive, "checksum mismatch");
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let version = r.u32()?;
        ensure!(version == VERSION, Archive, "unsupported archive version {version}");
        let mut out = Self::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            out.meta.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let dtype = r.take(1)?[0];
            ensure!(dtype == DTYPE_F64, Archive, "entry `{name}` has unknown dtype {dtype}");
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| Ok(r.u64()? as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Archive(format!("entry `{name}` overruns the archive")))?;
            let data = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Archive(format!("entry `{name}`: {e}")))?;
            out.entries.push((name, t));
        }
        ensure!(r.remaining() == 0, Archive, "{} trailing bytes", r.remaining());
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    b.extend_from_slice(&(s.len() as u32).to_le_bytes());
    b.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(n <= self.remaining(), Archive, "archive is truncated");
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Archive("string is not UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorArchive {
        let mut a = TensorArchive::new();
        a.set_meta("kind", "test");
        a.push("w", &Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.0, 0.0, f64::MIN_POSITIVE, 7.0]).unwrap());
        a.push("b", &Tensor::new(vec![1], vec![0.5]).unwrap());
        a
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let bytes = sample().to_bytes();
        let back = TensorArchive::from_bytes(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corruption_and_versions_are_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[20] ^= 1;
        assert!(matches!(TensorArchive::from_bytes(&bytes), Err(Error::Archive(_))));

        let mut body = sample().to_bytes();
        body.truncate(body.len() - 32);
        body[6..10].copy_from_slice(&2u32.to_le_bytes());
        let digest = Sha256::digest(&body);
        body.extend_from_slice(&digest);
        let err = TensorArchive::from_bytes(&body).unwrap_err();
        assert!(err.to_string().contains("version 2"), "{err}");
    }
}
