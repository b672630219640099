//! Parameter file format.
//!
//! ```text
//! magic      "DSSW"
//! u16        format version (1)
//! u32        metadata length M
//! M bytes    UTF-8 JSON object (kind, network config, variant, ...)
//! u32        tensor count T
//! T × {
//!   u16      name length L
//!   L bytes  UTF-8 name, e.g. "finenet.4.a.weight"
//!   u8       rank R (1..=8)
//!   R × u32  dims
//!   f32 × Π dims
//! }
//! ```
//!
//! All integers and floats are little-endian. The file ends exactly after the
//! last tensor.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::nn::NamedTensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"DSSW";
pub const WEIGHTS_VERSION: u16 = 1;

const MAX_NAME_LEN: usize = 1024;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsFile {
    pub metadata: Map<String, Value>,
    pub tensors: Vec<NamedTensor>,
}

impl WeightsFile {
    pub fn new(kind: &str) -> Self {
        let mut metadata = Map::new();
        metadata.insert("kind".into(), Value::String(kind.into()));
        Self {
            metadata,
            tensors: Vec::new(),
        }
    }

    pub fn kind(&self) -> Option<&str> {
        self.metadata.get("kind").and_then(Value::as_str)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        match self.kind() {
            Some(k) if k == kind => Ok(()),
            other => Err(Error::WeightsMismatch(format!(
                "expected a `{kind}` file, found {other:?}"
            ))),
        }
    }

    pub fn set_meta<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        let v = serde_json::to_value(value).map_err(|e| Error::Weights(e.to_string()))?;
        self.metadata.insert(key.into(), v);
        Ok(())
    }

    pub fn meta<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .metadata
            .get(key)
            .ok_or_else(|| Error::Weights(format!("metadata key `{key}` missing")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Weights(format!("`{key}`: {e}")))
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| Error::Weights(e.to_string()))?;
        let data_len: usize = self.tensors.iter().map(|t| t.data.len() * 4 + 64).sum();
        let mut out = Vec::with_capacity(16 + meta.len() + data_len);
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&u32_len(meta.len())?.to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&u32_len(self.tensors.len())?.to_le_bytes());
        for t in &self.tensors {
            if t.name.len() > MAX_NAME_LEN {
                return Err(Error::Weights(format!("name `{}` too long", t.name)));
            }
            if t.shape.is_empty() || t.shape.len() > MAX_RANK {
                return Err(Error::Weights(format!("`{}` has rank {}", t.name, t.shape.len())));
            }
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Weights(format!("`{}` data does not match shape", t.name)));
            }
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&u32_len(d)?.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(Error::Weights("bad magic".into()));
        }
        let version = r.u16()?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Weights(format!("unsupported version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta = r.take(meta_len)?;
        let metadata: Map<String, Value> = serde_json::from_slice(meta)
            .map_err(|e| Error::Weights(format!("metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            if name_len > MAX_NAME_LEN {
                return Err(Error::Weights("tensor name too long".into()));
            }
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Weights("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            if rank == 0 || rank > MAX_RANK {
                return Err(Error::Weights(format!("`{name}` has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut elems: usize = 1;
            for _ in 0..rank {
                let d = r.u32()? as usize;
                elems = elems
                    .checked_mul(d)
                    .ok_or_else(|| Error::Weights(format!("`{name}` shape overflows")))?;
                shape.push(d);
            }
            let byte_len = elems
                .checked_mul(4)
                .ok_or_else(|| Error::Weights(format!("`{name}` shape overflows")))?;
            let raw = r.take(byte_len)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if tensors.iter().any(|t: &NamedTensor| t.name == name) {
                return Err(Error::Weights(format!("duplicate tensor `{name}`")));
            }
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Weights(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { metadata, tensors })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Weights(format!("length {n} exceeds u32")))
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
            .ok_or_else(|| Error::Weights(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightsFile {
        let mut f = WeightsFile::new("test");
        f.set_meta("alpha", &8usize).unwrap();
        f.tensors.push(NamedTensor {
            name: "a.weight".into(),
            shape: vec![2, 3],
            data: vec![0.5, -1.0, 2.0, 0.0, 1e-8, 3.25],
        });
        f.tensors.push(NamedTensor {
            name: "a.bias".into(),
            shape: vec![1],
            data: vec![f32::MIN_POSITIVE],
        });
        f
    }

    #[test]
    fn roundtrip() {
        let f = sample();
        let bytes = f.to_bytes().unwrap();
        let back = WeightsFile::parse(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.meta::<usize>("alpha").unwrap(), 8);
        assert_eq!(back.kind(), Some("test"));
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(WeightsFile::parse(&bad).is_err());
        assert!(WeightsFile::parse(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(WeightsFile::parse(&long).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(WeightsFile::parse(&version).is_err());
    }

    #[test]
    fn huge_declared_shape_fails_without_allocating() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(WEIGHTS_MAGIC);
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(b"{}");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.push(b'w');
        bytes.push(2);
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(WeightsFile::parse(&bytes).is_err());
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.dssw");
        sample().save(&p).unwrap();
        assert_eq!(WeightsFile::load(&p).unwrap(), sample());
    }
}
