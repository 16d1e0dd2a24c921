//! Self-describing named-array container.
//!
//! Binary layout: magic `FSAC`, u32 format version, u64 header length, a JSON
//! header (sorted keys: array name -> {dtype, shape, offset, len} plus a
//! string metadata map), then the raw little-endian f64 payload. Writes are
//! byte-deterministic for equal contents.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FSAC";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    arrays: BTreeMap<String, ArrayMeta>,
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayMeta {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

/// An in-memory named-array container with string metadata.
#[derive(Debug, Default, Clone)]
pub struct ArrayContainer {
    pub arrays: BTreeMap<String, ArrayD<f64>>,
    pub metadata: BTreeMap<String, String>,
}

impl ArrayContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, array: ArrayD<f64>) {
        self.arrays.insert(name.into(), array);
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::Container(format!("missing array '{name}'")))
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(|s| s.as_str())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let mut arrays = BTreeMap::new();
        let mut offset = 0u64;
        for (name, arr) in &self.arrays {
            let len = (arr.len() * 8) as u64;
            arrays.insert(
                name.clone(),
                ArrayMeta {
                    dtype: "f64".to_string(),
                    shape: arr.shape().to_vec(),
                    offset,
                    len,
                },
            );
            offset += len;
        }
        let header = Header {
            version: VERSION,
            arrays,
            metadata: self.metadata.clone(),
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::Container(format!("header encode: {e}")))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header_json.len() as u64).to_le_bytes())?;
        w.write_all(&header_json)?;
        for arr in self.arrays.values() {
            let view = arr
                .as_slice()
                .ok_or_else(|| Error::Container("non-contiguous array".into()))?;
            let mut bytes = Vec::with_capacity(view.len() * 8);
            for v in view {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Container("bad magic".into()));
        }
        let mut vbuf = [0u8; 4];
        r.read_exact(&mut vbuf)?;
        let version = u32::from_le_bytes(vbuf);
        if version != VERSION {
            return Err(Error::Container(format!("unsupported version {version}")));
        }
        let mut lbuf = [0u8; 8];
        r.read_exact(&mut lbuf)?;
        let hlen = u64::from_le_bytes(lbuf) as usize;
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf)?;
        let header: Header = serde_json::from_slice(&hbuf)
            .map_err(|e| Error::Container(format!("header decode: {e}")))?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;

        let mut arrays = BTreeMap::new();
        for (name, meta) in header.arrays {
            if meta.dtype != "f64" {
                return Err(Error::Container(format!(
                    "array '{name}': unsupported dtype {}",
                    meta.dtype
                )));
            }
            let start = meta.offset as usize;
            let end = start + meta.len as usize;
            let slice = payload
                .get(start..end)
                .ok_or_else(|| Error::Container(format!("array '{name}': payload truncated")))?;
            let n: usize = meta.shape.iter().product();
            if n * 8 != slice.len() {
                return Err(Error::Container(format!(
                    "array '{name}': shape/len mismatch"
                )));
            }
            let mut data = Vec::with_capacity(n);
            for chunk in slice.chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            let arr = ArrayD::from_shape_vec(IxDyn(&meta.shape), data)
                .map_err(|e| Error::Container(format!("array '{name}': {e}")))?;
            arrays.insert(name, arr);
        }
        Ok(Self {
            arrays,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        if let Some(parent) = path.as_ref().parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        Self::read_from(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let mut c = ArrayContainer::new();
        c.insert(
            "a",
            ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![1.0, -2.5, 3e-17, f64::MIN, 0.0, 9.9])
                .unwrap(),
        );
        c.insert("z", ArrayD::from_elem(IxDyn(&[1]), 0.1 + 0.2));
        c.set_meta("seed", "42");
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = ArrayContainer::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.meta("seed"), Some("42"));
        for (name, arr) in &c.arrays {
            let b = back.get(name).unwrap();
            assert_eq!(arr.shape(), b.shape());
            for (x, y) in arr.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn write_is_deterministic() {
        let mut c = ArrayContainer::new();
        c.insert("w", ArrayD::from_elem(IxDyn(&[4]), 1.25));
        c.set_meta("k", "v");
        let mut b1 = Vec::new();
        let mut b2 = Vec::new();
        c.write_to(&mut b1).unwrap();
        c.write_to(&mut b2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn rejects_bad_magic() {
        let err = ArrayContainer::read_from(&mut &b"NOPE...."[..]);
        assert!(err.is_err());
    }
}
