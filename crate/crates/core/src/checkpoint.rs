//! Binary tensor container: magic, version, JSON header, little-endian
//! `f64` payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"CALAD1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub stage: String,
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(stage: &str, config_hash: &str, named: Vec<(String, Tensor)>, extra: serde_json::Value) -> Self {
        let mut offset = 0;
        let mut entries = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        for (name, t) in named {
            entries.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.numel() * 8;
            tensors.push(t);
        }
        Self {
            header: Header {
                stage: stage.to_owned(),
                config_hash: config_hash.to_owned(),
                tensors: entries,
                extra,
            },
            tensors,
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.header.tensors.iter().map(|e| e.name.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.header
            .tensors
            .iter()
            .position(|e| e.name == name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| Error::Checkpoint(format!("no tensor named {name}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let payload: usize = self.tensors.iter().map(|t| t.numel() * 8).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 12 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_owned());
        if bytes.len() < MAGIC.len() + 12 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint (magic mismatch)"));
        }
        let mut pos = MAGIC.len();
        let version = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes"));
        pos += 4;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().expect("8 bytes")) as usize;
        pos += 8;
        let header_end = pos.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[pos..header_end])?;
        let payload = &bytes[header_end..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let end = e.offset + n * 8;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!("tensor {} runs past the payload", e.name)));
            }
            let data = payload[e.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Tensor::new(&e.shape, data)?);
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Encode indices as exactly representable floats for the container.
pub fn indices_tensor(indices: &[usize]) -> Tensor {
    Tensor::from_vec(indices.iter().map(|&i| i as f64).collect())
}

pub fn tensor_indices(t: &Tensor) -> Result<Vec<usize>> {
    t.data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v < 9.007_199_254_740_992e15 {
                Ok(v as usize)
            } else {
                Err(Error::Checkpoint(format!("{v} is not an index")))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let special = vec![0.0, -0.0, f64::MIN_POSITIVE, 1e308, -1.0 / 3.0, f64::from_bits(1)];
        let ck = Checkpoint::new(
            "train",
            "abc",
            vec![
                ("a".into(), Tensor::new(&[2, 3], special.clone()).unwrap()),
                ("b".into(), Tensor::scalar(7.5)),
                ("empty".into(), Tensor::new(&[0], vec![]).unwrap()),
            ],
            serde_json::json!({"k": 1}),
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back.header, ck.header);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        for (a, b) in ck.tensors.iter().zip(&back.tensors) {
            assert_eq!(bits(a), bits(b));
            assert_eq!(a.shape(), b.shape());
        }
        assert_eq!(&std::fs::read(&p).unwrap()[..6], b"CALAD1");
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
        let mut bytes = Checkpoint::new("s", "h", vec![("a".into(), Tensor::scalar(1.0))], serde_json::Value::Null)
            .to_bytes()
            .unwrap();
        bytes.truncate(bytes.len() - 1);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    #[test]
    fn index_encoding() {
        let t = indices_tensor(&[0, 5, 123_456]);
        assert_eq!(tensor_indices(&t).unwrap(), vec![0, 5, 123_456]);
        assert!(tensor_indices(&Tensor::from_vec(vec![0.5])).is_err());
    }
}
