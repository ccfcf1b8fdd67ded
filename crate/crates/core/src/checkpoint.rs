//! Binary tensor container shared by model checkpoints and the mel cache.
//!
//! Layout: 8-byte magic "PZSEQ001", little-endian u64 header length, JSON
//! header, then raw little-endian f32 payloads. The header holds a "tensors"
//! map (name -> dtype/shape/byte_offset, offsets relative to the payload
//! section) and a free-form "config" blob. Tensors serialize in name order,
//! so identical contents produce identical bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PZSEQ001";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    dtype: String,
    shape: Vec<usize>,
    byte_offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    tensors: BTreeMap<String, TensorEntry>,
    config: serde_json::Value,
}

/// In-memory view of a container: named f32 tensors plus a config blob.
#[derive(Debug, Clone)]
pub struct Container {
    tensors: BTreeMap<String, Tensor<f32>>,
    pub config: serde_json::Value,
}

impl Container {
    pub fn new(config: serde_json::Value) -> Self {
        Container {
            tensors: BTreeMap::new(),
            config,
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<f32>) {
        self.tensors.insert(name.to_string(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = BTreeMap::new();
        let mut offset = 0u64;
        for (name, tensor) in &self.tensors {
            entries.insert(
                name.clone(),
                TensorEntry {
                    dtype: "f32".to_string(),
                    shape: tensor.shape().to_vec(),
                    byte_offset: offset,
                },
            );
            offset += (tensor.len() * 4) as u64;
        }
        let header = Header {
            tensors: entries,
            config: self.config.clone(),
        };
        let header_bytes = serde_json::to_vec(&header)?;

        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for tensor in self.tensors.values() {
            for v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Container> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{}: bad magic {magic:?}",
                path.display()
            )));
        }
        let mut len_bytes = [0u8; 8];
        r.read_exact(&mut len_bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        if header_len > 1 << 30 {
            return Err(Error::Checkpoint(format!(
                "{}: implausible header length {header_len}",
                path.display()
            )));
        }
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: truncated header: {e}", path.display())))?;
        let header: Header = serde_json::from_slice(&header_bytes)?;

        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;

        let mut tensors = BTreeMap::new();
        for (name, entry) in header.tensors {
            if entry.dtype != "f32" {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} has unsupported dtype {:?}",
                    entry.dtype
                )));
            }
            let count: usize = entry.shape.iter().product();
            let start = entry.byte_offset as usize;
            let end = start + count * 4;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} extends past the payload ({end} > {})",
                    payload.len()
                )));
            }
            let mut data = Vec::with_capacity(count);
            for chunk in payload[start..end].chunks_exact(4) {
                data.push(f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")));
            }
            tensors.insert(name, Tensor::from_vec(&entry.shape, data)?);
        }
        Ok(Container {
            tensors,
            config: header.config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use tempfile::tempdir;

    fn sample() -> Container {
        let mut c = Container::new(json!({"kind": "test", "n": 3}));
        c.insert(
            "b.weight",
            Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.25, -0.5]).unwrap(),
        );
        c.insert("a.bias", Tensor::from_vec(&[2], vec![0.25, -0.75]).unwrap());
        c
    }

    #[test]
    fn round_trip_preserves_tensors_and_config() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let c = sample();
        c.save(&path).unwrap();
        let back = Container::load(&path).unwrap();
        assert_eq!(back.config["kind"], "test");
        assert_eq!(back.require("a.bias").unwrap().data(), &[0.25, -0.75]);
        assert_eq!(back.require("b.weight").unwrap().shape(), [2, 3]);
        assert!(back.get("missing").is_none());
    }

    #[test]
    fn serialization_is_deterministic() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("one.ckpt");
        let p2 = dir.path().join("two.ckpt");
        sample().save(&p1).unwrap();
        sample().save(&p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn magic_is_checked() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        let mut bytes = std::fs::read({
            let p = dir.path().join("ok.ckpt");
            sample().save(&p).unwrap();
            p
        })
        .unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(Container::load(&path).is_err());
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("trunc.ckpt");
        sample().save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        assert!(Container::load(&p).is_err());
    }

    #[test]
    fn header_layout_matches_format_spec() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("layout.ckpt");
        sample().save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[0..8], MAGIC);
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
        assert_eq!(header["tensors"]["a.bias"]["dtype"], "f32");
        assert_eq!(header["tensors"]["a.bias"]["byte_offset"], 0);
        // Names serialize sorted, so b.weight follows a.bias.
        assert_eq!(header["tensors"]["b.weight"]["byte_offset"], 8);
        let payload = &bytes[16 + hlen..];
        assert_eq!(payload.len(), (2 + 6) * 4);
        assert_eq!(f32::from_le_bytes(payload[0..4].try_into().unwrap()), 0.25);
    }
}
