//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LPMN"            4-byte magic
//! version: u32      currently 1
//! header_len: u32   length of the JSON header in bytes
//! header            UTF-8 JSON: kind tag, free-form metadata, named layer-spec
//!                   lists and the tensor table (name, kind, rows, cols)
//! tensors           f32 values, row-major, in tensor-table order
//! ```

use serde::{Deserialize, Serialize};

use super::layers::{LayerSpec, ParamKind, ParamStore};
use super::Tensor2;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LPMN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: ParamKind,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    layers: Vec<(String, Vec<LayerSpec>)>,
    tensors: Vec<TensorEntry>,
}

/// Decoded container contents.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    /// What the parameters belong to ("model", "vae", "gan", "wgan").
    pub kind: String,
    pub meta: serde_json::Value,
    pub layers: Vec<(String, Vec<LayerSpec>)>,
    pub store: ParamStore<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            layers: self.layers.clone(),
            tensors: self
                .store
                .iter()
                .map(|p| TensorEntry {
                    name: p.name.clone(),
                    kind: p.kind,
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let payload: usize = self.store.iter().map(|p| p.value.len() * 4).sum();
        let mut out = Vec::with_capacity(12 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.store.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing LPMN magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut offset = 12 + hlen;
        let mut store = ParamStore::new();
        for t in header.tensors {
            let n = t.rows * t.cols;
            let raw = bytes
                .get(offset..offset + 4 * n)
                .ok_or_else(|| Error::Checkpoint(format!("truncated tensor {}", t.name)))?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += 4 * n;
            store.add(t.name, t.kind, Tensor2::from_vec(t.rows, t.cols, data)?);
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            kind: header.kind,
            meta: header.meta,
            layers: header.layers,
            store,
        })
    }

    pub fn layer_specs(&self, name: &str) -> Result<&[LayerSpec]> {
        self.layers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, l)| l.as_slice())
            .ok_or_else(|| Error::Checkpoint(format!("no layer list named `{name}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Activation;

    #[test]
    fn round_trip_preserves_everything() {
        let mut store = ParamStore::new();
        store.add(
            "a.weight",
            ParamKind::Weight,
            Tensor2::from_vec(2, 3, vec![1.0, -2.5, 3.25, 0.0, 1e-7, -0.0]).unwrap(),
        );
        store.add("a.bn.running_var", ParamKind::Buffer, Tensor2::filled(1, 3, 1.0));
        let ck = Checkpoint {
            kind: "model".into(),
            meta: serde_json::json!({"l": 3}),
            layers: vec![("enc".into(), vec![LayerSpec::new(2, 3, Activation::Relu, true)])],
            store,
        };
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"LPMN");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.store, ck.store);
        assert_eq!(back.kind, "model");
        assert_eq!(back.layer_specs("enc").unwrap(), ck.layers[0].1.as_slice());
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(Checkpoint::from_bytes(b"NOPE\x01\0\0\0\0\0\0\0").is_err());
        let ck = Checkpoint {
            kind: "model".into(),
            meta: serde_json::Value::Null,
            layers: vec![],
            store: {
                let mut s = ParamStore::new();
                s.add("x", ParamKind::Weight, Tensor2::filled(2, 2, 1.0f32));
                s
            },
        };
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
