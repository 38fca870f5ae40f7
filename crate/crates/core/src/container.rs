//! The `NATLAS01` tensor container.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, UTF-8 JSON header,
//! then raw row-major little-endian tensor payloads. The header carries
//! arbitrary metadata fields plus a `tensors` table mapping each name to its
//! shape, dtype and payload-relative byte offset.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NATLAS01";

/// Upper bound on header size, guards against reading garbage lengths.
const MAX_HEADER_LEN: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U64(Vec<u64>),
}

impl TensorData {
    pub fn dtype(&self) -> &'static str {
        match self {
            Self::F32(_) => "f32",
            Self::U64(_) => "u64",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::F32(v) => v.len(),
            Self::U64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn byte_len(&self) -> usize {
        self.len() * 4 * if matches!(self, Self::U64(_)) { 2 } else { 1 }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            Self::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Self::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            shape,
            data: TensorData::F32(data),
        }
    }

    pub fn u64(shape: Vec<usize>, data: Vec<u64>) -> Self {
        Self {
            shape,
            data: TensorData::U64(data),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

/// In-memory form of a container file. Tensor order is payload order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub header: Map<String, Value>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("missing tensor {name:?}")))
    }

    pub fn take_tensor(&mut self, name: &str) -> Result<Tensor> {
        let pos = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name:?}")))?;
        Ok(self.tensors.remove(pos).1)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut table = BTreeMap::new();
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            let expected: usize = t.shape.iter().product();
            if expected != t.data.len() {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: t.shape.clone(),
                    actual: vec![t.data.len()],
                });
            }
            let entry = TensorEntry {
                shape: t.shape.clone(),
                dtype: t.data.dtype().to_owned(),
                offset,
            };
            if table.insert(name.clone(), entry).is_some() {
                return Err(Error::Format(format!("duplicate tensor {name:?}")));
            }
            offset += t.data.byte_len() as u64;
        }
        if self.header.contains_key("tensors") {
            return Err(Error::Format("header field `tensors` is reserved".into()));
        }
        let mut header = self.header.clone();
        header.insert("tensors".into(), serde_json::to_value(&table)?);
        let header_bytes = serde_json::to_vec(&Value::Object(header))?;

        let mut out = Vec::with_capacity(16 + header_bytes.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        for (_, t) in &self.tensors {
            t.data.write_le(&mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Format("truncated file: no header".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        if header_len > MAX_HEADER_LEN || (16 + header_len) as usize > bytes.len() {
            return Err(Error::Format(format!(
                "truncated file: header length {header_len} exceeds file size"
            )));
        }
        let header_end = 16 + header_len as usize;
        let mut header: Map<String, Value> = match serde_json::from_slice(&bytes[16..header_end])? {
            Value::Object(m) => m,
            _ => return Err(Error::Format("header is not a JSON object".into())),
        };
        let table: BTreeMap<String, TensorEntry> = match header.remove("tensors") {
            Some(v) => serde_json::from_value(v)?,
            None => return Err(Error::Format("header has no tensor table".into())),
        };
        let payload = &bytes[header_end..];

        let mut entries: Vec<_> = table.into_iter().collect();
        entries.sort_by_key(|(_, e)| e.offset);
        let mut expected_offset = 0u64;
        let mut tensors = Vec::with_capacity(entries.len());
        for (name, entry) in entries {
            if entry.offset != expected_offset {
                return Err(Error::Format(format!(
                    "tensor {name:?} at offset {} but previous tensor ends at {expected_offset}",
                    entry.offset
                )));
            }
            let count = entry
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("tensor {name:?} shape overflows")))?;
            let width = match entry.dtype.as_str() {
                "f32" => 4,
                "u64" => 8,
                other => return Err(Error::Format(format!("unsupported dtype {other:?}"))),
            };
            let start = entry.offset as usize;
            let end = count
                .checked_mul(width)
                .and_then(|n| n.checked_add(start))
                .ok_or_else(|| Error::Format(format!("tensor {name:?} size overflows")))?;
            if end > payload.len() {
                return Err(Error::Format(format!(
                    "truncated payload: tensor {name:?} needs bytes {start}..{end}, payload has {}",
                    payload.len()
                )));
            }
            let raw = &payload[start..end];
            let data = match width {
                4 => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                ),
                _ => TensorData::U64(
                    raw.chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
            };
            tensors.push((
                name,
                Tensor {
                    shape: entry.shape,
                    data,
                },
            ));
            expected_offset = end as u64;
        }
        if expected_offset as usize != payload.len() {
            return Err(Error::Format(format!(
                "payload length {} does not match tensor table ({expected_offset} bytes)",
                payload.len()
            )));
        }
        Ok(Self { header, tensors })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path.as_ref(), &self.to_bytes()?)
    }
}

/// Hex SHA-256 digest, used for model and tokenizer fingerprints.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
