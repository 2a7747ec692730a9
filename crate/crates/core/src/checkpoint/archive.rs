//! Flat named-tensor archives.
//!
//! Layout: header length `u64` LE | UTF-8 JSON header | raw payload. The
//! header maps each tensor name to
//! `{"dtype": "F32"|"F16", "shape": [...], "data_offsets": [begin, end]}`
//! with offsets relative to the payload start. An optional `__metadata__`
//! entry holds string pairs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    F32,
    F16,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 => 2,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "F32" => Ok(Dtype::F32),
            "F16" => Ok(Dtype::F16),
            other => Err(Error::UnsupportedDtype(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub begin: usize,
    pub end: usize,
}

impl TensorInfo {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Deserialize)]
struct RawInfo {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// JSON object entries in file order; duplicate keys are kept so they can be
/// reported.
struct RawHeader(Vec<(String, serde_json::Value)>);

impl<'de> Deserialize<'de> for RawHeader {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawHeader;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object of tensor descriptors")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<RawHeader, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, serde_json::Value>()? {
                    out.push((k, v));
                }
                Ok(RawHeader(out))
            }
        }
        d.deserialize_map(V).map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone)]
pub struct TensorArchive {
    tensors: BTreeMap<String, TensorInfo>,
    metadata: BTreeMap<String, String>,
    payload: Vec<u8>,
}

impl TensorArchive {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let malformed = |detail: String| Error::MalformedHeader {
            what: "tensor archive".into(),
            detail,
        };
        if bytes.len() < 8 {
            return Err(malformed("file shorter than the length prefix".into()));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        let hlen = usize::try_from(hlen).map_err(|_| malformed("header length overflows".into()))?;
        let header_end = 8usize
            .checked_add(hlen)
            .filter(|e| *e <= bytes.len())
            .ok_or_else(|| malformed(format!("header length {hlen} exceeds file")))?;
        let RawHeader(entries) = serde_json::from_slice(&bytes[8..header_end])
            .map_err(|e| Error::json("tensor archive header", e))?;
        let payload = bytes[header_end..].to_vec();

        let mut tensors = BTreeMap::new();
        let mut metadata = BTreeMap::new();
        for (name, value) in entries {
            if name == METADATA_KEY {
                metadata = serde_json::from_value(value).map_err(|e| Error::json("__metadata__", e))?;
                continue;
            }
            if tensors.contains_key(&name) {
                return Err(Error::Duplicate(name));
            }
            let raw: RawInfo =
                serde_json::from_value(value).map_err(|e| Error::json(format!("tensor `{name}`"), e))?;
            let dtype = Dtype::parse(&raw.dtype)?;
            let [begin, end] = raw.data_offsets;
            if end < begin {
                return Err(malformed(format!("`{name}` has end {end} < begin {begin}")));
            }
            let info = TensorInfo {
                dtype,
                shape: raw.shape,
                begin,
                end,
            };
            let want = info
                .shape
                .iter()
                .try_fold(dtype.size(), |acc, d| acc.checked_mul(*d))
                .ok_or_else(|| malformed(format!("`{name}` shape overflows")))?;
            if end - begin != want {
                return Err(malformed(format!(
                    "`{name}` spans {} bytes, dtype x shape needs {want}",
                    end - begin
                )));
            }
            if end > payload.len() {
                return Err(Error::Truncated {
                    name,
                    end,
                    len: payload.len(),
                });
            }
            tensors.insert(name, info);
        }

        let mut spans: Vec<(&String, &TensorInfo)> =
            tensors.iter().filter(|(_, t)| t.end > t.begin).collect();
        spans.sort_by_key(|(_, t)| (t.begin, t.end));
        for pair in spans.windows(2) {
            let (_, prev) = pair[0];
            let (name, cur) = pair[1];
            if cur.begin < prev.end {
                return Err(Error::Overlap {
                    name: name.clone(),
                    begin: cur.begin,
                    end: cur.end,
                });
            }
        }
        Ok(Self {
            tensors,
            metadata,
            payload,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn info(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.get(name)
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    /// Decodes one tensor, widening F16 to F32.
    pub fn tensor_f32(&self, name: &str) -> Result<Vec<f32>> {
        let info = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        let bytes = &self.payload[info.begin..info.end];
        Ok(match info.dtype {
            Dtype::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            Dtype::F16 => bytes
                .chunks_exact(2)
                .map(|c| half::f16::from_le_bytes(c.try_into().unwrap()).to_f32())
                .collect(),
        })
    }
}

/// Assembles an archive; tensors are laid out in name order.
#[derive(Debug, Clone, Default)]
pub struct ArchiveBuilder {
    tensors: BTreeMap<String, (Dtype, Vec<usize>, Vec<u8>)>,
    metadata: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct OutInfo<'a> {
    dtype: Dtype,
    shape: &'a [usize],
    data_offsets: [usize; 2],
}

#[derive(Serialize)]
#[serde(untagged)]
enum OutEntry<'a> {
    Meta(&'a BTreeMap<String, String>),
    Tensor(OutInfo<'a>),
}

impl ArchiveBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    fn insert(&mut self, name: String, dtype: Dtype, shape: Vec<usize>, bytes: Vec<u8>) -> Result<()> {
        if name == METADATA_KEY {
            return Err(Error::InvalidParameter(format!("`{METADATA_KEY}` is reserved")));
        }
        if shape.iter().product::<usize>() * dtype.size() != bytes.len() {
            return Err(Error::DimensionMismatch(format!(
                "`{name}`: {} bytes for shape {shape:?}",
                bytes.len()
            )));
        }
        if self.tensors.contains_key(&name) {
            return Err(Error::Duplicate(name));
        }
        self.tensors.insert(name, (dtype, shape, bytes));
        Ok(())
    }

    pub fn add_f32(&mut self, name: impl Into<String>, shape: Vec<usize>, values: &[f32]) -> Result<()> {
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.insert(name.into(), Dtype::F32, shape, bytes)
    }

    pub fn add_f16(&mut self, name: impl Into<String>, shape: Vec<usize>, values: &[f32]) -> Result<()> {
        let bytes = values
            .iter()
            .flat_map(|v| half::f16::from_f32(*v).to_le_bytes())
            .collect();
        self.insert(name.into(), Dtype::F16, shape, bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header: BTreeMap<&str, OutEntry> = BTreeMap::new();
        if !self.metadata.is_empty() {
            header.insert(METADATA_KEY, OutEntry::Meta(&self.metadata));
        }
        let mut offset = 0;
        for (name, (dtype, shape, bytes)) in &self.tensors {
            header.insert(
                name,
                OutEntry::Tensor(OutInfo {
                    dtype: *dtype,
                    shape,
                    data_offsets: [offset, offset + bytes.len()],
                }),
            );
            offset += bytes.len();
        }
        let mut json = serde_json::to_vec(&header).expect("header serializes");
        while !json.len().is_multiple_of(8) {
            json.push(b' ');
        }
        let mut out = Vec::with_capacity(8 + json.len() + offset);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, bytes) in self.tensors.values() {
            out.extend_from_slice(bytes);
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}
