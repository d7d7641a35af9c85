//! Tensor archive: the on-disk container used for embedder weights, diary
//! token stacks, feature caches and model checkpoints.
//!
//! Layout of a `.tarc` file:
//!
//! | bytes            | content                                        |
//! |------------------|------------------------------------------------|
//! | 0..8             | magic `VALTARC1`                               |
//! | 8..16            | manifest length `m`, u64 little-endian         |
//! | 16..16+m         | manifest, UTF-8 JSON                           |
//! | 16+m..           | blob: tensor payloads, little-endian, row-major |
//!
//! The manifest is `{"format_version": 1, "tensors": [{name, dtype, shape,
//! byte_offset, byte_length}], "metadata": {...}}` where offsets are relative
//! to the start of the blob and `dtype` is `"f32"` or `"f64"`.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VALTARC1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_len(&shape, data.len())?;
        Ok(Tensor {
            shape,
            data: TensorData::F32(data),
        })
    }

    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_len(&shape, data.len())?;
        Ok(Tensor {
            shape,
            data: TensorData::F64(data),
        })
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::F64(_) => None,
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    /// Values widened to f64 regardless of stored dtype.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::invalid(
            "tensor",
            format!("shape {shape:?} holds {expected} values but {len} were given"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_length: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tensors: Vec<ManifestEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// Named tensors in insertion order plus free-form JSON metadata.
#[derive(Debug, Clone, Default)]
pub struct TensorArchive {
    names: Vec<String>,
    tensors: HashMap<String, Tensor>,
    pub metadata: serde_json::Value,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_metadata(metadata: serde_json::Value) -> Self {
        TensorArchive {
            metadata,
            ..Self::default()
        }
    }

    /// Inserts or replaces a tensor; replacement keeps the original position.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        if !self.tensors.contains_key(&name) {
            self.names.push(name.clone());
        }
        self.tensors.insert(name, tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// Looks a tensor up and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        if t.shape != shape {
            return Err(Error::Shape {
                name: name.to_string(),
                expected: shape.to_vec(),
                actual: t.shape.clone(),
            });
        }
        Ok(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.names.len());
        for name in &self.names {
            let t = &self.tensors[name];
            let start = blob.len();
            t.write_le(&mut blob);
            entries.push(ManifestEntry {
                name: name.clone(),
                dtype: t.dtype(),
                shape: t.shape.clone(),
                byte_offset: start as u64,
                byte_length: (blob.len() - start) as u64,
            });
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            tensors: entries,
            metadata: self.metadata.clone(),
        };
        let manifest = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + manifest.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::CorruptArchive("missing VALTARC1 header".into()));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let blob_start = 16usize
            .checked_add(mlen)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::CorruptArchive("manifest length exceeds file size".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..blob_start])
            .map_err(|e| Error::CorruptArchive(format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::CorruptArchive(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let blob = &bytes[blob_start..];
        let mut archive = TensorArchive::with_metadata(manifest.metadata);
        for e in manifest.tensors {
            let count: usize = e.shape.iter().product();
            if (count * e.dtype.size()) as u64 != e.byte_length {
                return Err(Error::CorruptArchive(format!(
                    "`{}`: byte_length {} does not match shape {:?}",
                    e.name, e.byte_length, e.shape
                )));
            }
            let start = e.byte_offset as usize;
            let end = start
                .checked_add(e.byte_length as usize)
                .filter(|&end| end <= blob.len())
                .ok_or_else(|| Error::CorruptArchive(format!("`{}`: payload out of bounds", e.name)))?;
            let raw = &blob[start..end];
            let data = match e.dtype {
                DType::F32 => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                DType::F64 => TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
            };
            if archive.tensors.contains_key(&e.name) {
                return Err(Error::CorruptArchive(format!("duplicate tensor `{}`", e.name)));
            }
            archive.insert(e.name, Tensor { shape: e.shape, data });
        }
        Ok(archive)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
