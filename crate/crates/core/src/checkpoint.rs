//! Single-file model checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u64` manifest length, JSON manifest,
//! then the tensor blob (row-major little-endian `f32`). The manifest records
//! the architecture, a tensor index with byte offsets into the blob, and an
//! echo of the configuration that produced the model.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{EmbeddingArch, EmbeddingNet};
use crate::generator::{Generator, GeneratorArch, GeneratorNet};
use crate::image::Shape;
use crate::nn::ParamLayout;
use crate::report::write_atomic;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EMBSAFE\x01";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    Embedding(EmbeddingArch),
    Generator(GeneratorArch),
    /// Parameter-free identity generator, used as a test double.
    Identity {
        width: usize,
        height: usize,
        channels: usize,
    },
}

impl Architecture {
    fn layout(&self) -> Result<ParamLayout> {
        Ok(match self {
            Architecture::Embedding(a) => EmbeddingNet::<f32>::init(a.clone(), 0)?.layout().clone(),
            Architecture::Generator(a) => GeneratorNet::<f32>::init(a.clone(), 0)?.layout().clone(),
            Architecture::Identity { .. } => ParamLayout::new(),
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Architecture::Embedding(_) => "embedding",
            Architecture::Generator(_) => "generator",
            Architecture::Identity { .. } => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: u64,
    /// Byte length.
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub architecture: Architecture,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub manifest: Manifest,
    pub blob: Vec<u8>,
}

fn from_params(
    architecture: Architecture,
    layout: &ParamLayout,
    params: &[f32],
    config: serde_json::Value,
) -> ModelCheckpoint {
    let tensors = layout
        .specs()
        .iter()
        .map(|s| TensorEntry {
            name: s.name.clone(),
            shape: s.shape.clone(),
            dtype: DTYPE_F32.to_string(),
            offset: (s.offset * 4) as u64,
            length: (s.len() * 4) as u64,
        })
        .collect();
    ModelCheckpoint {
        manifest: Manifest {
            format_version: FORMAT_VERSION,
            architecture,
            tensors,
            config,
        },
        blob: params.iter().flat_map(|p| p.to_le_bytes()).collect(),
    }
}

impl ModelCheckpoint {
    pub fn from_embedding(net: &EmbeddingNet<f32>, config: serde_json::Value) -> Self {
        from_params(
            Architecture::Embedding(net.arch().clone()),
            net.layout(),
            net.params(),
            config,
        )
    }

    pub fn from_generator(net: &GeneratorNet<f32>, config: serde_json::Value) -> Self {
        from_params(
            Architecture::Generator(net.arch().clone()),
            net.layout(),
            net.params(),
            config,
        )
    }

    pub fn identity(shape: Shape) -> Self {
        from_params(
            Architecture::Identity {
                width: shape.width,
                height: shape.height,
                channels: shape.channels,
            },
            &ParamLayout::new(),
            &[],
            serde_json::Value::Null,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + manifest.len() + self.blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&self.blob);
        out
    }

    /// Parses and fully validates a checkpoint; nothing is returned unless
    /// every check passes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Validation("not a checkpoint file (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let end = 16usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Validation(format!("manifest length {len} exceeds file")))?;
        let raw: serde_json::Value = serde_json::from_slice(&bytes[16..end])
            .map_err(|e| Error::Validation(format!("manifest is not JSON: {e}")))?;
        match raw.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Migration(format!(
                    "checkpoint format version {v}, this build reads version {FORMAT_VERSION}"
                )))
            }
            None => return Err(Error::Validation("manifest lacks format_version".into())),
        }
        let manifest: Manifest =
            serde_json::from_value(raw).map_err(|e| Error::Validation(format!("bad manifest: {e}")))?;
        let ckpt = ModelCheckpoint {
            manifest,
            blob: bytes[end..].to_vec(),
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn validate(&self) -> Result<()> {
        let layout = self.manifest.architecture.layout()?;
        let blob_len = self.blob.len() as u64;
        for t in &self.manifest.tensors {
            if t.dtype != DTYPE_F32 {
                return Err(Error::Validation(format!(
                    "tensor {}: unsupported dtype {}",
                    t.name, t.dtype
                )));
            }
            if t.offset.checked_add(t.length).is_none_or(|e| e > blob_len) {
                return Err(Error::Validation(format!(
                    "tensor {}: bytes {}..+{} outside blob of {blob_len}",
                    t.name, t.offset, t.length
                )));
            }
            let elems: usize = t.shape.iter().product();
            if t.length != (elems * 4) as u64 {
                return Err(Error::Validation(format!(
                    "tensor {}: length {} does not match shape {:?}",
                    t.name, t.length, t.shape
                )));
            }
        }
        if self.manifest.tensors.len() != layout.specs().len() {
            return Err(Error::Validation(format!(
                "{} tensors listed, architecture has {}",
                self.manifest.tensors.len(),
                layout.specs().len()
            )));
        }
        for (t, s) in self.manifest.tensors.iter().zip(layout.specs()) {
            if t.name != s.name || t.shape != s.shape || t.offset != (s.offset * 4) as u64 {
                return Err(Error::Validation(format!(
                    "tensor {} {:?} at {} does not match architecture tensor {} {:?} at {}",
                    t.name,
                    t.shape,
                    t.offset,
                    s.name,
                    s.shape,
                    s.offset * 4
                )));
            }
        }
        if blob_len != (layout.total() * 4) as u64 {
            return Err(Error::Validation(format!(
                "blob holds {blob_len} bytes, architecture needs {}",
                layout.total() * 4
            )));
        }
        Ok(())
    }

    fn params(&self) -> Vec<f32> {
        self.blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn to_embedding(&self) -> Result<EmbeddingNet<f32>> {
        match &self.manifest.architecture {
            Architecture::Embedding(a) => EmbeddingNet::from_params(a.clone(), self.params()),
            other => Err(Error::Validation(format!(
                "expected an embedding checkpoint, found {}",
                other.kind()
            ))),
        }
    }

    pub fn to_generator(&self) -> Result<Generator> {
        match &self.manifest.architecture {
            Architecture::Generator(a) => Ok(Generator::Net(GeneratorNet::from_params(
                a.clone(),
                self.params(),
            )?)),
            &Architecture::Identity {
                width,
                height,
                channels,
            } => Ok(Generator::Identity(Shape::new(width, height, channels))),
            other => Err(Error::Validation(format!(
                "expected a generator checkpoint, found {}",
                other.kind()
            ))),
        }
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
