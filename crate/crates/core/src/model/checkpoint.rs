//! Checkpoint files: an 8-byte magic, a little-endian `u64` header length,
//! a JSON header, then every parameter as little-endian `f32` in manifest
//! order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Head, Model, ModelConfig, Params};
use crate::error::{Error, Result};
use crate::strategies::OrderScheme;
use crate::text::Vocab;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MRCCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    manifest: Vec<ParamEntry>,
    scheme: OrderScheme,
    head: Head,
    vocab: Vec<String>,
}

/// A trained model together with what is needed to encode its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocab,
    /// Segment order the model was trained with.
    pub scheme: OrderScheme,
    pub head: Head,
}

fn manifest(params: &Params) -> Vec<ParamEntry> {
    params
        .tensors()
        .into_iter()
        .map(|(name, shape, _)| ParamEntry { name, shape })
        .collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.model.config.clone(),
            manifest: manifest(&self.model.params),
            scheme: self.scheme.clone(),
            head: self.head,
            vocab: self.vocab.words().to_vec(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let n = self.model.params.num_values();
        let mut out = Vec::with_capacity(16 + json.len() + 4 * n);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, values) in self.model.params.tensors() {
            for &v in values {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |msg: String| Error::Checkpoint {
            path: path.to_path_buf(),
            msg,
        };
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| fail("truncated magic".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(fail("not a checkpoint file (bad magic)".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| fail("truncated header length".into()))?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(fail("truncated header".into()));
        }
        let (json, data) = r.split_at(len);
        let header: Header = serde_json::from_slice(json).map_err(|e| fail(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(fail(format!(
                "format version {} unsupported (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        header.config.validate().map_err(|e| fail(e.to_string()))?;
        let mut params = Params::zeros(&header.config);
        let expected = manifest(&params);
        if header.manifest != expected {
            let diff = header
                .manifest
                .iter()
                .zip(&expected)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("{} {:?} vs expected {} {:?}", a.name, a.shape, b.name, b.shape))
                .unwrap_or_else(|| format!("{} tensors vs expected {}", header.manifest.len(), expected.len()));
            return Err(fail(format!("parameter manifest mismatch: {diff}")));
        }
        let vocab = Vocab::from_surfaces(header.vocab).map_err(|e| fail(e.to_string()))?;
        if vocab.len() != header.config.vocab_size {
            return Err(fail(format!(
                "vocabulary has {} entries but config says {}",
                vocab.len(),
                header.config.vocab_size
            )));
        }
        let n = params.num_values();
        if data.len() != 4 * n {
            return Err(fail(format!("expected {} parameter bytes, found {}", 4 * n, data.len())));
        }
        let mut chunks = data.chunks_exact(4);
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                let c = chunks.next().expect("length checked");
                *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
            }
        }
        Ok(Checkpoint {
            model: Model {
                config: header.config,
                params,
            },
            vocab,
            scheme: header.scheme,
            head: header.head,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
