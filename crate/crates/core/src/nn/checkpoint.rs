//! Encoder checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SALMCKPT"
//! 8       4     format version (u32), currently 1
//! 12      8     header length H (u64)
//! 20      H     header, UTF-8 JSON: {format_version, stage, encoder,
//!               featurizer, metadata, param_count}
//! 20+H    8*P   parameters as f64 bit patterns, layer by layer
//!               (weights row-major, then bias)
//! ...     32    SHA-256 of every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::encoder::{Dense, Encoder, EncoderConfig};
use crate::featurize::FeaturizerConfig;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SALMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingStage {
    Untrained,
    Stage1,
    Stage2,
    Supervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub stage: TrainingStage,
    /// Epoch of the selected (best-validation) parameters.
    pub epoch: usize,
    pub loss_curve: Vec<EpochRecord>,
}

impl TrainingMetadata {
    pub fn untrained() -> Self {
        TrainingMetadata {
            stage: TrainingStage::Untrained,
            epoch: 0,
            loss_curve: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: Encoder,
    pub featurizer: FeaturizerConfig,
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    stage: TrainingStage,
    encoder: EncoderConfig,
    featurizer: FeaturizerConfig,
    metadata: TrainingMetadata,
    param_count: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.featurizer.dim() != self.encoder.input_dim() {
            return Err(Error::Config(format!(
                "featurizer dim {} does not match encoder input dim {}",
                self.featurizer.dim(),
                self.encoder.input_dim()
            )));
        }
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            stage: self.metadata.stage,
            encoder: self.encoder.config().clone(),
            featurizer: self.featurizer,
            metadata: self.metadata.clone(),
            param_count: self.encoder.param_count(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.encoder.param_count() + 32);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for slice in self.encoder.param_slices() {
            for v in slice {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 20 + 32 {
            return Err(corrupt("file too short"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch (truncated or modified)"));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| corrupt("header length exceeds file"))?;
        let header: Header = serde_json::from_slice(&body[20..header_end])
            .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: header.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if header.param_count != header.encoder.param_count()
            || body.len() - header_end != 8 * header.param_count
        {
            return Err(corrupt("parameter block size does not match the encoder config"));
        }
        let mut values = body[header_end..]
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())));
        let layers = header
            .encoder
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Dense {
                in_dim: i,
                out_dim: o,
                weights: values.by_ref().take(i * o).collect(),
                bias: values.by_ref().take(o).collect(),
            })
            .collect();
        let encoder = Encoder::from_layers(header.encoder, layers)?;
        Ok(Checkpoint {
            encoder,
            featurizer: header.featurizer,
            metadata: header.metadata,
        })
    }
}

/// Writes via a temporary sibling file and a rename, so readers never see a
/// partial checkpoint.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
