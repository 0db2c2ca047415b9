use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::optim::AdamState;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::network::{ModelParams, ParamEntry, ParamGroup};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FDFCKPT1";

/// Exact position of a ChaCha generator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string: JSON numbers cannot hold a u128.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().unwrap_or(0));
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub config: TrainConfig,
    pub epoch: usize,
    pub step: usize,
    pub stage: u8,
    pub rng: RngState,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    step: usize,
    stage: u8,
    rng: RngState,
    params: Vec<ParamMeta>,
    adam_counts: Vec<u64>,
    /// SHA-256 of the blob section.
    blob_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    /// Layout: magic, u64 header length, JSON header, then little-endian f64
    /// blobs for the parameters, the first moments and the second moments,
    /// each in parameter order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blobs = Vec::with_capacity(self.params.num_scalars() * 24);
        let sections = [
            self.params.entries().iter().map(|e| e.tensor.data()).collect::<Vec<_>>(),
            self.optimizer.m.iter().map(Vec::as_slice).collect(),
            self.optimizer.v.iter().map(Vec::as_slice).collect(),
        ];
        for section in &sections {
            for data in section {
                for x in *data {
                    blobs.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        let header = Header {
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            stage: self.stage,
            rng: self.rng.clone(),
            params: self
                .params
                .entries()
                .iter()
                .map(|e| ParamMeta {
                    name: e.name.clone(),
                    group: e.group,
                    shape: e.tensor.shape().to_vec(),
                })
                .collect(),
            adam_counts: self.optimizer.counts.clone(),
            blob_sha256: hex(&Sha256::digest(&blobs)),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + blobs.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blobs);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Parse("not a checkpoint file".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(len))
            .ok_or_else(|| Error::Parse("truncated checkpoint header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        let blobs = &bytes[16 + len..];
        let found = hex(&Sha256::digest(blobs));
        if found != header.blob_sha256 {
            return Err(Error::Checksum {
                expected: header.blob_sha256,
                found,
            });
        }
        let sizes: Vec<usize> = header.params.iter().map(|p| p.shape.iter().product()).collect();
        let total: usize = sizes.iter().sum();
        if blobs.len() != 3 * 8 * total || header.adam_counts.len() != sizes.len() {
            return Err(Error::Parse("checkpoint blob size disagrees with header".into()));
        }
        let mut words = blobs
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |n: usize| -> Vec<f64> { words.by_ref().take(n).collect() };
        let entries = header
            .params
            .iter()
            .zip(&sizes)
            .map(|(meta, &n)| ParamEntry {
                name: meta.name.clone(),
                group: meta.group,
                tensor: Tensor::new(&meta.shape, take(n)),
            })
            .collect();
        let m = sizes.iter().map(|&n| take(n)).collect();
        let v = sizes.iter().map(|&n| take(n)).collect();
        Ok(Checkpoint {
            params: ModelParams::from_entries(entries),
            optimizer: AdamState {
                m,
                v,
                counts: header.adam_counts,
            },
            config: header.config,
            epoch: header.epoch,
            step: header.step,
            stage: header.stage,
            rng: header.rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
