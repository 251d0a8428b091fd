//! Binary checkpoints.
//!
//! Layout (little endian): magic, format version, config as JSON, completed
//! epoch, parameter blocks, Adam moments and step, then a SHA-256 of
//! everything before it. The random state needs no storage because every
//! epoch's stream is derived from the seed and the epoch number.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::encoder::{AdamState, FeatureEncoder, MlpEncoder};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TCRLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Number of completed epochs.
    pub epoch: usize,
    pub params: Vec<Vec<f64>>,
    pub adam: AdamState,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_blocks(out: &mut Vec<u8>, blocks: &[Vec<f64>]) {
    put_u64(out, blocks.len() as u64);
    for b in blocks {
        put_u64(out, b.len() as u64);
        for v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        // every length counts at least one byte of what follows
        if n > (self.bytes.len() - self.pos) as u64 {
            return Err(Error::Checkpoint(format!("length {n} exceeds the remaining file")));
        }
        Ok(n as usize)
    }

    fn blocks(&mut self) -> Result<Vec<Vec<f64>>> {
        let count = self.len()?;
        (0..count)
            .map(|_| {
                let n = self.len()?;
                let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("block too large".into()))?)?;
                Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
            })
            .collect()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let config = serde_json::to_vec(&self.config)?;
        put_u64(&mut out, config.len() as u64);
        out.extend_from_slice(&config);
        put_u64(&mut out, self.epoch as u64);
        put_blocks(&mut out, &self.params);
        put_blocks(&mut out, &self.adam.m);
        put_blocks(&mut out, &self.adam.v);
        put_u64(&mut out, self.adam.step);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        let mut r = Reader { bytes: body, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("checksum mismatch (corrupt or truncated file)".into()));
        }
        let n = r.len()?;
        let config: TrainConfig = serde_json::from_slice(r.take(n)?)?;
        let epoch = r.u64()? as usize;
        let params = r.blocks()?;
        let m = r.blocks()?;
        let v = r.blocks()?;
        let step = r.u64()?;
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint body".into()));
        }
        let sizes = |b: &[Vec<f64>]| b.iter().map(Vec::len).collect::<Vec<_>>();
        if sizes(&m) != sizes(&params) || sizes(&v) != sizes(&params) {
            return Err(Error::Checkpoint("optimizer state does not match parameter shapes".into()));
        }
        Ok(Self { config, epoch, params, adam: AdamState { m, v, step } })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// The encoder with the stored parameters.
    pub fn encoder(&self) -> Result<MlpEncoder> {
        let mut encoder = MlpEncoder::zeros(self.config.encoder.clone());
        let mut blocks = encoder.param_blocks_mut();
        if blocks.len() != self.params.len() || blocks.iter().zip(&self.params).any(|(b, p)| b.len() != p.len()) {
            return Err(Error::Checkpoint("parameter shapes do not match the encoder config".into()));
        }
        for (b, p) in blocks.iter_mut().zip(&self.params) {
            b.copy_from_slice(p);
        }
        drop(blocks);
        Ok(encoder)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let digest = Sha256::digest(fs::read(path)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
