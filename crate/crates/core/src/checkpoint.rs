//! Binary checkpoints.
//!
//! Layout, little-endian:
//!
//! ```text
//! b"GLCK" | u32 version | u64 header_len | header JSON
//! | arrays: u32 rank, rank × u64 dims, f64 data   (params, then Adam m, then Adam v)
//! | 32-byte SHA-256 of everything before it
//! ```
//!
//! The digest is verified before anything is parsed.

use std::path::Path;

use ndgrad::Array;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, RunningStats};
use crate::optim::Adam;
use crate::train::{TrainConfig, TrainState};

pub const MAGIC: &[u8; 4] = b"GLCK";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    step: u64,
    adam_step: u64,
    running: Option<RunningStats>,
    names: Vec<String>,
}

fn put_array(buf: &mut Vec<u8>, a: &Array) {
    buf.extend_from_slice(&(a.rank() as u32).to_le_bytes());
    for &d in a.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in a.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let p = &ckpt.state.params;
    let header = Header {
        model: p.config().clone(),
        train: ckpt.train.clone(),
        step: ckpt.state.step,
        adam_step: ckpt.state.opt.step,
        running: p.running().cloned(),
        names: p.names().to_vec(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for a in p.arrays().iter().chain(&ckpt.state.opt.m).chain(&ckpt.state.opt.v) {
        put_array(&mut buf, a);
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn array(&mut self) -> Result<Array> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("implausible array rank {rank}")));
        }
        let shape = (0..rank).map(|_| Ok(self.u64()? as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint("array size overflows".into()))?;
        let data = self.take(n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Array::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// Decodes a checkpoint; when `expect` is given its model config must match.
pub fn decode(bytes: &[u8], expect: Option<&ModelConfig>) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN {
        return Err(Error::Checkpoint("truncated".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }
    let mut r = Reader { bytes: body, at: 8 };
    let len = r.u64()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if let Some(cfg) = expect {
        if cfg != &header.model {
            return Err(Error::ConfigConflict(format!(
                "checkpoint model {:?} differs from requested {:?}",
                header.model, cfg
            )));
        }
    }
    let n = header.names.len();
    let mut read = |count: usize| (0..count).map(|_| r.array()).collect::<Result<Vec<_>>>();
    let arrays = read(n)?;
    let m = read(n)?;
    let v = read(n)?;
    if r.at != body.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let params = ModelParams::from_arrays(header.model, arrays, header.running)?;
    if params.names() != header.names.as_slice() {
        return Err(Error::ConfigConflict("parameter names differ from the model layout".into()));
    }
    let moments_ok = m.iter().chain(&v).zip(params.arrays().iter().chain(params.arrays())).all(|(a, p)| a.shape() == p.shape());
    if !moments_ok {
        return Err(Error::Checkpoint("optimizer moments do not match parameters".into()));
    }
    Ok(Checkpoint {
        train: header.train,
        state: TrainState {
            params,
            opt: Adam {
                step: header.adam_step,
                m,
                v,
            },
            step: header.step,
        },
    })
}

/// Writes atomically through a sibling temporary file.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode(ckpt)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(Error::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(Error::io(path))
}

pub fn load_checkpoint(path: &Path, expect: Option<&ModelConfig>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode(&bytes, expect)
}
