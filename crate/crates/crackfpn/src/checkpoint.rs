//! Versioned binary checkpoints.
//!
//! Layout: the magic `FPNCKPT1`, a little-endian `u32` length followed by a
//! JSON record, a `u32` block count, then per block a `u32`-prefixed UTF-8
//! name, a `u32` rank, `u32` dimensions and little-endian `f32` values.

use std::collections::BTreeMap;
use std::path::Path;

use crackfpn_core::fpn::{EncoderKind, FpnNet, ModelConfig};
use crackfpn_core::nn::{Param, Parameterized};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 8] = b"FPNCKPT1";
pub const FORMAT_VERSION: u32 = 1;

/// Enough to resume the seeded data order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub version: u32,
    pub config: ModelConfig,
    pub step: u64,
    pub rng: RngState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderRecord {
    version: u32,
    encoder: EncoderKind,
    stage_channels: [usize; 4],
}

struct Block {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn collect_blocks(model: &mut dyn Parameterized, prefix: &str) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut out = Vec::new();
    model.visit_params(prefix, &mut |name: &str, p: &mut Param| {
        out.push((name.to_string(), p.shape.clone(), p.value.clone()));
    });
    out
}

fn encode(record: &impl Serialize, blocks: &[(String, Vec<usize>, Vec<f32>)]) -> Vec<u8> {
    let json = serde_json::to_vec(record).expect("records serialize");
    let mut buf =
        Vec::with_capacity(64 + json.len() + blocks.iter().map(|b| b.2.len() * 4 + b.0.len() + 16).sum::<usize>());
    buf.extend_from_slice(MAGIC);
    buf.extend((json.len() as u32).to_le_bytes());
    buf.extend(json);
    buf.extend((blocks.len() as u32).to_le_bytes());
    for (name, shape, data) in blocks {
        buf.extend((name.len() as u32).to_le_bytes());
        buf.extend(name.as_bytes());
        buf.extend((shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend((d as u32).to_le_bytes());
        }
        for v in data {
            buf.extend(v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
}

fn decode(path: &Path, bytes: &[u8]) -> Result<(serde_json::Value, BTreeMap<String, Block>)> {
    let corrupt = |what: &str| Error::input(path, format!("corrupt checkpoint: {what}"));
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::input(path, "not a checkpoint or unsupported format version"));
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let len = r.u32().ok_or_else(|| corrupt("header length"))? as usize;
    let record: serde_json::Value =
        serde_json::from_slice(r.take(len).ok_or_else(|| corrupt("header"))?).map_err(|e| corrupt(&e.to_string()))?;
    let count = r.u32().ok_or_else(|| corrupt("block count"))?;
    let mut blocks = BTreeMap::new();
    for _ in 0..count {
        let n = r.u32().ok_or_else(|| corrupt("name length"))? as usize;
        let name = std::str::from_utf8(r.take(n).ok_or_else(|| corrupt("name"))?)
            .map_err(|_| corrupt("name encoding"))?
            .to_string();
        let rank = r.u32().ok_or_else(|| corrupt("rank"))? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| corrupt("shape"))?;
        let len: usize = shape.iter().product();
        let raw = r.take(len.checked_mul(4).ok_or_else(|| corrupt("shape"))?).ok_or_else(|| corrupt("block data"))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if blocks.insert(name.clone(), Block { shape, data }).is_some() {
            return Err(corrupt(&format!("duplicate block {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok((record, blocks))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::input(path, "checkpoint not found"),
        _ => Error::io(path, e),
    })
}

/// Copies every block into the matching parameter; names and shapes must
/// agree one to one.
fn fill(path: &Path, model: &mut dyn Parameterized, prefix: &str, mut blocks: BTreeMap<String, Block>) -> Result<()> {
    let mut problem = None;
    model.visit_params(prefix, &mut |name: &str, p: &mut Param| {
        if problem.is_some() {
            return;
        }
        match blocks.remove(name) {
            None => problem = Some(format!("missing block {name}")),
            Some(b) if b.shape != p.shape => {
                problem = Some(format!("block {name} has shape {:?}, model expects {:?}", b.shape, p.shape))
            }
            Some(b) => p.value = b.data,
        }
    });
    if let Some(msg) = problem {
        return Err(Error::input(path, msg));
    }
    if let Some(extra) = blocks.keys().next() {
        return Err(Error::input(path, format!("unexpected block {extra}")));
    }
    Ok(())
}

pub fn save_checkpoint(model: &mut FpnNet, step: u64, rng: RngState, path: &Path) -> Result<()> {
    let meta = CheckpointMeta { version: FORMAT_VERSION, config: model.config().clone(), step, rng };
    let blocks = collect_blocks(model, "");
    write_atomic(path, &encode(&meta, &blocks))
}

fn parse_meta(path: &Path, record: serde_json::Value) -> Result<CheckpointMeta> {
    let meta: CheckpointMeta =
        serde_json::from_value(record).map_err(|e| Error::input(path, format!("checkpoint header: {e}")))?;
    if meta.version != FORMAT_VERSION {
        return Err(Error::input(path, format!("unsupported checkpoint version {}", meta.version)));
    }
    Ok(meta)
}

/// Rebuilds the model described by the checkpoint and restores its weights.
pub fn load_checkpoint(path: &Path) -> Result<(FpnNet, CheckpointMeta)> {
    let bytes = read(path)?;
    let (record, blocks) = decode(path, &bytes)?;
    let meta = parse_meta(path, record)?;
    let mut model = FpnNet::new(meta.config.clone(), meta.rng.seed)?;
    fill(path, &mut model, "", blocks)?;
    Ok((model, meta))
}

/// Restores weights into an existing model whose configuration must match.
pub fn load_into(model: &mut FpnNet, path: &Path) -> Result<CheckpointMeta> {
    let bytes = read(path)?;
    let (record, blocks) = decode(path, &bytes)?;
    let meta = parse_meta(path, record)?;
    fill(path, model, "", blocks)?;
    if &meta.config != model.config() {
        return Err(Error::input(path, "checkpoint configuration differs from the model"));
    }
    Ok(meta)
}

pub fn save_encoder_weights(model: &mut FpnNet, path: &Path) -> Result<()> {
    let config = model.config().clone();
    let record =
        EncoderRecord { version: FORMAT_VERSION, encoder: config.encoder, stage_channels: config.stage_channels };
    let blocks = collect_blocks(model.encoder_mut(), "");
    write_atomic(path, &encode(&record, &blocks))
}

/// Loads externally supplied encoder weights (for example converted
/// pretrained weights) into the encoder of `model`.
pub fn load_encoder_weights(model: &mut FpnNet, path: &Path) -> Result<()> {
    let bytes = read(path)?;
    let (record, blocks) = decode(path, &bytes)?;
    let record: EncoderRecord =
        serde_json::from_value(record).map_err(|e| Error::input(path, format!("encoder header: {e}")))?;
    let config = model.config();
    if record.encoder != config.encoder || record.stage_channels != config.stage_channels {
        return Err(Error::input(path, "encoder weights were built for a different encoder"));
    }
    fill(path, model.encoder_mut(), "", blocks)
}
