//! Checkpoint files.
//!
//! Layout: the 8-byte magic `LNMSCKPT`, a little-endian `u32` header length,
//! a JSON [`CheckpointHeader`], then every parameter block as little-endian
//! `f32` in [`Network::param_blocks`] order. When the header says so, the
//! Adam first and second moments follow in the same block order.

use std::fs;
use std::path::Path;

use lnms_core::optim::{AdamConfig, AdamState};
use lnms_core::{FeatureConfig, NetConfig, Network};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{LnmsError, Result};

pub const MAGIC: &[u8; 8] = b"LNMSCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub variant: String,
    pub train_seed: u64,
    pub config_hash: String,
    pub net: NetConfig,
    pub features: FeatureConfig,
    pub iteration: u64,
    pub adam: AdamConfig,
    pub adam_step: u64,
    pub has_optimizer_state: bool,
    pub blocks: Vec<BlockInfo>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub network: Network<f32>,
    pub optimizer: Option<AdamState<f32>>,
}

/// What a checkpoint is tagged with besides the weights.
#[derive(Debug, Clone)]
pub struct CheckpointMeta<'a> {
    pub variant: &'a str,
    pub train_seed: u64,
    pub config_hash: &'a str,
    pub features: &'a FeatureConfig,
    pub iteration: u64,
}

fn block_infos(net: &Network<f32>) -> Vec<BlockInfo> {
    let blocks = net.param_blocks();
    net.layer_names()
        .iter()
        .flat_map(|n| [format!("{n}.weight"), format!("{n}.bias")])
        .zip(blocks)
        .map(|(name, b)| BlockInfo { name, len: b.len() })
        .collect()
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(net: &Network<f32>, optimizer: Option<&AdamState<f32>>, meta: &CheckpointMeta<'_>) -> Vec<u8> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        variant: meta.variant.to_string(),
        train_seed: meta.train_seed,
        config_hash: meta.config_hash.to_string(),
        net: net.config().clone(),
        features: meta.features.clone(),
        iteration: meta.iteration,
        adam: optimizer.map(|o| o.config).unwrap_or_default(),
        adam_step: optimizer.map_or(0, |o| o.step),
        has_optimizer_state: optimizer.is_some(),
        blocks: block_infos(net),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + 4 * net.parameter_count() * 3);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for block in net.param_blocks() {
        push_f32s(&mut out, block);
    }
    if let Some(opt) = optimizer {
        for block in opt.m.iter().chain(&opt.v) {
            push_f32s(&mut out, block);
        }
    }
    out
}

pub fn save_checkpoint(
    path: &Path,
    net: &Network<f32>,
    optimizer: Option<&AdamState<f32>>,
    meta: &CheckpointMeta<'_>,
) -> Result<()> {
    fs::write(path, encode(net, optimizer, meta)).map_err(|e| LnmsError::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(format_err(self.path, "file is truncated"));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn fill(&mut self, dst: &mut [f32]) -> Result<()> {
        let raw = self.take(dst.len() * 4)?;
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
        Ok(())
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> LnmsError {
    LnmsError::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, path };
    if r.take(8)? != MAGIC {
        return Err(format_err(path, "not a checkpoint file (bad magic)"));
    }
    let len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(len)?).map_err(|e| format_err(path, format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported format version {}", header.format_version)));
    }
    let mut network = Network::<f32>::new(header.net.clone()).map_err(|e| format_err(path, e.to_string()))?;
    if block_infos(&network) != header.blocks {
        return Err(format_err(path, "parameter blocks disagree with the network config"));
    }
    for block in network.param_blocks_mut() {
        r.fill(block)?;
    }
    let optimizer = if header.has_optimizer_state {
        let sizes: Vec<usize> = header.blocks.iter().map(|b| b.len).collect();
        let mut opt = AdamState::new(header.adam, &sizes);
        opt.step = header.adam_step;
        for block in opt.m.iter_mut().chain(opt.v.iter_mut()) {
            r.fill(block)?;
        }
        Some(opt)
    } else {
        None
    };
    if !r.bytes.is_empty() {
        return Err(format_err(path, format!("{} trailing bytes", r.bytes.len())));
    }
    Ok(Checkpoint {
        header,
        network,
        optimizer,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| LnmsError::io(path, e))?;
    decode(&bytes, path)
}

/// First differing field of two serializable configs, by name.
fn first_difference(expected: &Value, found: &Value, prefix: &str) -> Option<(String, String, String)> {
    match (expected, found) {
        (Value::Object(a), Value::Object(b)) => a.iter().find_map(|(k, va)| {
            let vb = b.get(k).unwrap_or(&Value::Null);
            first_difference(va, vb, &format!("{prefix}{k}."))
        }),
        _ if expected != found => Some((prefix.trim_end_matches('.').to_string(), expected.to_string(), found.to_string())),
        _ => None,
    }
}

/// Loads a checkpoint and insists that it was built for `net` and `features`.
pub fn load_checkpoint_expecting(path: &Path, net: &NetConfig, features: &FeatureConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let pairs = [
        (serde_json::to_value(net), serde_json::to_value(&ckpt.header.net), "net."),
        (serde_json::to_value(features), serde_json::to_value(&ckpt.header.features), "features."),
    ];
    for (expected, found, prefix) in pairs {
        let (expected, found) = (expected.expect("config serializes"), found.expect("config serializes"));
        if let Some((field, expected, found)) = first_difference(&expected, &found, prefix) {
            return Err(LnmsError::Mismatch {
                path: path.to_path_buf(),
                field,
                expected,
                found,
            });
        }
    }
    Ok(ckpt)
}
