//! Single-file checkpoints.
//!
//! Layout: `TFCK`, u32 version, u32 header length, JSON header, little-endian
//! f32 payload, then a CRC32 of every preceding byte.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use timbre_nn::{Adam, AdamSlot, ParamId, Shape4, Tensor4};

use super::TrainConfig;
use crate::model::{ModelBundle, Variant};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where a training run stood when the checkpoint was written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps.
    pub step: usize,
    pub sample_rng: ChaCha8Rng,
    pub noise_rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub bundle: ModelBundle,
    pub config: Option<TrainConfig>,
    pub adam_g: Option<Adam<f32>>,
    pub adam_d: Option<Adam<f32>>,
    pub progress: Option<Progress>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct SlotEntry {
    param: String,
    step: u64,
    first_moment: usize,
    second_moment: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerEntry {
    step_count: u64,
    slots: Vec<SlotEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    domains: Vec<String>,
    variant: Variant,
    seed: u64,
    config: Option<TrainConfig>,
    progress: Option<Progress>,
    tensors: Vec<TensorEntry>,
    adam_g: Option<OptimizerEntry>,
    adam_d: Option<OptimizerEntry>,
}

fn push(payload: &mut Vec<f32>, values: &[f32]) -> usize {
    let at = payload.len();
    payload.extend_from_slice(values);
    at
}

fn optimizer_entry(bundle: &ModelBundle, adam: &Adam<f32>, payload: &mut Vec<f32>) -> OptimizerEntry {
    let slots = adam
        .slots()
        .map(|(id, slot)| SlotEntry {
            param: bundle.params().get(id).name.clone(),
            step: slot.step,
            first_moment: push(payload, &slot.first_moment),
            second_moment: push(payload, &slot.second_moment),
        })
        .collect();
    OptimizerEntry {
        step_count: adam.step_count,
        slots,
    }
}

/// Write a checkpoint; the file is replaced atomically via a temporary sibling.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bundle = &ckpt.bundle;
    let mut payload = Vec::new();
    let tensors = bundle
        .params()
        .iter()
        .map(|(_, p)| {
            let s = p.value.shape();
            TensorEntry {
                name: p.name.clone(),
                shape: [s.n, s.c, s.h, s.w],
                offset: push(&mut payload, p.value.data()),
            }
        })
        .collect();
    let adam_g = ckpt.adam_g.as_ref().map(|a| optimizer_entry(bundle, a, &mut payload));
    let adam_d = ckpt.adam_d.as_ref().map(|a| optimizer_entry(bundle, a, &mut payload));
    let header = Header {
        domains: bundle.domains().to_vec(),
        variant: bundle.variant(),
        seed: bundle.seed(),
        config: ckpt.config.clone(),
        progress: ckpt.progress.clone(),
        tensors,
        adam_g,
        adam_d,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::format(path, e))?;
    let mut bytes = Vec::with_capacity(16 + json.len() + 4 * payload.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for v in &payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    let tmp = path.with_extension("tfck.partial");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn slice<'a>(payload: &'a [f32], offset: usize, len: usize, what: &str) -> Result<&'a [f32]> {
    payload
        .get(offset..offset + len)
        .ok_or_else(|| Error::Checksum(format!("{what} lies outside the payload")))
}

fn restore_optimizer(
    bundle: &ModelBundle,
    entry: OptimizerEntry,
    config: timbre_nn::AdamConfig,
    payload: &[f32],
) -> Result<Adam<f32>> {
    let mut adam = Adam::new(config)?;
    adam.step_count = entry.step_count;
    for s in entry.slots {
        let id = bundle
            .params()
            .find(&s.param)
            .ok_or_else(|| Error::Config(format!("optimizer state for unknown parameter {}", s.param)))?;
        let len = bundle.params().value(id).len();
        adam.set_slot(
            id,
            AdamSlot {
                step: s.step,
                first_moment: slice(payload, s.first_moment, len, &s.param)?.to_vec(),
                second_moment: slice(payload, s.second_moment, len, &s.param)?.to_vec(),
            },
        );
    }
    Ok(adam)
}

/// Read and verify a checkpoint. Nothing is returned unless the checksum matches.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    if bytes.len() < 16 {
        return Err(Error::Checksum(format!("{}: truncated", path.display())));
    }
    let version = read_u32(&bytes, 4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let body_len = bytes.len() - 4;
    let stored = read_u32(&bytes, body_len);
    if crc32fast::hash(&bytes[..body_len]) != stored {
        return Err(Error::Checksum(format!("{}: CRC mismatch", path.display())));
    }
    let header_len = read_u32(&bytes, 8) as usize;
    let payload_start = 12 + header_len;
    if payload_start > body_len || !(body_len - payload_start).is_multiple_of(4) {
        return Err(Error::Checksum(format!("{}: inconsistent lengths", path.display())));
    }
    let header: Header =
        serde_json::from_slice(&bytes[12..payload_start]).map_err(|e| Error::format(path, format!("header: {e}")))?;
    let payload: Vec<f32> = bytes[payload_start..body_len]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut bundle = ModelBundle::build(&header.domains, header.variant, header.seed)?;
    if header.tensors.len() != bundle.params().len() {
        return Err(Error::Config(format!(
            "checkpoint holds {} tensors, architecture has {}",
            header.tensors.len(),
            bundle.params().len()
        )));
    }
    for t in &header.tensors {
        let id: ParamId = bundle
            .params()
            .find(&t.name)
            .ok_or_else(|| Error::Config(format!("checkpoint tensor {} not in architecture", t.name)))?;
        let shape = Shape4::new(t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
        let want = bundle.params().value(id).shape();
        if shape != want {
            return Err(Error::Config(format!(
                "tensor {}: checkpoint {shape}, architecture {want}",
                t.name
            )));
        }
        let data = slice(&payload, t.offset, shape.len(), &t.name)?.to_vec();
        *bundle.params_mut().value_mut(id) = Tensor4::from_vec(shape, data)?;
    }
    let adam_cfg = header.config.as_ref().map(|c| c.optimizer.adam()).unwrap_or_default();
    let adam_g = header
        .adam_g
        .map(|e| restore_optimizer(&bundle, e, adam_cfg, &payload))
        .transpose()?;
    let adam_d = header
        .adam_d
        .map(|e| restore_optimizer(&bundle, e, adam_cfg, &payload))
        .transpose()?;
    Ok(Checkpoint {
        bundle,
        config: header.config,
        adam_g,
        adam_d,
        progress: header.progress,
    })
}

/// Load a checkpoint and require it to match the expected domains and variant.
pub fn load_checkpoint_matching(path: impl AsRef<Path>, domains: &[String], variant: Variant) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let (found_domains, found_variant) = (ckpt.bundle.domains(), ckpt.bundle.variant());
    if found_domains != domains || found_variant != variant {
        let describe = |d: &[String], v: Variant| format!("{d:?} {v:?}");
        return Err(Error::Config(format!(
            "checkpoint architecture {} does not match {}",
            describe(found_domains, found_variant),
            describe(domains, variant)
        )));
    }
    Ok(ckpt)
}

/// Parameter values by name, for comparisons in tests and tools.
pub fn named_values(bundle: &ModelBundle) -> BTreeMap<String, Vec<f32>> {
    bundle
        .params()
        .iter()
        .map(|(_, p)| (p.name.clone(), p.value.data().to_vec()))
        .collect()
}
