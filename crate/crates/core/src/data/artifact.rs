//! Binary model artifact.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "FPDSTACK"
//! version   u32
//! meta_len  u64
//! meta      meta_len bytes of JSON
//! n_weights u64
//! weights   n_weights × f64
//! crc32     u32 over every preceding byte
//! ```
//!
//! Weights are stored as `f64` regardless of the stack's scalar type, in
//! the order of each module's `state()`: levels finest first, then the
//! transient module.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::FaultKind;
use super::Resolution;
use crate::error::{Error, Result};
use crate::hierarchy::{ExtractorStack, LevelModule, StackConfig, TransientModule};
use crate::nn::{LayerSpec, Module, Network};
use crate::scalar::Scalar;
use crate::training::TargetNorm;

pub const ARTIFACT_MAGIC: [u8; 8] = *b"FPDSTACK";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModuleMeta {
    specs: Vec<LayerSpec>,
    target_norm: TargetNorm,
    tensor_lens: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct LevelMeta {
    level: Resolution,
    #[serde(flatten)]
    module: ModuleMeta,
}

#[derive(Serialize, Deserialize)]
struct TransientMeta {
    classes: Vec<FaultKind>,
    #[serde(flatten)]
    module: ModuleMeta,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    config: StackConfig,
    train_config_hash: String,
    levels: Vec<LevelMeta>,
    transient: Option<TransientMeta>,
}

fn module_meta<T: Scalar>(net: &Network<T>, norm: &TargetNorm, weights: &mut Vec<f64>) -> ModuleMeta {
    let state = net.state();
    let tensor_lens = state.iter().map(|t| t.len()).collect();
    for t in state {
        weights.extend(t.iter().map(|v| v.to_f64_lossy()));
    }
    ModuleMeta {
        specs: net.specs(),
        target_norm: norm.clone(),
        tensor_lens,
    }
}

/// Serializes a finalized stack into the artifact byte format.
pub fn encode_stack<T: Scalar>(stack: &ExtractorStack<T>) -> Result<Vec<u8>> {
    if !stack.is_frozen() {
        return Err(Error::Artifact("only a finalized stack can be saved".into()));
    }
    let mut weights = Vec::new();
    let levels = stack
        .modules
        .values()
        .map(|m| LevelMeta {
            level: m.level,
            module: module_meta(&m.net, &m.target_norm, &mut weights),
        })
        .collect();
    let transient = stack.transient.as_ref().map(|t| TransientMeta {
        classes: t.classes.clone(),
        module: module_meta(&t.net, &t.target_norm, &mut weights),
    });
    let meta = serde_json::to_vec(&Metadata {
        config: stack.config.clone(),
        train_config_hash: stack.train_config_hash.clone(),
        levels,
        transient,
    })?;
    let mut out = Vec::with_capacity(32 + meta.len() + 8 * weights.len());
    out.extend_from_slice(&ARTIFACT_MAGIC);
    out.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(weights.len() as u64).to_le_bytes());
    for w in &weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn save_stack<T: Scalar>(stack: &ExtractorStack<T>, path: &Path) -> Result<()> {
    let bytes = encode_stack(stack)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Artifact("artifact is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn restore<T: Scalar>(meta: &ModuleMeta, weights: &[f64], pos: &mut usize) -> Result<Network<T>> {
    // the RNG only fills values that are overwritten below
    let mut net = Network::build(&meta.specs, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut state = net.state_mut();
    if state.len() != meta.tensor_lens.len() {
        return Err(Error::Artifact(format!(
            "architecture has {} tensors, artifact lists {}",
            state.len(),
            meta.tensor_lens.len()
        )));
    }
    for (t, &len) in state.iter_mut().zip(&meta.tensor_lens) {
        if t.len() != len {
            return Err(Error::Artifact(format!("tensor of {} values stored with {len}", t.len())));
        }
        let src = weights
            .get(*pos..*pos + len)
            .ok_or_else(|| Error::Artifact("fewer weights than the architecture needs".into()))?;
        for (dst, &v) in t.iter_mut().zip(src) {
            *dst = T::of(v);
        }
        *pos += len;
    }
    Ok(net)
}

/// Parses artifact bytes. Checks the magic, then the checksum, then the
/// format version, before reading any content.
pub fn decode_stack<T: Scalar>(bytes: &[u8]) -> Result<ExtractorStack<T>> {
    if bytes.len() < ARTIFACT_MAGIC.len() || bytes[..ARTIFACT_MAGIC.len()] != ARTIFACT_MAGIC {
        return Err(Error::Artifact("not a model artifact (bad magic bytes)".into()));
    }
    if bytes.len() < ARTIFACT_MAGIC.len() + 4 + 4 {
        return Err(Error::Artifact("artifact is truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader { bytes: body, pos: ARTIFACT_MAGIC.len() };
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != ARTIFACT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: ARTIFACT_VERSION,
        });
    }
    let meta_len = r.u64()? as usize;
    let meta: Metadata = serde_json::from_slice(r.take(meta_len)?)?;
    let n = r.u64()? as usize;
    let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Artifact("weight count overflows".into()))?)?;
    if r.pos != body.len() {
        return Err(Error::Artifact("trailing bytes after the weights".into()));
    }
    let weights: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let mut stack = ExtractorStack::new(meta.config)?;
    stack.train_config_hash = meta.train_config_hash;
    let mut pos = 0;
    for l in &meta.levels {
        let net = restore(&l.module, &weights, &mut pos)?;
        stack.modules.insert(
            l.level,
            LevelModule {
                level: l.level,
                net,
                target_norm: l.module.target_norm.clone(),
                heads: None,
            },
        );
    }
    if let Some(t) = &meta.transient {
        let net = restore(&t.module, &weights, &mut pos)?;
        stack.transient = Some(TransientModule {
            net,
            target_norm: t.module.target_norm.clone(),
            classes: t.classes.clone(),
            heads: None,
        });
    }
    if pos != weights.len() {
        return Err(Error::Artifact(format!("{} unused weights", weights.len() - pos)));
    }
    stack.mark_frozen();
    Ok(stack)
}

pub fn load_stack<T: Scalar>(path: &Path) -> Result<ExtractorStack<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_stack(&bytes)
}
