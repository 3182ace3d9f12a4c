//! Checkpoints as safetensors files of little-endian `f64` tensors.
//!
//! Tensor names follow [`EncoderState::tensors`]: the position-attention
//! tensors are `p_s`, `p_e`, `w_q.{h}`, `w_k.{h}`, `b.{h}.{ss|se|es|ee}`,
//! `r.{h}`, `cls_q.{h}`, `cls_k.{h}`; encoder tensors carry prefixes such as
//! `layer.{l}.attn.q.w`. Optimizer moments, when present, are stored under
//! `adam.m.` and `adam.v.`. A single metadata entry holds the configs and the
//! step as JSON.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use crate::encoder::{AdamConfig, AdamState, EncoderConfig, EncoderState, Trainer};
use crate::error::{Error, Result};

const META_KEY: &str = "wordlattice";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub encoder: EncoderConfig,
    pub adam: Option<AdamConfig>,
    pub step: u64,
    pub seed: u64,
}

/// One `(name, shape)` row per parameter tensor.
pub fn shape_manifest(state: &EncoderState) -> Vec<(String, Vec<usize>)> {
    state.tensors().into_iter().map(|t| (t.name, t.shape)).collect()
}

fn le_bytes(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn collect(state: &EncoderState, prefix: &str, out: &mut Vec<(String, Vec<usize>, Vec<u8>)>) {
    for t in state.tensors() {
        out.push((format!("{prefix}{}", t.name), t.shape, le_bytes(t.data)));
    }
}

fn serialize(parts: Vec<(String, Vec<usize>, Vec<u8>)>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut views = Vec::with_capacity(parts.len());
    for (name, shape, bytes) in &parts {
        let view = TensorView::new(Dtype::F64, shape.clone(), bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        views.push((name.clone(), view));
    }
    let info = Some(HashMap::from([(META_KEY.to_string(), serde_json::to_string(meta)?)]));
    safetensors::serialize(views, &info).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Parameters only.
pub fn params_to_bytes(state: &EncoderState) -> Result<Vec<u8>> {
    let mut parts = Vec::new();
    collect(state, "", &mut parts);
    let meta = CheckpointMeta {
        format_version: 1,
        encoder: state.config,
        adam: None,
        step: 0,
        seed: 0,
    };
    serialize(parts, &meta)
}

/// Parameters plus optimizer moments and step, enough to resume training.
pub fn trainer_to_bytes(trainer: &Trainer) -> Result<Vec<u8>> {
    let mut parts = Vec::new();
    collect(&trainer.state, "", &mut parts);
    collect(&trainer.adam.m, "adam.m.", &mut parts);
    collect(&trainer.adam.v, "adam.v.", &mut parts);
    let meta = CheckpointMeta {
        format_version: 1,
        encoder: trainer.state.config,
        adam: Some(trainer.config),
        step: trainer.adam.step,
        seed: trainer.seed,
    };
    serialize(parts, &meta)
}

fn read_meta(bytes: &[u8]) -> Result<CheckpointMeta> {
    let (_, metadata) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let raw = metadata
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| Error::Checkpoint("missing checkpoint metadata".into()))?;
    Ok(serde_json::from_str(raw)?)
}

fn fill(tensors: &SafeTensors<'_>, state: &mut EncoderState, prefix: &str) -> Result<()> {
    for t in state.tensors_mut() {
        let name = format!("{prefix}{}", t.name);
        let view = tensors
            .tensor(&name)
            .map_err(|_| Error::Checkpoint(format!("missing tensor {name}")))?;
        if view.dtype() != Dtype::F64 || view.shape() != t.shape.as_slice() {
            return Err(Error::Shape(format!(
                "tensor {name}: expected F64 {:?}, found {:?} {:?}",
                t.shape,
                view.dtype(),
                view.shape()
            )));
        }
        for (dst, chunk) in t.data.iter_mut().zip(view.data().chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    Ok(())
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<EncoderState> {
    let meta = read_meta(bytes)?;
    let tensors = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut state = EncoderState::zeros(meta.encoder)?;
    fill(&tensors, &mut state, "")?;
    Ok(state)
}

/// Restores a trainer. A parameters-only checkpoint yields fresh moments
/// and step 0 with the default optimizer settings.
pub fn trainer_from_bytes(bytes: &[u8]) -> Result<Trainer> {
    let meta = read_meta(bytes)?;
    let tensors = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut state = EncoderState::zeros(meta.encoder)?;
    fill(&tensors, &mut state, "")?;
    let mut adam = AdamState::new(&state);
    if meta.adam.is_some() {
        fill(&tensors, &mut adam.m, "adam.m.")?;
        fill(&tensors, &mut adam.v, "adam.v.")?;
        adam.step = meta.step;
    }
    Ok(Trainer {
        state,
        adam,
        config: meta.adam.unwrap_or_default(),
        seed: meta.seed,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_trainer(trainer: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &trainer_to_bytes(trainer)?)
}

pub fn load_trainer(path: impl AsRef<Path>) -> Result<Trainer> {
    trainer_from_bytes(&fs::read(path)?)
}

pub fn save_params(state: &EncoderState, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &params_to_bytes(state)?)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<EncoderState> {
    params_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msp::{PretrainInstance, SopLabel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> EncoderState {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        EncoderState::init(EncoderConfig::toy(30), &mut rng).unwrap()
    }

    fn inst() -> PretrainInstance {
        PretrainInstance {
            token_ids: vec![0, 7, 2, 1, 9, 1],
            starts: vec![0, 1, 2, 3, 4, 5],
            ends: vec![0, 1, 2, 3, 4, 5],
            mask_positions: vec![2],
            msp_targets: vec![(2, 12)],
            sop_label: SopLabel::InOrder,
            n_chars: 3,
        }
    }

    #[test]
    fn params_roundtrip_bitwise() {
        let st = toy();
        let bytes = params_to_bytes(&st).unwrap();
        assert_eq!(params_from_bytes(&bytes).unwrap(), st);
        assert_eq!(params_to_bytes(&st).unwrap(), bytes);
    }

    #[test]
    fn documented_names_present() {
        let bytes = params_to_bytes(&toy()).unwrap();
        let t = SafeTensors::deserialize(&bytes).unwrap();
        for name in ["p_s", "p_e", "w_q.0", "w_k.3", "b.2.se", "r.1", "cls_q.0", "cls_k.3", "tok_emb"] {
            assert!(t.tensor(name).is_ok(), "{name}");
        }
        assert_eq!(t.tensor("p_s").unwrap().shape(), &[693, 16]);
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let batch = [inst()];
        let mut straight = Trainer::new(toy(), AdamConfig::default(), 3);
        let mut first = Trainer::new(toy(), AdamConfig::default(), 3);
        for _ in 0..3 {
            straight.train_step(&batch).unwrap();
            first.train_step(&batch).unwrap();
        }
        let mut resumed = trainer_from_bytes(&trainer_to_bytes(&first).unwrap()).unwrap();
        assert_eq!(resumed.step(), 3);
        let a = straight.train_step(&batch).unwrap();
        let b = resumed.train_step(&batch).unwrap();
        assert_eq!(a, b);
        assert_eq!(straight.state, resumed.state);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let bytes = params_to_bytes(&toy()).unwrap();
        let tensors = SafeTensors::deserialize(&bytes).unwrap();
        let mut other = EncoderState::init(EncoderConfig::toy(31), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(fill(&tensors, &mut other, ""), Err(Error::Shape(_))));
        assert!(params_from_bytes(b"junk").is_err());
    }
}
