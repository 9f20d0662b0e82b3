use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tensorkit::{AdamState, Rng, RngState, Tensor};

use super::{Optimizers, TrainConfig, Trainer};
use crate::error::{MunitError, Result};
use crate::model::{translators, Trainable};

pub const CHECKPOINT_VERSION: &str = "munit-ckpt-v1";

/// Location of one tensor in the companion blob. Offsets and lengths are in
/// bytes; values are little-endian `f32`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub length: usize,
}

/// JSON half of a training checkpoint.
///
/// Entries list every parameter in model order, then the Adam first and second
/// moments of each optimizer group as `adam.<group>.m.<param>` and
/// `adam.<group>.v.<param>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: String,
    pub step: u64,
    pub config: TrainConfig,
    pub entries: Vec<BlobEntry>,
    pub rng: RngState,
    pub adam_steps: AdamSteps,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdamSteps {
    pub gen: u64,
    pub dis: u64,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Packs named tensors into consecutive little-endian `f32` ranges.
pub fn write_blob<'a>(items: impl IntoIterator<Item = (String, &'a [usize], &'a [f32])>) -> (Vec<BlobEntry>, Vec<u8>) {
    let mut entries = Vec::new();
    let mut bytes = Vec::new();
    for (name, shape, data) in items {
        let offset = bytes.len();
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(BlobEntry {
            name,
            shape: shape.to_vec(),
            offset,
            length: bytes.len() - offset,
        });
    }
    (entries, bytes)
}

/// Unpacks tensors after checking that the entries tile the blob exactly.
pub fn read_blob(entries: &[BlobEntry], bytes: &[u8], path: &Path) -> Result<Vec<Tensor<f32>>> {
    let bad = |reason: String| MunitError::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let mut sorted: Vec<&BlobEntry> = entries.iter().collect();
    sorted.sort_by_key(|e| e.offset);
    let mut cursor = 0usize;
    for e in &sorted {
        if e.offset != cursor {
            return Err(bad(format!(
                "entry `{}` starts at byte {} but the previous entry ends at {cursor}",
                e.name, e.offset
            )));
        }
        let numel: usize = e.shape.iter().product();
        if e.length != numel * 4 {
            return Err(bad(format!(
                "entry `{}` has length {} bytes, shape {:?} needs {}",
                e.name,
                e.length,
                e.shape,
                numel * 4
            )));
        }
        cursor += e.length;
    }
    if cursor != bytes.len() {
        return Err(bad(format!(
            "entries cover {cursor} bytes but the blob holds {} (truncated or padded)",
            bytes.len()
        )));
    }
    entries
        .iter()
        .map(|e| {
            let data = bytes[e.offset..e.offset + e.length]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Ok(Tensor::new(e.shape.clone(), data)?)
        })
        .collect()
}

pub(crate) fn write_pair(stem: &Path, manifest_json: String, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = stem.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| MunitError::io(parent, e))?;
    }
    let json_path = with_ext(stem, "json");
    let bin_path = with_ext(stem, "bin");
    std::fs::write(&bin_path, bytes).map_err(|e| MunitError::io(&bin_path, e))?;
    std::fs::write(&json_path, manifest_json).map_err(|e| MunitError::io(&json_path, e))
}

pub(crate) fn read_pair(stem: &Path) -> Result<(String, Vec<u8>, PathBuf)> {
    let json_path = with_ext(stem, "json");
    let bin_path = with_ext(stem, "bin");
    let json = std::fs::read_to_string(&json_path).map_err(|e| MunitError::io(&json_path, e))?;
    let bytes = std::fs::read(&bin_path).map_err(|e| MunitError::io(&bin_path, e))?;
    Ok((json, bytes, json_path))
}

fn moment_names(model: &dyn Trainable, state: &AdamState<f32>, group: &str) -> Vec<(String, String)> {
    state
        .ids
        .iter()
        .map(|&id| {
            let name = &model.params().entry(id).name;
            (format!("adam.{group}.m.{name}"), format!("adam.{group}.v.{name}"))
        })
        .collect()
}

pub(super) fn save(stem: &Path, t: &Trainer) -> Result<()> {
    let model = t.model.as_ref();
    let store = model.params();
    let mut items: Vec<(String, &[usize], &[f32])> = store
        .entries()
        .iter()
        .map(|e| (e.name.clone(), e.tensor.shape(), e.tensor.data()))
        .collect();
    for (group, state) in [("gen", &t.opt.gen), ("dis", &t.opt.dis)] {
        for (k, (m, v)) in moment_names(model, state, group).into_iter().enumerate() {
            let shape = store.get(state.ids[k]).shape();
            items.push((m, shape, &state.m[k]));
            items.push((v, shape, &state.v[k]));
        }
    }
    let (entries, bytes) = write_blob(items);
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION.to_string(),
        step: t.step,
        config: t.config.clone(),
        entries,
        rng: t.rng.state(),
        adam_steps: AdamSteps {
            gen: t.opt.gen.step,
            dis: t.opt.dis.step,
        },
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| MunitError::json("checkpoint manifest", e))?;
    write_pair(stem, json, &bytes)
}

pub(super) type Loaded = (TrainConfig, Box<dyn Trainable>, Optimizers, Rng, u64);

pub(super) fn load(stem: &Path) -> Result<Loaded> {
    let (json, bytes, json_path) = read_pair(stem)?;
    let bad = |reason: String| MunitError::Checkpoint {
        path: json_path.clone(),
        reason,
    };
    let manifest: CheckpointManifest =
        serde_json::from_str(&json).map_err(|e| MunitError::json(json_path.display().to_string(), e))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "version `{}` is not `{CHECKPOINT_VERSION}`",
            manifest.version
        )));
    }
    let tensors = read_blob(&manifest.entries, &bytes, &json_path)?;
    let mut by_name: std::collections::HashMap<&str, Tensor<f32>> = manifest
        .entries
        .iter()
        .map(|e| e.name.as_str())
        .zip(tensors)
        .collect();

    let config = manifest.config.clone();
    let mut model = (translators().get(&config.translator)?)(&config.arch(), config.seed)?;
    let expected = model.params().len() + 2 * (model.params().group_ids("gen").len() + model.params().group_ids("dis").len());
    if manifest.entries.len() != expected {
        return Err(bad(format!(
            "{} entries, the model needs {expected}",
            manifest.entries.len()
        )));
    }
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let name = model.params().entry(id).name.clone();
        let t = by_name
            .remove(name.as_str())
            .ok_or_else(|| bad(format!("missing parameter `{name}`")))?;
        let dst = model.params_mut().get_mut(id);
        if dst.shape() != t.shape() {
            return Err(bad(format!(
                "parameter `{name}` has shape {:?}, the model needs {:?}",
                t.shape(),
                dst.shape()
            )));
        }
        dst.data_mut().copy_from_slice(t.data());
    }
    let mut opt = Optimizers::new(model.as_ref());
    for (group, state, steps) in [
        ("gen", &mut opt.gen, manifest.adam_steps.gen),
        ("dis", &mut opt.dis, manifest.adam_steps.dis),
    ] {
        state.step = steps;
        for (k, (m, v)) in moment_names(model.as_ref(), state, group).into_iter().enumerate() {
            for (name, dst) in [(m, &mut state.m[k]), (v, &mut state.v[k])] {
                let t = by_name
                    .remove(name.as_str())
                    .ok_or_else(|| bad(format!("missing optimizer entry `{name}`")))?;
                if t.numel() != dst.len() {
                    return Err(bad(format!("optimizer entry `{name}` has the wrong size")));
                }
                dst.copy_from_slice(t.data());
            }
        }
    }
    Ok((config, model, opt, Rng::from_state(manifest.rng), manifest.step))
}
