//! Checkpoint container: JSON manifest + little-endian float64 blob.
//!
//! The same framing (magic, manifest length, manifest, blob) carries model
//! checkpoints and learngene-unit files; only the manifest payload differs.

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::layer::{LayerKind, LayerParams};
use super::model::{Model, ModelSpec};

pub const CONTAINER_MAGIC: &[u8; 8] = b"SDNETCK1";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Write a manifest + f64 blob container.
pub fn write_container<M: Serialize>(path: &Path, manifest: &M, blob: &[f64]) -> Result<()> {
    let manifest_bytes = serde_json::to_vec(manifest)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(CONTAINER_MAGIC)?;
    f.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    f.write_all(&manifest_bytes)?;
    let mut bytes = Vec::with_capacity(blob.len() * 8);
    for v in blob {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&bytes)?;
    Ok(())
}

/// Read back a container written by [`write_container`].
pub fn read_container<M: DeserializeOwned>(path: &Path) -> Result<(M, Vec<f64>)> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != CONTAINER_MAGIC {
        return Err(Error::CorruptBlob("bad container magic".into()));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let mlen = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; mlen];
    f.read_exact(&mut manifest_bytes)?;
    let manifest: M = serde_json::from_slice(&manifest_bytes)?;
    let mut blob_bytes = Vec::new();
    f.read_to_end(&mut blob_bytes)?;
    if blob_bytes.len() % 8 != 0 {
        return Err(Error::CorruptBlob("blob length is not a multiple of 8".into()));
    }
    let blob: Vec<f64> = blob_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((manifest, blob))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub kind: String,
    pub spec: ModelSpec,
    pub arrays: Vec<ArrayEntry>,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

/// Array names and lengths in storage order for one layer, including BN
/// running statistics (stored, but never counted as trainable).
fn layer_array_entries(li: usize, kind: &LayerKind) -> Vec<ArrayEntry> {
    let e = |name: &str, len: usize| ArrayEntry { name: format!("layer{li}.{name}"), len };
    match *kind {
        LayerKind::Conv3x3 { cin, cout } => vec![e("w", 9 * cin * cout), e("b", cout)],
        LayerKind::BatchNorm { c } => vec![
            e("gamma", c),
            e("beta", c),
            e("run_mean", c),
            e("run_var", c),
        ],
        LayerKind::FullyConnected { input, output } => {
            vec![e("w", input * output), e("b", output)]
        }
        _ => vec![],
    }
}

fn expected_arrays(spec: &ModelSpec) -> Vec<ArrayEntry> {
    spec.layers
        .iter()
        .enumerate()
        .flat_map(|(li, l)| layer_array_entries(li, &l.kind))
        .collect()
}

fn layer_storage_slices(params: &LayerParams) -> Vec<&[f64]> {
    match params {
        LayerParams::Conv { w, b } | LayerParams::Fc { w, b } => {
            vec![w.as_slice().unwrap(), b.as_slice().unwrap()]
        }
        LayerParams::BatchNorm { gamma, beta, run_mean, run_var } => vec![
            gamma.as_slice().unwrap(),
            beta.as_slice().unwrap(),
            run_mean.as_slice().unwrap(),
            run_var.as_slice().unwrap(),
        ],
        LayerParams::Empty => vec![],
    }
}

fn layer_storage_slices_mut(params: &mut LayerParams) -> Vec<&mut [f64]> {
    match params {
        LayerParams::Conv { w, b } | LayerParams::Fc { w, b } => {
            vec![w.as_slice_mut().unwrap(), b.as_slice_mut().unwrap()]
        }
        LayerParams::BatchNorm { gamma, beta, run_mean, run_var } => vec![
            gamma.as_slice_mut().unwrap(),
            beta.as_slice_mut().unwrap(),
            run_mean.as_slice_mut().unwrap(),
            run_var.as_slice_mut().unwrap(),
        ],
        LayerParams::Empty => vec![],
    }
}

/// Save a model checkpoint; round-trips are bit-exact at float64.
pub fn save_checkpoint(
    model: &Model,
    path: &Path,
    seed: Option<u64>,
    config_hash: Option<String>,
) -> Result<()> {
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: "model".into(),
        spec: model.spec.clone(),
        arrays: expected_arrays(&model.spec),
        seed,
        config_hash,
    };
    let mut blob = Vec::new();
    for p in &model.params {
        for s in layer_storage_slices(p) {
            blob.extend_from_slice(s);
        }
    }
    write_container(path, &manifest, &blob)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointManifest)> {
    let (manifest, blob): (CheckpointManifest, Vec<f64>) = read_container(path)?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch {
            expected: CHECKPOINT_FORMAT_VERSION,
            found: manifest.format_version,
        });
    }
    let expected = expected_arrays(&manifest.spec);
    if manifest.arrays.len() != expected.len()
        || manifest
            .arrays
            .iter()
            .zip(&expected)
            .any(|(a, b)| a.name != b.name || a.len != b.len)
    {
        return Err(Error::CorruptBlob(
            "manifest array order does not match the declared layer spec".into(),
        ));
    }
    let total: usize = expected.iter().map(|a| a.len).sum();
    if blob.len() != total {
        return Err(Error::CorruptBlob(format!(
            "blob holds {} values, manifest declares {total}",
            blob.len()
        )));
    }
    let mut model = Model::new(manifest.spec.clone())?;
    let mut off = 0;
    for p in &mut model.params {
        for s in layer_storage_slices_mut(p) {
            s.copy_from_slice(&blob[off..off + s.len()]);
            off += s.len();
        }
    }
    Ok((model, manifest))
}
