//! Parameter checkpoints: a JSON manifest plus one raw little-endian `f64`
//! file per parameter tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Param, Tensor};
use crate::error::{Error, Result};
use crate::io::{ensure_dir, read_f64_le, read_json, write_f64_le, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub layers: Vec<String>,
    pub params: Vec<ParamEntry>,
    pub seed: u64,
    pub step: u64,
}

pub fn save_checkpoint(
    dir: &Path,
    layers: Vec<String>,
    params: &[&Param],
    seed: u64,
    step: u64,
) -> Result<()> {
    ensure_dir(dir)?;
    let mut entries = Vec::with_capacity(params.len());
    for (i, p) in params.iter().enumerate() {
        let file = format!("{i:03}_{}.f64", p.name.replace(['/', '.'], "_"));
        write_f64_le(&dir.join(&file), p.value.data())?;
        entries.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        layers,
        params: entries,
        seed,
        step,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Loads values into `params`, which must match the manifest's order,
/// names and shapes.
pub fn load_checkpoint(dir: &Path, params: &mut [&mut Param]) -> Result<CheckpointManifest> {
    let manifest: CheckpointManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.params.len() != params.len() {
        return Err(Error::Data(format!(
            "checkpoint has {} parameters, model has {}",
            manifest.params.len(),
            params.len()
        )));
    }
    for (entry, p) in manifest.params.iter().zip(params.iter_mut()) {
        if entry.name != p.name || entry.shape != p.value.shape() {
            return Err(Error::Data(format!(
                "checkpoint parameter {} {:?} does not match model parameter {} {:?}",
                entry.name,
                entry.shape,
                p.name,
                p.value.shape()
            )));
        }
        let data = read_f64_le(&dir.join(&entry.file))?;
        p.value = Tensor::new(&entry.shape, data)?;
        p.zero_grad();
    }
    Ok(manifest)
}
