//! Checkpoint directories: `manifest.json` plus `params.bin` holding every
//! parameter as little-endian `f32`, concatenated in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelSpec, MtlModel};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    /// Spec the model was originally built from.
    pub spec: ModelSpec,
    /// Original indices of the surviving filters, per backbone layer.
    pub alive_filters: Vec<Vec<usize>>,
    pub params: Vec<ParamInfo>,
    /// Relative path of the prune history (JSON lines) this checkpoint belongs to.
    pub prune_history: Option<String>,
    pub seed: u64,
}

impl CheckpointManifest {
    /// Architecture with the surviving filter counts; weights are not part of it.
    pub fn pruned_spec(&self) -> ModelSpec {
        let mut s = self.spec.clone();
        for (l, alive) in s.backbone.layers.iter_mut().zip(&self.alive_filters) {
            l.filters = alive.len();
        }
        s
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::Checkpoint {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        let m: CheckpointManifest = serde_json::from_str(&text)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint {
                path,
                msg: format!("unsupported format version {}", m.format_version),
            });
        }
        Ok(m)
    }
}

pub fn save_checkpoint<T: Scalar>(model: &MtlModel<T>, dir: &Path, prune_history: Option<&str>) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        spec: model.spec().clone(),
        alive_filters: model.origin().to_vec(),
        params: model.param_infos(),
        prune_history: prune_history.map(str::to_owned),
        seed: model.seed(),
    };
    let mut bytes = Vec::new();
    for p in model.params() {
        for &v in p.data() {
            bytes.extend_from_slice(&(v.to_f64v() as f32).to_le_bytes());
        }
    }
    fs::write(dir.join(PARAMS_FILE), bytes)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(MtlModel<T>, CheckpointManifest)> {
    let manifest = CheckpointManifest::read(dir)?;
    let bad = |msg: String| Error::Checkpoint {
        path: dir.to_path_buf(),
        msg,
    };
    let mut model = MtlModel::<T>::build(&manifest.pruned_spec(), manifest.seed)?;
    let infos = model.param_infos();
    if infos != manifest.params {
        return Err(bad("parameter layout does not match the declared architecture".into()));
    }
    let bytes = fs::read(dir.join(PARAMS_FILE))?;
    let total: usize = infos.iter().map(|i| i.shape.iter().product::<usize>()).sum();
    if bytes.len() != total * 4 {
        return Err(bad(format!("params.bin has {} bytes, expected {}", bytes.len(), total * 4)));
    }
    let mut floats = bytes
        .chunks_exact(4)
        .map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64));
    for p in model.params_mut() {
        let data: Vec<T> = floats.by_ref().take(p.numel()).collect();
        *p = Tensor::new(p.shape().to_vec(), data)?;
    }
    let (_, _, origin) = model.parts_mut();
    *origin = manifest.alive_filters.clone();
    model.set_spec(manifest.spec.clone());
    Ok((model, manifest))
}

impl<T: Scalar> MtlModel<T> {
    pub(crate) fn set_spec(&mut self, spec: ModelSpec) {
        self.spec = spec;
    }
}
