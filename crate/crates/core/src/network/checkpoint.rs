//! Checkpoint directories: `manifest.json` plus one raw tensor per parameter
//! (`params/`) and per Adam moment (`adam_m/`, `adam_v/`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::tensor::{raw, Adam, AdamState};

const FORMAT: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerManifest {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    config: NetworkConfig,
    config_hash: String,
    step: u64,
    params: Vec<String>,
    optimizer: Option<OptimizerManifest>,
    #[serde(default)]
    training: serde_json::Value,
}

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub step: u64,
    pub optimizer: Option<(Adam, AdamState<f32>)>,
    /// Free-form run settings stored alongside.
    pub training: serde_json::Value,
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(dir: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let dir = dir.as_ref();
    mkdir(&dir.join("params"))?;
    for (name, t) in &ckpt.network.params {
        raw::write(dir.join("params").join(format!("{name}.rt")), t)?;
    }
    let optimizer = match &ckpt.optimizer {
        Some((adam, state)) => {
            mkdir(&dir.join("adam_m"))?;
            mkdir(&dir.join("adam_v"))?;
            for (name, t) in &state.first {
                raw::write(dir.join("adam_m").join(format!("{name}.rt")), t)?;
            }
            for (name, t) in &state.second {
                raw::write(dir.join("adam_v").join(format!("{name}.rt")), t)?;
            }
            Some(OptimizerManifest {
                beta1: adam.beta1,
                beta2: adam.beta2,
                eps: adam.eps,
                step: state.step,
            })
        }
        None => None,
    };
    let manifest = Manifest {
        format: FORMAT,
        config: ckpt.network.config.clone(),
        config_hash: ckpt.network.config.hash(),
        step: ckpt.step,
        params: ckpt.network.params.keys().cloned().collect(),
        optimizer,
        training: ckpt.training.clone(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::format(&path, format!("unknown format {}", manifest.format)));
    }
    if manifest.config.hash() != manifest.config_hash {
        return Err(Error::format(&path, "config hash does not match the stored config"));
    }
    let read_all = |sub: &str| -> Result<_> {
        manifest
            .params
            .iter()
            .map(|name| Ok((name.clone(), raw::read(dir.join(sub).join(format!("{name}.rt")))?)))
            .collect::<Result<std::collections::BTreeMap<_, _>>>()
    };
    let network = Network::from_params(manifest.config.clone(), read_all("params")?)?;
    let optimizer = match &manifest.optimizer {
        Some(o) => Some((
            Adam {
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
            },
            AdamState {
                step: o.step,
                first: read_all("adam_m")?,
                second: read_all("adam_v")?,
            },
        )),
        None => None,
    };
    Ok(Checkpoint {
        network,
        step: manifest.step,
        optimizer,
        training: manifest.training,
    })
}
