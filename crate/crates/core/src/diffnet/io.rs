//! Network weights on disk: `network.json` plus one FCT1 file per parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetError, Network, NetworkSpec};
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const NETWORK_MANIFEST: &str = "network.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParameterEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkManifest {
    format_version: u32,
    seed: u64,
    parameter_count: usize,
    spec: NetworkSpec,
    parameters: Vec<ParameterEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NetError + '_ {
    move |source| NetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_network(net: &Network<f32>, dir: impl AsRef<Path>) -> Result<(), NetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::new();
    for p in net.params() {
        let file = format!("{}.fct1", p.name);
        let shape = if p.shape.is_empty() { vec![1] } else { p.shape.clone() };
        write_tensor(&Tensor::from_f32(shape, p.value.clone())?, dir.join(&file))?;
        entries.push(ParameterEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            file,
        });
    }
    let manifest = NetworkManifest {
        format_version: FORMAT_VERSION,
        seed: net.seed(),
        parameter_count: net.parameter_count(),
        spec: net.spec().clone(),
        parameters: entries,
    };
    let path = dir.join(NETWORK_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

pub fn load_network(dir: impl AsRef<Path>) -> Result<Network<f32>, NetError> {
    let dir = dir.as_ref();
    let path = dir.join(NETWORK_MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: NetworkManifest =
        serde_json::from_str(&text).map_err(|e| NetError::Manifest(format!("{}: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(NetError::Manifest(format!(
            "format version {} not supported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let mut net = Network::<f32>::zeroed(manifest.spec, manifest.seed)?;
    if manifest.parameters.len() != net.params().len() {
        return Err(NetError::Manifest(format!(
            "manifest lists {} parameters, architecture has {}",
            manifest.parameters.len(),
            net.params().len()
        )));
    }
    for (entry, param) in manifest.parameters.iter().zip(net.params_mut()) {
        if entry.name != param.name || entry.shape != param.shape {
            return Err(NetError::Manifest(format!(
                "parameter {} {:?} does not match architecture ({} {:?})",
                entry.name, entry.shape, param.name, param.shape
            )));
        }
        let t = read_tensor(dir.join(&entry.file))?;
        let values = t
            .as_f32()
            .ok_or_else(|| NetError::Manifest(format!("{} is not f32", entry.file)))?;
        if values.len() != param.value.len() {
            return Err(NetError::Manifest(format!("{} has the wrong length", entry.file)));
        }
        param.value.copy_from_slice(values);
    }
    Ok(net)
}
