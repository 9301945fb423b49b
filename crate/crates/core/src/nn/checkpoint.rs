//! Parameter persistence: one GST1 file per tensor plus `manifest.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};
use crate::grid::{io, TensorF32};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// Writes `params` under `dir/<prefix><name>.gst` and returns the entries.
pub fn save_tensors<P: ParamSet>(
    dir: &Path,
    prefix: &str,
    params: &P,
    shapes: &[Vec<usize>],
) -> Result<Vec<TensorEntry>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for ((name, data), dims) in params.tensors().into_iter().zip(shapes) {
        let file = format!("{prefix}{name}.gst");
        let t = TensorF32::from_f64(dims.clone(), data)?;
        io::write_gst(&dir.join(&file), &t)?;
        entries.push(TensorEntry {
            name: name.to_string(),
            file,
            dims: dims.clone(),
        });
    }
    Ok(entries)
}

/// Fills every tensor of `params` from the manifest entries of the same name.
pub fn load_tensors<P: ParamSet>(dir: &Path, entries: &[TensorEntry], params: &mut P) -> Result<()> {
    for (name, dst) in params.tensors_mut() {
        let entry = entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
        let t = io::read_gst(&dir.join(&entry.file))?;
        if t.len() != dst.len() {
            return Err(Error::shape(format!(
                "tensor {name}: checkpoint has {} values, model needs {}",
                t.len(),
                dst.len()
            )));
        }
        for (d, &v) in dst.iter_mut().zip(t.data()) {
            *d = v as f64;
        }
    }
    Ok(())
}

pub fn write_manifest(dir: &Path, file: &str, manifest: &Manifest) -> Result<()> {
    let path = dir.join(file);
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(dir: &Path, file: &str) -> Result<Manifest> {
    let path = dir.join(file);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
