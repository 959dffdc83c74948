//! Checkpoint directories: `manifest.json` plus one raw little-endian `f64`
//! file per parameter, named after the parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::forward::Classifier;
use super::params::ParameterSet;
use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub spec: ModelSpec,
    pub seed: u64,
    pub parameters: Vec<ParameterEntry>,
    /// Free-form training metadata (trainer, epochs, best accuracy, ...).
    #[serde(default)]
    pub training: serde_json::Value,
}

pub fn save(dir: &Path, model: &Classifier, seed: u64, training: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let parameters = model
        .params
        .iter()
        .map(|(name, t)| ParameterEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect();
    let manifest = CheckpointManifest {
        spec: model.spec.clone(),
        seed,
        parameters,
        training,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    for (name, t) in model.params.iter() {
        let bytes: Vec<u8> = t.data().iter().flat_map(|x| x.to_le_bytes()).collect();
        fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

pub fn load(dir: &Path) -> Result<(Classifier, CheckpointManifest)> {
    let manifest_path = dir.join(MANIFEST);
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for entry in &manifest.parameters {
        let path = dir.join(&entry.name);
        let bytes = fs::read(&path)?;
        let data = read_f64s(&bytes).ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            detail: format!("{} bytes is not a whole number of f64 values", bytes.len()),
        })?;
        let t = Tensor::new(entry.shape.clone(), data).map_err(|e| Error::Format {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        names.push(entry.name.clone());
        tensors.push(t);
    }
    let params = ParameterSet::new(names, tensors)?;
    let model = Classifier::new(manifest.spec.clone(), params).map_err(|e| Error::Format {
        path: manifest_path.display().to_string(),
        detail: e.to_string(),
    })?;
    Ok((model, manifest))
}

pub(crate) fn read_f64s(bytes: &[u8]) -> Option<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let model = Classifier::build(ModelSpec::toy_adaptive(5), 11).unwrap();
        save(dir.path(), &model, 11, serde_json::json!({"epochs": 3})).unwrap();
        let (back, manifest) = load(dir.path()).unwrap();
        assert_eq!(back, model);
        assert_eq!(manifest.seed, 11);
        assert_eq!(manifest.training["epochs"], 3);
        assert!(dir.path().join("head.kernel").is_file());
    }

    #[test]
    fn truncated_blob_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let model = Classifier::build(ModelSpec::toy_adaptive(5), 1).unwrap();
        save(dir.path(), &model, 1, serde_json::Value::Null).unwrap();
        fs::write(dir.path().join("head.bias"), [0u8; 12]).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Format { .. })));
    }
}
