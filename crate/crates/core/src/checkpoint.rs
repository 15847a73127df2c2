//! Checkpoint directories: `manifest.json` + `params.bin` (little-endian f32).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{Arch, Classifier};
use crate::codec::{RicArch, RicModel};
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const SCHEMA_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Descriptor {
    Classifier { arch: Arch, input: (usize, usize, usize), num_classes: usize },
    Ric(RicArch),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub descriptor: Descriptor,
    pub tensors: Vec<TensorEntry>,
    pub blob_sha256: String,
    /// Classifier id or model id, as embedded in ciphertext metadata.
    pub content_id: String,
    #[serde(default)]
    pub metrics: serde_json::Value,
}

fn write(dir: &Path, descriptor: Descriptor, store: &ParamStore, content_id: String, metrics: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blob = store.to_bytes();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        descriptor,
        tensors: store
            .names()
            .iter()
            .zip(store.tensors())
            .map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() })
            .collect(),
        blob_sha256: hex::encode(Sha256::digest(&blob)),
        content_id,
        metrics,
    };
    let bp = dir.join(BLOB);
    fs::write(&bp, &blob).map_err(|e| Error::io(&bp, e))?;
    let mp = dir.join(MANIFEST);
    fs::write(&mp, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mp, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let mp = dir.join(MANIFEST);
    let raw = fs::read(&mp).map_err(|e| Error::io(&mp, e))?;
    let m: Manifest = serde_json::from_slice(&raw)?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(Error::Checkpoint(format!("unsupported schema version {}", m.schema_version)));
    }
    Ok(m)
}

fn read_blob(dir: &Path, m: &Manifest, store: &ParamStore) -> Result<Vec<u8>> {
    let layout: Vec<TensorEntry> = store
        .names()
        .iter()
        .zip(store.tensors())
        .map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() })
        .collect();
    if layout != m.tensors {
        return Err(Error::Checkpoint("tensor layout does not match the architecture".into()));
    }
    let bp = dir.join(BLOB);
    let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    if hex::encode(Sha256::digest(&blob)) != m.blob_sha256 {
        return Err(Error::Checkpoint(format!("{} does not match its manifest hash", bp.display())));
    }
    Ok(blob)
}

pub fn save_classifier(dir: &Path, clf: &Classifier, metrics: serde_json::Value) -> Result<()> {
    let d = Descriptor::Classifier { arch: clf.arch, input: clf.input, num_classes: clf.num_classes };
    write(dir, d, clf.params(), clf.id(), metrics)
}

/// Loads a classifier; the handle comes back frozen.
pub fn load_classifier(dir: &Path) -> Result<Classifier> {
    let m = read_manifest(dir)?;
    let Descriptor::Classifier { arch, input, num_classes } = m.descriptor else {
        return Err(Error::Checkpoint(format!("{} is not a classifier checkpoint", dir.display())));
    };
    let mut clf = Classifier::new(arch, input, num_classes, 0)?;
    let blob = read_blob(dir, &m, clf.params())?;
    clf.load_params(&blob)?;
    clf.freeze();
    if clf.id() != m.content_id {
        return Err(Error::Checkpoint("classifier id mismatch after load".into()));
    }
    Ok(clf)
}

pub fn save_ric(dir: &Path, model: &RicModel, metrics: serde_json::Value) -> Result<()> {
    write(dir, Descriptor::Ric(model.arch.clone()), model.params(), model.id(), metrics)
}

pub fn load_ric(dir: &Path) -> Result<RicModel> {
    let m = read_manifest(dir)?;
    let Descriptor::Ric(arch) = m.descriptor.clone() else {
        return Err(Error::Checkpoint(format!("{} is not a codec checkpoint", dir.display())));
    };
    let mut model = RicModel::new(arch, 0)?;
    let blob = read_blob(dir, &m, model.params())?;
    model.load_params(&blob)?;
    if model.id() != m.content_id {
        return Err(Error::Checkpoint("model id mismatch after load".into()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn classifier_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let clf = Classifier::new(Arch::MnistCnn5, (1, 28, 28), 10, 5).unwrap();
        save_classifier(dir.path(), &clf, serde_json::json!({"acc": 1.0})).unwrap();
        let back = load_classifier(dir.path()).unwrap();
        assert!(back.is_frozen());
        let x = Tensor::full(&[1, 1, 28, 28], 0.3);
        assert_eq!(clf.logits(&x).unwrap(), back.logits(&x).unwrap());
    }

    #[test]
    fn tampered_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = RicModel::new(RicArch { feature_width: 2, branch_width: 2, ..RicArch::new((1, 8, 8), 0.8) }, 1).unwrap();
        save_ric(dir.path(), &model, serde_json::Value::Null).unwrap();
        assert_eq!(load_ric(dir.path()).unwrap().id(), model.id());
        let bp = dir.path().join(BLOB);
        let mut b = fs::read(&bp).unwrap();
        b[0] ^= 1;
        fs::write(&bp, b).unwrap();
        assert!(matches!(load_ric(dir.path()), Err(Error::Checkpoint(_))));
        assert!(load_classifier(dir.path()).is_err());
    }
}
