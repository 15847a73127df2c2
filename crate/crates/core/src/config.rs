//! Experiment configuration (TOML). Every field has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::AttackConfig;
use crate::classifier::{Arch, ClassifierHyper};
use crate::codec::{RicArch, Variant};
use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSection {
    pub arch: Arch,
    #[serde(flatten)]
    pub hyper: ClassifierHyper,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self { arch: Arch::MnistCnn5, hyper: ClassifierHyper::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub lambda: f32,
    pub feature_width: usize,
    pub branch_width: usize,
    pub kernels: Vec<usize>,
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { lambda: 0.8, feature_width: 16, branch_width: 16, kernels: vec![3, 5, 7], init_seed: 3 }
    }
}

impl ModelSection {
    pub fn arch(&self, input: (usize, usize, usize), variant: Variant) -> RicArch {
        RicArch {
            input,
            feature_width: self.feature_width,
            branch_width: self.branch_width,
            kernels: self.kernels.clone(),
            variant,
            lambda: self.lambda,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub images: usize,
    pub keys: usize,
    pub key_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { images: 1000, keys: 8, key_seed: 4242 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BruteForceSection {
    pub images: usize,
    pub wrong_seeds: usize,
    /// Seeds are drawn uniformly from `[0, seed_range)`.
    pub seed_range: u64,
    pub correct_key: u64,
    pub sampler_seed: u64,
}

impl Default for BruteForceSection {
    fn default() -> Self {
        Self { images: 100, wrong_seeds: 50, seed_range: 1 << 32, correct_key: 20240607, sampler_seed: 555 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KpaSection {
    pub n_pairs: usize,
    pub held_out: usize,
    pub depth: usize,
    pub base_width: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for KpaSection {
    fn default() -> Self {
        Self { n_pairs: 500, held_out: 100, depth: 4, base_width: 32, epochs: 30, batch: 16, lr: 1e-3, seed: 21 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudSection {
    pub eta1: f32,
    pub eta2: f32,
    pub latent_dim: usize,
    pub ciphertexts: usize,
    pub held_out: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub disc_real: usize,
    pub disc_epochs: usize,
    pub seed: u64,
}

impl Default for CloudSection {
    fn default() -> Self {
        Self {
            eta1: 0.1,
            eta2: 0.01,
            latent_dim: 32,
            ciphertexts: 1000,
            held_out: 100,
            epochs: 15,
            batch: 32,
            lr: 1e-3,
            disc_real: 1000,
            disc_epochs: 3,
            seed: 31,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundSection {
    pub m: u32,
    pub sigma: f64,
    pub z: usize,
    pub pixels: usize,
    pub key_pairs: usize,
    pub ciphertexts: usize,
    pub seed: u64,
}

impl Default for BoundSection {
    fn default() -> Self {
        Self { m: 1, sigma: 1e-3, z: 50, pixels: 256, key_pairs: 5, ciphertexts: 10, seed: 77 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub deterministic: bool,
    pub dataset: DatasetSpec,
    pub classifier: ClassifierSection,
    pub model: ModelSection,
    pub attack: AttackConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub bruteforce: BruteForceSection,
    pub kpa: KpaSection,
    pub cloud: CloudSection,
    pub bound: BoundSection,
    /// Epoch budget for each point of the lambda sweep.
    pub sweep_epochs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("ric-out"),
            deterministic: true,
            dataset: DatasetSpec::default(),
            classifier: ClassifierSection::default(),
            model: ModelSection::default(),
            attack: AttackConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            bruteforce: BruteForceSection::default(),
            kpa: KpaSection::default(),
            cloud: CloudSection::default(),
            bound: BoundSection::default(),
            sweep_epochs: 4,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&raw).map_err(|e| Error::Data { path: path.to_path_buf(), msg: e.to_string() })
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Invalid(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// sha256 of the canonical TOML form, embedded in reports.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Training config with the shared attack settings applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { attack: self.attack, ..self.train.clone() }
    }
}

/// Stable short hash of any serialisable value, for cache directory names.
pub fn short_hash<T: Serialize>(v: &T) -> String {
    let bytes = serde_json::to_vec(v).expect("serialisable");
    hex::encode(&Sha256::digest(&bytes)[..6])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_reference_hyperparameters() {
        let c = ExperimentConfig::default();
        assert_eq!(c.model.lambda, 0.8);
        assert_eq!(c.train.loss.beta, 10.0);
        assert_eq!(c.attack.g1, 5.0);
        assert_eq!(c.train.loss.g2, 5.0);
        assert_eq!(c.train.lr, 1e-4);
        assert_eq!(c.kpa.n_pairs, 500);
    }

    #[test]
    fn toml_roundtrip_and_partial_files() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml(), c.to_toml());
        let partial = ExperimentConfig::from_toml("[model]\nlambda = 0.5\n").unwrap();
        assert_eq!(partial.model.lambda, 0.5);
        assert_eq!(partial.train, TrainConfig::default());
        assert!(ExperimentConfig::from_toml("[model]\nlambda = \"x\"").is_err());
    }
}
