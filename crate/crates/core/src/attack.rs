//! Targeted attacks on random noise images (noise-like adversarial examples).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{argmax, Classifier};
use crate::error::{Error, Result};
use crate::keystream::{generate_rni, RandomNoisyImage, SecretKey};
use crate::nn::{AdamHyper, AdamSlot, Graph};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub g1: f32,
    pub max_iters: usize,
    pub step_size: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_eps: f32,
    pub early_stop: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { g1: 5.0, max_iters: 1000, step_size: 0.01, adam_beta1: 0.9, adam_beta2: 0.999, adam_eps: 1e-8, early_stop: true }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.g1 >= 0.0) || self.max_iters == 0 || !(self.step_size > 0.0) {
            return Err(Error::Invalid(format!("attack config needs g1 >= 0, max_iters >= 1, step > 0: {self:?}")));
        }
        Ok(())
    }

    fn adam(&self) -> AdamHyper {
        AdamHyper { lr: self.step_size, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }
}

/// `(max_{i≠t} z_i − z_t, argmax_{i≠t} z_i)`; ties go to the lowest index.
pub fn margin_of(logits: &[f32], target: usize) -> (f32, usize) {
    let mut best = f32::NEG_INFINITY;
    let mut arg = usize::MAX;
    for (i, &z) in logits.iter().enumerate() {
        if i != target && z > best {
            best = z;
            arg = i;
        }
    }
    (best - logits[target], arg)
}

/// `max{max_{i≠t} z_i − z_t, −g}`.
pub fn margin_loss(logits: &[f32], target: usize, g: f32) -> Result<f32> {
    if logits.len() < 2 {
        return Err(Error::Invalid("margin loss needs at least two logits".into()));
    }
    if target >= logits.len() {
        return Err(Error::Invalid(format!("target {target} out of range for {} logits", logits.len())));
    }
    Ok(margin_of(logits, target).0.max(-g))
}

/// An RNI plus the perturbation that makes the classifier output `target_label`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseAdversarialExample {
    pub base: RandomNoisyImage,
    /// `n + Δ`, exactly inside `[0,1]`.
    pub adv: Tensor,
    pub target_label: usize,
    /// `z_target − max_{i≠target} z_i` at `adv`.
    pub achieved_margin: f32,
    pub success: bool,
    pub iters: usize,
}

impl NoiseAdversarialExample {
    /// `Δ = adv − n`.
    pub fn delta(&self) -> Tensor {
        self.adv.zip_map(&self.base.values, |a, n| a - n).expect("same shape")
    }

    /// `adv` as a `[1,c,h,w]` batch.
    pub fn adv_batch(&self) -> Tensor {
        let (c, h, w) = self.base.dims();
        self.adv.clone().reshape(&[1, c, h, w]).expect("same length")
    }

    /// sha256 of the little-endian f32 bytes of `adv`.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in self.adv.data() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn logits_and_grad(clf: &Classifier, x: &Tensor, target: usize, g1: f32) -> (Vec<f32>, Tensor) {
    let mut g = Graph::new();
    let p = g.bind(clf.params(), false);
    let xi = g.input_grad(x.clone());
    let z = clf.forward(&mut g, &p, xi);
    let m = g.margin_loss(z, &[target], g1);
    let l = g.mean(m);
    let grads = g.backward(l);
    let grad = grads.of(xi).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
    (g.value(z).data().to_vec(), grad)
}

/// Adam on Δ minimising the floored margin loss, projecting `n+Δ` into
/// `[0,1]` after every step. Single-threaded and batch-size one, so the
/// result is a pure function of its inputs.
pub fn craft_nae(clf: &Classifier, rni: &RandomNoisyImage, target: usize, cfg: &AttackConfig) -> Result<NoiseAdversarialExample> {
    cfg.validate()?;
    if rni.dims() != clf.input {
        return Err(Error::Shape(format!("rni {:?} vs classifier input {:?}", rni.dims(), clf.input)));
    }
    if target >= clf.num_classes {
        return Err(Error::Invalid(format!("target {target} >= {} classes", clf.num_classes)));
    }
    let hyper = cfg.adam();
    let mut x = rni.batch();
    let mut slot = AdamSlot::new(x.len());
    let mut best = (f32::INFINITY, x.clone(), 0usize);
    let mut iters = 0;
    loop {
        let (z, grad) = logits_and_grad(clf, &x, target, cfg.g1);
        let (m, _) = margin_of(&z, target);
        if m < best.0 {
            best = (m, x.clone(), iters);
        }
        if (cfg.early_stop && m <= -cfg.g1) || iters == cfg.max_iters {
            break;
        }
        iters += 1;
        slot.update(&hyper, iters as u64, x.data_mut(), grad.data());
        for v in x.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    let (m, adv, _) = best;
    let adv = adv.reshape(rni.values.shape())?;
    let success = m <= -cfg.g1 && {
        let (z, _) = logits_and_grad(clf, &adv.clone().reshape(&[1, clf.input.0, clf.input.1, clf.input.2])?, target, cfg.g1);
        argmax(&z) == target
    };
    Ok(NoiseAdversarialExample { base: rni.clone(), adv, target_label: target, achieved_margin: -m, success, iters })
}

/// Regenerates the RNI for `key` and crafts the NAE for `target`.
pub fn craft_for_key(clf: &Classifier, key: SecretKey, target: usize, cfg: &AttackConfig) -> Result<NoiseAdversarialExample> {
    let rni = generate_rni(key, clf.input)?;
    craft_nae(clf, &rni, target, cfg)
}

/// `(argmax label, z_target − max_{i≠target} z_i)` at the NAE.
pub fn verify_nae(clf: &Classifier, nae: &NoiseAdversarialExample) -> Result<(usize, f32)> {
    if nae.base.dims() != clf.input {
        return Err(Error::Shape(format!("nae {:?} vs classifier input {:?}", nae.base.dims(), clf.input)));
    }
    let z = clf.logits(&nae.adv_batch())?;
    let (m, _) = margin_of(z.data(), nae.target_label);
    Ok((argmax(z.data()), -m))
}

/// Memoised NAEs per `(key, target)`; crafting is the dominant cost of
/// encrypting or decrypting many images under few keys.
#[derive(Default)]
pub struct NaeCache {
    map: HashMap<(SecretKey, usize), NoiseAdversarialExample>,
}

impl NaeCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_craft(&mut self, clf: &Classifier, key: SecretKey, target: usize, cfg: &AttackConfig) -> Result<&NoiseAdversarialExample> {
        match self.map.entry((key, target)) {
            std::collections::hash_map::Entry::Occupied(e) => Ok(e.into_mut()),
            std::collections::hash_map::Entry::Vacant(e) => Ok(e.insert(craft_for_key(clf, key, target, cfg)?)),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Arch;

    #[test]
    fn margin_loss_examples() {
        assert_eq!(margin_loss(&[10.0, 0.0], 0, 5.0).unwrap(), -5.0);
        assert_eq!(margin_loss(&[0.0, 10.0], 0, 5.0).unwrap(), 10.0);
        assert_eq!(margin_loss(&[3.0, 1.0, 2.0], 2, 5.0).unwrap(), 1.0);
        assert!(margin_loss(&[1.0], 0, 5.0).is_err());
    }

    fn tiny() -> Classifier {
        Classifier::new(Arch::MnistCnn5, (1, 28, 28), 10, 11).unwrap()
    }

    #[test]
    fn already_satisfied_gives_zero_delta() {
        let clf = tiny();
        let rni = generate_rni(SecretKey::new(1), clf.input).unwrap();
        let z = clf.logits(&rni.batch()).unwrap();
        let t = argmax(z.data());
        let (m, _) = margin_of(z.data(), t);
        let cfg = AttackConfig { g1: -m * 0.5, ..AttackConfig::default() };
        let nae = craft_nae(&clf, &rni, t, &cfg).unwrap();
        assert!(nae.success);
        assert_eq!(nae.iters, 0);
        assert!(nae.delta().data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn crafted_nae_hits_target_inside_box() {
        let clf = tiny();
        let rni = generate_rni(SecretKey::new(2), clf.input).unwrap();
        let z = clf.logits(&rni.batch()).unwrap();
        let t = (argmax(z.data()) + 3) % 10;
        let cfg = AttackConfig { g1: 0.5, ..AttackConfig::default() };
        let nae = craft_nae(&clf, &rni, t, &cfg).unwrap();
        assert!(nae.success, "margin {}", nae.achieved_margin);
        assert!(nae.adv.min() >= 0.0 && nae.adv.max() <= 1.0);
        let (label, margin) = verify_nae(&clf, &nae).unwrap();
        assert_eq!(label, t);
        assert!(margin >= cfg.g1 - 1e-4);
        let again = craft_nae(&clf, &rni, t, &cfg).unwrap();
        assert_eq!(again.adv, nae.adv);
    }

    #[test]
    fn unperturbed_rni_keeps_its_label() {
        let clf = tiny();
        let rni = generate_rni(SecretKey::new(3), clf.input).unwrap();
        let z = clf.logits(&rni.batch()).unwrap();
        let t = (argmax(z.data()) + 1) % 10;
        let nae = NoiseAdversarialExample {
            adv: rni.values.clone(),
            base: rni,
            target_label: t,
            achieved_margin: 0.0,
            success: false,
            iters: 0,
        };
        assert_ne!(verify_nae(&clf, &nae).unwrap().0, t);
    }
}
