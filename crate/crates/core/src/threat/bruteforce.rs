use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, NaeCache};
use crate::classifier::Classifier;
use crate::codec::{dequantize, encrypt_cached, RicModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::keystream::{generate_rni, SecretKey};
use crate::metrics::{psnr, ssim, summarize};
use crate::tensor::{Image8, Tensor};

/// Decrypts with a guessed key the way an attacker would: the crafted mask is
/// used even when crafting missed the margin.
pub fn recover_with_guess(
    model: &RicModel,
    clf: &Classifier,
    guess: SecretKey,
    pixels: &Image8,
    attack: &AttackConfig,
    cache: &mut NaeCache,
) -> Result<Tensor> {
    let x_q = dequantize(pixels);
    let y_hat = clf.predict(&x_q)?;
    let mask = if model.variant().uses_nae() {
        cache.get_or_craft(clf, guess, y_hat, attack)?.adv_batch()
    } else {
        generate_rni(guess, model.arch.input)?.batch()
    };
    model.decode_with(&x_q, &mask)
}

/// Per-image PSNR aggregated over the image set for one key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedStats {
    pub seed: u64,
    pub mean_psnr: f64,
    pub min_psnr: f64,
    pub max_psnr: f64,
    pub mean_ssim: Option<f64>,
    /// Mean PSNR against the correct-key recovery rather than the plaintext.
    pub mean_psnr_vs_recovery: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub correct: SeedStats,
    pub wrong: Vec<SeedStats>,
    pub image_count: usize,
    /// Wrong seeds equal to the correct key are skipped and counted here.
    pub skipped: usize,
}

impl SweepResult {
    pub fn wrong_mean(&self) -> f64 {
        self.wrong.iter().map(|s| s.mean_psnr).sum::<f64>() / self.wrong.len().max(1) as f64
    }

    pub fn best_wrong(&self) -> f64 {
        self.wrong.iter().map(|s| s.mean_psnr).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn gap_db(&self) -> f64 {
        self.correct.mean_psnr - self.best_wrong()
    }
}

fn stats(seed: u64, recs: &[Image8], plain: &[Image8], reference: &[Image8]) -> Result<SeedStats> {
    let p: Vec<f64> = recs.iter().zip(plain).map(|(a, b)| psnr(a, b)).collect::<Result<_>>()?;
    let pr: Vec<f64> = recs.iter().zip(reference).map(|(a, b)| psnr(a, b)).collect::<Result<_>>()?;
    let (_, h, w) = plain[0].dims();
    let mean_ssim = if h >= 11 && w >= 11 {
        let s: Vec<f64> = recs.iter().zip(plain).map(|(a, b)| ssim(a, b)).collect::<Result<_>>()?;
        Some(s.iter().sum::<f64>() / s.len() as f64)
    } else {
        None
    };
    let sp = summarize(&p);
    Ok(SeedStats {
        seed,
        mean_psnr: sp.mean,
        min_psnr: sp.min,
        max_psnr: sp.max,
        mean_ssim,
        mean_psnr_vs_recovery: summarize(&pr).mean,
    })
}

/// Encrypts every image under `correct_key`, then decrypts the same
/// ciphertexts, in the same order, under the correct key and each seed.
pub fn brute_force_sweep(
    model: &RicModel,
    clf: &Classifier,
    images: &Dataset,
    correct_key: SecretKey,
    seeds: &[u64],
    attack: &AttackConfig,
) -> Result<SweepResult> {
    if images.len() < 10 {
        return Err(Error::Invalid(format!("brute-force sweep needs at least 10 images, got {}", images.len())));
    }
    let mut cache = NaeCache::new();
    let mut plain = Vec::with_capacity(images.len());
    let mut cts = Vec::with_capacity(images.len());
    for i in 0..images.len() {
        let x = images.image(i);
        cts.push(encrypt_cached(model, clf, correct_key, &x, attack, &mut cache)?.pixels);
        plain.push(Image8::from_unit(&x)?);
    }
    let decrypt_all = |key: SecretKey, cache: &mut NaeCache| -> Result<Vec<Image8>> {
        cts.iter().map(|ct| Image8::from_unit(&recover_with_guess(model, clf, key, ct, attack, cache)?)).collect()
    };
    let truth = decrypt_all(correct_key, &mut cache)?;
    let correct = stats(correct_key.seed(), &truth, &plain, &truth)?;
    let mut wrong = Vec::with_capacity(seeds.len());
    let mut skipped = 0;
    for &s in seeds {
        if s == correct_key.seed() {
            skipped += 1;
            continue;
        }
        // Each guessed key needs at most one craft per class; drop them afterwards.
        let mut guess_cache = NaeCache::new();
        let recs = decrypt_all(SecretKey::new(s), &mut guess_cache)?;
        wrong.push(stats(s, &recs, &plain, &truth)?);
    }
    Ok(SweepResult { correct, wrong, image_count: images.len(), skipped })
}
