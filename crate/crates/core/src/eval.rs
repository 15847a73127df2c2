//! Held-out evaluation of a trained codec: accuracy in both domains, ADP,
//! and recovery fidelity.

use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, NaeCache};
use crate::classifier::Classifier;
use crate::codec::{decrypt_pixels, encrypt_cached, RicModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::keystream::SecretKey;
use crate::metrics::{accuracy, psnr, ssim, MetricsReport};
use crate::tensor::Image8;

/// One evaluated image.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Record {
    pub index: usize,
    pub label: usize,
    pub pred_plain: usize,
    pub pred_enc: usize,
    pub psnr: f64,
    pub ssim: Option<f64>,
}

pub struct EvalOutput {
    pub report: MetricsReport,
    pub records: Vec<Record>,
    pub ciphertexts: Vec<Image8>,
    pub recoveries: Vec<Image8>,
}

/// Encrypts image `i` under `keys[i % keys.len()]`, classifies the ciphertext
/// and decrypts it with the same key.
pub fn evaluate(
    model: &RicModel,
    clf: &Classifier,
    data: &Dataset,
    keys: &[SecretKey],
    attack: &AttackConfig,
    cache: &mut NaeCache,
) -> Result<EvalOutput> {
    if data.is_empty() || keys.is_empty() {
        return Err(Error::Invalid("evaluation needs images and keys".into()));
    }
    let mut records = Vec::with_capacity(data.len());
    let mut ciphertexts = Vec::with_capacity(data.len());
    let mut recoveries = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let key = keys[i % keys.len()];
        let x = data.image(i);
        let ct = encrypt_cached(model, clf, key, &x, attack, cache)?;
        let rec = decrypt_pixels(model, clf, key, &ct.pixels, attack, cache)?;
        let plain8 = Image8::from_unit(&x)?;
        let rec8 = Image8::from_unit(&rec)?;
        let (_, h, w) = plain8.dims();
        records.push(Record {
            index: i,
            label: data.label(i),
            pred_plain: clf.predict(&x)?,
            pred_enc: clf.predict(&ct.unit())?,
            psnr: psnr(&plain8, &rec8)?,
            ssim: if h >= 11 && w >= 11 { Some(ssim(&plain8, &rec8)?) } else { None },
        });
        ciphertexts.push(ct.pixels);
        recoveries.push(rec8);
    }
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let acc_p = accuracy(&records.iter().map(|r| r.pred_plain).collect::<Vec<_>>(), &labels)?;
    let acc_e = accuracy(&records.iter().map(|r| r.pred_enc).collect::<Vec<_>>(), &labels)?;
    let psnrs: Vec<f64> = records.iter().map(|r| r.psnr).collect();
    let ssims: Vec<f64> = records.iter().filter_map(|r| r.ssim).collect();
    let report = MetricsReport::new(acc_p, acc_e, &psnrs, &ssims)?;
    Ok(EvalOutput { report, records, ciphertexts, recoveries })
}

/// Keys used for validation/evaluation, fixed by a non-secret seed.
pub fn eval_keys(seed: u64, n: usize) -> Vec<SecretKey> {
    use rand::Rng;
    let mut rng = crate::nn::seeded_rng(seed);
    (0..n).map(|_| SecretKey::new(rng.random::<u32>() as u64)).collect()
}
