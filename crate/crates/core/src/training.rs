//! Joint training of `F`, `E`, `D` against a frozen classifier.

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{craft_for_key, AttackConfig, NaeCache};
use crate::classifier::Classifier;
use crate::codec::{quant_noise, RicModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{eval_keys, evaluate};
use crate::keystream::{derive_stream, generate_rni, KeyStream, Purpose, SecretKey};
use crate::nn::{seeded_rng, Adam, AdamHyper, Graph};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub beta: f32,
    pub g2: f32,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: 10.0, g2: 5.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !(self.g2 >= 0.0) {
            return Err(Error::Invalid(format!("loss config needs beta > 0 and g2 >= 0: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub lr: f32,
    pub batch: usize,
    pub epochs: usize,
    pub pool_per_class: usize,
    /// Set from the experiment's shared attack section.
    #[serde(skip)]
    pub attack: AttackConfig,
    pub seed: u64,
    /// Validation images per epoch (0 disables validation).
    pub val_images: usize,
    pub val_keys: usize,
    pub val_key_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            lr: 1e-4,
            batch: 32,
            epochs: 40,
            pool_per_class: 32,
            attack: AttackConfig::default(),
            seed: 7,
            val_images: 200,
            val_keys: 8,
            val_key_seed: 99,
        }
    }
}

/// Per-sample losses of one batch and their reductions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub total: f32,
    pub rec: f32,
    pub adv: f32,
}

/// `(L, L_rec, L_adv)` for single images: `L_rec = ‖x − x̃‖₂`,
/// `L_adv = max{max_{i≠y} C(x′_q)_i − C(x′_q)_y, −g2}`, `L = β·L_rec + L_adv`.
pub fn ric_loss(x: &Tensor, x_tilde: &Tensor, x_q: &Tensor, y: usize, clf: &Classifier, cfg: &LossConfig) -> Result<StepLoss> {
    if x.shape() != x_tilde.shape() || x.shape() != x_q.shape() {
        return Err(Error::Shape(format!("{:?} / {:?} / {:?}", x.shape(), x_tilde.shape(), x_q.shape())));
    }
    let rec = x.data().iter().zip(x_tilde.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt() as f32;
    let z = clf.logits(x_q)?;
    let adv = crate::attack::margin_loss(z.data(), y, cfg.g2)?;
    Ok(StepLoss { total: cfg.beta * rec + adv, rec, adv })
}

/// A crafted mask with the key that produced it.
#[derive(Clone, Debug)]
pub struct PoolEntry {
    pub key: SecretKey,
    pub mask: Tensor,
}

/// Per-class masks (NAEs, or raw RNIs for the RNI variant).
#[derive(Clone, Debug, Default)]
pub struct NaePool {
    pub per_class: Vec<Vec<PoolEntry>>,
}

impl NaePool {
    /// Fresh keys for every slot; unsuccessful crafts are discarded and
    /// redrawn, so every pooled NAE is adversarially valid.
    pub fn build(clf: &Classifier, per_class: usize, use_nae: bool, attack: &AttackConfig, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let mut pool = vec![Vec::with_capacity(per_class); clf.num_classes];
        for (class, slot) in pool.iter_mut().enumerate() {
            let mut failures = 0;
            while slot.len() < per_class {
                let key = SecretKey::new(rng.random::<u32>() as u64);
                if !use_nae {
                    slot.push(PoolEntry { key, mask: generate_rni(key, clf.input)?.batch() });
                    continue;
                }
                let nae = craft_for_key(clf, key, class, attack)?;
                if nae.success {
                    slot.push(PoolEntry { key, mask: nae.adv_batch() });
                } else {
                    failures += 1;
                    if failures > 4 * per_class {
                        return Err(Error::NaeFailed { target: class, best_margin: -nae.achieved_margin, iters: nae.iters });
                    }
                }
            }
        }
        Ok(Self { per_class: pool })
    }

    pub fn sample(&self, class: usize, rng: &mut impl Rng) -> &PoolEntry {
        let v = &self.per_class[class];
        &v[rng.random_range(0..v.len())]
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub rec: f64,
    pub adv: f64,
    pub val_adp: Option<f64>,
    pub val_psnr: Option<f64>,
    pub val_acc_enc: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Curves {
    pub steps: Vec<StepLoss>,
    pub epochs: Vec<EpochLog>,
}

pub struct TrainState {
    pub epoch: usize,
    pub opt: Adam,
    pub curves: Curves,
    pub pool: NaePool,
    noise: KeyStream,
}

impl TrainState {
    pub fn new(model: &RicModel, cfg: &TrainConfig) -> Self {
        Self {
            epoch: 0,
            opt: Adam::new(model.params(), AdamHyper { lr: cfg.lr, ..AdamHyper::default() }),
            curves: Curves::default(),
            pool: NaePool::default(),
            noise: derive_stream(SecretKey::new(cfg.seed), Purpose::Quant),
        }
    }
}

/// One Adam step on `F`, `E`, `D` through encode → noisy quantisation →
/// decode and the frozen classifier. `masks` holds one `n_adv` per image.
pub fn train_step(
    model: &mut RicModel,
    clf: &Classifier,
    images: &Tensor,
    labels: &[usize],
    masks: &Tensor,
    state: &mut TrainState,
    cfg: &LossConfig,
) -> Result<StepLoss> {
    let mut g = Graph::new();
    let p = g.bind(model.params(), true);
    let cp = g.bind(clf.params(), false);
    let x = g.input(images.clone());
    let n = g.input(masks.clone());
    let u = g.input(quant_noise(images.shape(), &mut state.noise));
    let pass = model.train_pass(&mut g, &p, x, n, u);
    let dist = g.l2_dist(x, pass.x_tilde);
    let rec = g.mean(dist);
    let z = clf.forward(&mut g, &cp, pass.x_q);
    let margin = g.margin_loss(z, labels, cfg.g2);
    let adv = g.mean(margin);
    let total = g.axpby(rec, cfg.beta, adv, 1.0);
    let loss = StepLoss { total: g.value(total).item(), rec: g.value(rec).item(), adv: g.value(adv).item() };
    if !loss.total.is_finite() {
        return Err(Error::NonFinite(format!("training loss at step {}", state.opt.steps() + 1)));
    }
    let grads = g.backward(total).for_params(&p, model.params());
    state.opt.step(model.params_mut(), &grads);
    state.curves.steps.push(loss);
    Ok(loss)
}

/// Samples the classifier got right; the others are dropped from training.
pub fn correctly_classified(clf: &Classifier, data: &Dataset) -> Result<Dataset> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, y) = data.batch(&idx);
    let pred = clf.predict_batch(&x)?;
    let keep: Vec<usize> = idx.into_iter().filter(|&i| pred[i] == y[i]).collect();
    Ok(data.subset(&keep))
}

/// Full training loop. `on_epoch` sees every epoch's log and the current model
/// (e.g. to checkpoint). On a non-finite loss the model is rolled back to the
/// last completed epoch and the error returned.
pub fn train_ric(
    model: &mut RicModel,
    clf: &Classifier,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &RicModel),
) -> Result<Curves> {
    cfg.loss.validate()?;
    cfg.attack.validate()?;
    if !clf.is_frozen() {
        return Err(Error::Invalid("the classifier must be frozen before codec training".into()));
    }
    if train.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let clf_hash = clf.id();
    let acc = clf.accuracy(train)?;
    if acc < 95.0 {
        return Err(Error::Invalid(format!("classifier accuracy {acc:.2}% on the training set is below 95%")));
    }
    let train = correctly_classified(clf, train)?;
    info!("training on {} correctly classified images", train.len());
    let val_keys = eval_keys(cfg.val_key_seed, cfg.val_keys.max(1));
    let val = val.filter(|_| cfg.val_images > 0).map(|v| v.head(cfg.val_images));
    let mut val_cache = NaeCache::new();
    let mut state = TrainState::new(model, cfg);
    let mut rng = seeded_rng(cfg.seed ^ 0xa11ce);
    let mut last_good = model.params().to_bytes();
    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        state.pool = NaePool::build(clf, cfg.pool_per_class, model.variant().uses_nae(), &cfg.attack, cfg.seed.wrapping_add(1 + epoch as u64))?;
        let order = train.shuffled_indices(cfg.seed.wrapping_mul(31).wrapping_add(epoch as u64));
        let (mut sl, mut sr, mut sa, mut count) = (0.0f64, 0.0f64, 0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch.max(1)) {
            let (x, y) = train.batch(chunk);
            let masks: Vec<&Tensor> = y.iter().map(|&c| &state.pool.sample(c, &mut rng).mask).collect();
            let masks = Tensor::stack(&masks)?;
            let l = match train_step(model, clf, &x, &y, &masks, &mut state, &cfg.loss) {
                Ok(l) => l,
                Err(e) => {
                    model.load_params(&last_good)?;
                    return Err(e);
                }
            };
            let k = chunk.len() as f64;
            sl += l.total as f64 * k;
            sr += l.rec as f64 * k;
            sa += l.adv as f64 * k;
            count += chunk.len();
        }
        let mut log = EpochLog { epoch, loss: sl / count as f64, rec: sr / count as f64, adv: sa / count as f64, ..Default::default() };
        if let Some(v) = &val {
            match evaluate(model, clf, v, &val_keys, &cfg.attack, &mut val_cache) {
                Ok(out) => {
                    log.val_adp = Some(out.report.adp);
                    log.val_psnr = Some(out.report.psnr_mean);
                    log.val_acc_enc = Some(out.report.acc_enc);
                }
                Err(e) => warn!("validation failed at epoch {epoch}: {e}"),
            }
        }
        info!(
            "epoch {epoch}: L {:.4} rec {:.4} adv {:.4} val adp {:?} psnr {:?}",
            log.loss, log.rec, log.adv, log.val_adp, log.val_psnr
        );
        last_good = model.params().to_bytes();
        on_epoch(&log, model);
        state.curves.epochs.push(log);
    }
    if clf.id() != clf_hash {
        return Err(Error::Invalid("classifier parameters changed during training".into()));
    }
    Ok(state.curves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Arch;
    use crate::codec::RicArch;

    #[test]
    fn loss_arithmetic_and_floor() {
        let clf = Classifier::new(Arch::MnistCnn5, (1, 28, 28), 10, 1).unwrap();
        let x = Tensor::full(&[1, 1, 28, 28], 0.2);
        let cfg = LossConfig::default();
        let l = ric_loss(&x, &x, &x, 3, &clf, &cfg).unwrap();
        assert_eq!(l.rec, 0.0);
        assert!(l.adv >= -cfg.g2);
        assert_eq!(l.total, cfg.beta * l.rec + l.adv);
        let sl = StepLoss { total: 10.0 * 0.3 + -5.0, rec: 0.3, adv: -5.0 };
        assert!((sl.total - -2.0).abs() < 1e-6);
    }

    #[test]
    fn step_leaves_classifier_untouched_and_decomposes() {
        let mut clf = Classifier::new(Arch::MnistCnn5, (1, 28, 28), 10, 1).unwrap();
        clf.freeze();
        let before = clf.id();
        let arch = RicArch { feature_width: 4, branch_width: 4, ..RicArch::new((1, 28, 28), 0.8) };
        let mut model = RicModel::new(arch, 3).unwrap();
        let cfg = TrainConfig::default();
        let mut st = TrainState::new(&model, &cfg);
        let x = Tensor::full(&[2, 1, 28, 28], 0.4);
        let n = Tensor::full(&[2, 1, 28, 28], 0.6);
        let l = train_step(&mut model, &clf, &x, &[1, 2], &n, &mut st, &cfg.loss).unwrap();
        assert_eq!(l.total, cfg.loss.beta * l.rec + l.adv);
        assert_eq!(clf.id(), before);
    }
}
