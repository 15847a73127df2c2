use log::{info, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, Classifier};
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Adam, AdamHyper, Bound, Conv2d, Dense, Graph, ParamStore, Var};
use crate::tensor::Tensor;

/// `(1/d_w)·Σ_j var_j` over a batch of latents `[n, d_w]`, with the `n−1`
/// denominator.
pub fn latent_variance_penalty(latents: &Tensor) -> Result<f64> {
    let [n, d] = match latents.shape() {
        [n, d] => [*n, *d],
        s => return Err(Error::Shape(format!("latents must be [n, d_w], got {s:?}"))),
    };
    if n < 2 {
        return Err(Error::Invalid("latent variance needs a batch of at least 2".into()));
    }
    let x = latents.data();
    let mut total = 0.0;
    for j in 0..d {
        let mean = (0..n).map(|i| x[i * d + j] as f64).sum::<f64>() / n as f64;
        total += (0..n).map(|i| (x[i * d + j] as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    }
    Ok(total / d as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { epochs: 3, batch: 32, lr: 1e-3, seed: 41 }
    }
}

/// Four strided convolutions and a linear head; one real/fake logit per image.
pub struct Discriminator {
    store: ParamStore,
    convs: Vec<Conv2d>,
    head: Dense,
}

impl Discriminator {
    pub fn new(input: (usize, usize, usize), seed: u64) -> Self {
        let (c, mut h, mut w) = input;
        let mut ps = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let mut cin = c;
        let mut convs = Vec::new();
        for (i, cout) in [16usize, 32, 64, 64].into_iter().enumerate() {
            convs.push(Conv2d::new(&mut ps, &format!("d{i}"), cin, cout, 3, 2, 1, &mut rng));
            cin = cout;
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        let head = Dense::new(&mut ps, "dhead", cin * h * w, 1, &mut rng);
        Self { store: ps, convs, head }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let mut h = x;
        for c in &self.convs {
            h = c.forward(g, p, h);
            h = g.leaky_relu(h, 0.2);
        }
        let f = g.flatten(h);
        self.head.forward(g, p, f)
    }

    /// Logits, one per image.
    pub fn score(&self, x: &Tensor) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(x.shape()[0]);
        for chunk in x.unbatch().chunks(64) {
            let refs: Vec<&Tensor> = chunk.iter().collect();
            let mut g = Graph::new();
            let p = g.bind(&self.store, false);
            let xi = g.input(Tensor::stack(&refs)?);
            let y = self.forward(&mut g, &p, xi);
            out.extend_from_slice(g.value(y).data());
        }
        Ok(out)
    }
}

/// Synthetic negatives: uniform noise, smoothed noise, pixel-shuffled reals
/// and real/noise blends, cycled by index.
fn fake_like(real: &Tensor, kind: usize, rng: &mut impl Rng) -> Tensor {
    let n = real.len();
    let mut out = vec![0.0f32; n];
    match kind % 4 {
        0 => out.iter_mut().for_each(|v| *v = rng.random()),
        1 => {
            let (h, w) = (real.shape()[real.shape().len() - 2], real.shape()[real.shape().len() - 1]);
            let noise: Vec<f32> = (0..n).map(|_| rng.random()).collect();
            let planes = n / (h * w);
            for p in 0..planes {
                for y in 0..h {
                    for x in 0..w {
                        let mut s = 0.0;
                        let mut k = 0.0;
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                                    s += noise[p * h * w + yy as usize * w + xx as usize];
                                    k += 1.0;
                                }
                            }
                        }
                        out[p * h * w + y * w + x] = s / k;
                    }
                }
            }
        }
        2 => {
            out.copy_from_slice(real.data());
            out.shuffle(rng);
        }
        _ => {
            let a: f32 = rng.random_range(0.3..0.7);
            for (o, &r) in out.iter_mut().zip(real.data()) {
                *o = a * r + (1.0 - a) * rng.random::<f32>();
            }
        }
    }
    Tensor::new(real.shape(), out).expect("same shape")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorReport {
    pub epoch_loss: Vec<f64>,
    /// Held-out accuracy on real images versus uniform noise.
    pub noise_accuracy: f64,
}

/// Fraction correctly labelled when `real` should score > 0 and `fake` < 0.
pub fn discriminator_accuracy(d: &Discriminator, real: &Tensor, fake: &Tensor) -> Result<f64> {
    let r = d.score(real)?;
    let f = d.score(fake)?;
    let hits = r.iter().filter(|&&s| s > 0.0).count() + f.iter().filter(|&&s| s < 0.0).count();
    Ok(hits as f64 / (r.len() + f.len()) as f64)
}

fn uniform_like(x: &Tensor, seed: u64) -> Tensor {
    let mut rng = seeded_rng(seed);
    Tensor::new(x.shape(), (0..x.len()).map(|_| rng.random()).collect()).expect("same shape")
}

/// Trains on `real` against synthetic negatives; accuracy is reported on
/// `held_out` reals against fresh uniform noise.
pub fn train_discriminator(real: &Tensor, held_out: &Tensor, cfg: &DiscriminatorConfig) -> Result<(Discriminator, DiscriminatorReport)> {
    let n = real.shape()[0];
    if n < 2 {
        return Err(Error::Invalid("discriminator needs real images".into()));
    }
    let input = (real.shape()[1], real.shape()[2], real.shape()[3]);
    let mut d = Discriminator::new(input, cfg.seed);
    let mut opt = Adam::new(&d.store, AdamHyper { lr: cfg.lr, ..AdamHyper::default() });
    let mut rng = seeded_rng(cfg.seed ^ 0xd15c);
    let reals = real.unbatch();
    let mut report = DiscriminatorReport::default();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch.max(1)).enumerate() {
            let mut items = Vec::with_capacity(2 * chunk.len());
            let mut targets = Vec::with_capacity(2 * chunk.len());
            for (k, &i) in chunk.iter().enumerate() {
                items.push(reals[i].clone());
                targets.push(1.0);
                items.push(fake_like(&reals[i], bi + k, &mut rng));
                targets.push(0.0);
            }
            let refs: Vec<&Tensor> = items.iter().collect();
            let mut g = Graph::new();
            let p = g.bind(&d.store, true);
            let x = g.input(Tensor::stack(&refs)?);
            let z = d.forward(&mut g, &p, x);
            let l = g.bce_logits(z, &targets);
            let loss = g.mean(l);
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("discriminator loss at epoch {epoch}")));
            }
            total += lv as f64;
            let grads = g.backward(loss).for_params(&p, &d.store);
            opt.step(&mut d.store, &grads);
        }
        report.epoch_loss.push(total / n.div_ceil(cfg.batch.max(1)) as f64);
    }
    report.noise_accuracy = discriminator_accuracy(&d, held_out, &uniform_like(held_out, cfg.seed ^ 0x4e))?;
    let s = d.score(held_out)?;
    if s.windows(2).all(|w| w[0] == w[1]) {
        warn!("discriminator output is constant on held-out images");
    }
    info!("discriminator held-out accuracy vs noise {:.3}", report.noise_accuracy);
    Ok((d, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudAttackConfig {
    pub eta1: f32,
    pub eta2: f32,
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for CloudAttackConfig {
    fn default() -> Self {
        Self { eta1: 0.1, eta2: 0.01, latent_dim: 32, epochs: 15, batch: 32, lr: 1e-3, seed: 31 }
    }
}

/// Per-epoch means of each objective term; `total = ce − η1·real − η2·var`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CloudEpoch {
    pub epoch: usize,
    pub total: f64,
    pub ce: f64,
    pub realness: f64,
    pub latent_var: f64,
    /// Fraction of generated images the classifier assigns the ciphertext's label.
    pub label_agreement: f64,
}

/// Encoder `E` (ciphertext → latent `w`) and generator `G` (`w` → image).
pub struct CloudAttack {
    pub cfg: CloudAttackConfig,
    store: ParamStore,
    enc: (Conv2d, Conv2d, Dense),
    gen: (Dense, Conv2d, Conv2d),
    input: (usize, usize, usize),
    pub curves: Vec<CloudEpoch>,
}

impl CloudAttack {
    pub fn new(input: (usize, usize, usize), cfg: &CloudAttackConfig) -> Result<Self> {
        let (c, h, w) = input;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Shape(format!("cloud attack nets need h,w divisible by 4, got {h}x{w}")));
        }
        if cfg.eta1 < 0.0 || cfg.eta2 < 0.0 || cfg.latent_dim == 0 {
            return Err(Error::Invalid("eta1, eta2 must be nonnegative and latent_dim positive".into()));
        }
        let mut ps = ParamStore::new();
        let mut rng = seeded_rng(cfg.seed);
        let flat = 32 * (h / 4) * (w / 4);
        let enc = (
            Conv2d::new(&mut ps, "e1", c, 16, 3, 2, 1, &mut rng),
            Conv2d::new(&mut ps, "e2", 16, 32, 3, 2, 1, &mut rng),
            Dense::new(&mut ps, "e3", flat, cfg.latent_dim, &mut rng),
        );
        let gen = (
            Dense::new(&mut ps, "g1", cfg.latent_dim, flat, &mut rng),
            Conv2d::same(&mut ps, "g2", 32, 16, 3, &mut rng),
            Conv2d::same(&mut ps, "g3", 16, c, 3, &mut rng),
        );
        Ok(Self { cfg: cfg.clone(), store: ps, enc, gen, input, curves: Vec::new() })
    }

    fn encode(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = self.enc.0.forward(g, p, x);
        let h = g.leaky_relu(h, 0.2);
        let h = self.enc.1.forward(g, p, h);
        let h = g.leaky_relu(h, 0.2);
        let f = g.flatten(h);
        self.enc.2.forward(g, p, f)
    }

    fn generate(&self, g: &mut Graph, p: &Bound, w: Var, n: usize) -> Var {
        let (_, h, wd) = self.input;
        let x = self.gen.0.forward(g, p, w);
        let x = g.leaky_relu(x, 0.2);
        let x = g.reshape(x, &[n, 32, h / 4, wd / 4]);
        let x = g.upsample2(x);
        let x = self.gen.1.forward(g, p, x);
        let x = g.leaky_relu(x, 0.2);
        let x = g.upsample2(x);
        let x = self.gen.2.forward(g, p, x);
        g.sigmoid(x)
    }

    /// `G(E(x_q))` for a batch of ciphertexts; also returns the latents.
    pub fn reconstruct(&self, ciphertexts: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut imgs = Vec::new();
        let mut lats = Vec::new();
        for chunk in ciphertexts.unbatch().chunks(64) {
            let refs: Vec<&Tensor> = chunk.iter().collect();
            let mut g = Graph::new();
            let p = g.bind(&self.store, false);
            let x = g.input(Tensor::stack(&refs)?);
            let w = self.encode(&mut g, &p, x);
            let y = self.generate(&mut g, &p, w, chunk.len());
            imgs.extend(g.value(y).unbatch());
            lats.extend_from_slice(g.value(w).data());
        }
        let refs: Vec<&Tensor> = imgs.iter().collect();
        let n = imgs.len();
        Ok((Tensor::stack(&refs)?, Tensor::new(&[n, self.cfg.latent_dim], lats)?))
    }
}

/// Trains `G∘E` on `CE(C(G(E(x_q))), ŷ) − η1·softplus(D(x̂)) − η2·σ(w)`, with
/// `ŷ` the classifier's label of each ciphertext. `C` and `D` stay frozen.
pub fn train_cloud_attack(clf: &Classifier, ciphertexts: &Tensor, disc: &Discriminator, cfg: &CloudAttackConfig) -> Result<CloudAttack> {
    let input = match ciphertexts.shape() {
        [_, c, h, w] => (*c, *h, *w),
        s => return Err(Error::Shape(format!("expected [n,c,h,w] ciphertexts, got {s:?}"))),
    };
    let labels: Vec<usize> = clf.logits(ciphertexts)?.unbatch().iter().map(|z| argmax(z.data())).collect();
    let mut atk = CloudAttack::new(input, cfg)?;
    let mut opt = Adam::new(&atk.store, AdamHyper { lr: cfg.lr, ..AdamHyper::default() });
    let xs = ciphertexts.unbatch();
    let n = xs.len();
    let mut rng = seeded_rng(cfg.seed ^ 0xc10d);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut acc = CloudEpoch { epoch, ..Default::default() };
        let mut batches = 0usize;
        let mut agree = 0usize;
        // Batches of one have no latent variance; fold a trailing singleton into its predecessor.
        let bs = cfg.batch.max(2);
        let mut chunks: Vec<Vec<usize>> = order.chunks(bs).map(|c| c.to_vec()).collect();
        if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < 2) {
            let tail = chunks.pop().unwrap();
            chunks.last_mut().unwrap().extend(tail);
        }
        for chunk in &chunks {
            let refs: Vec<&Tensor> = chunk.iter().map(|&i| &xs[i]).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let p = g.bind(&atk.store, true);
            let cp = g.bind(clf.params(), false);
            let dp = g.bind(&disc.store, false);
            let x = g.input(Tensor::stack(&refs)?);
            let w = atk.encode(&mut g, &p, x);
            let img = atk.generate(&mut g, &p, w, chunk.len());
            let z = clf.forward(&mut g, &cp, img);
            let ce_v = g.cross_entropy(z, &y);
            let ce = g.mean(ce_v);
            let dz = disc.forward(&mut g, &dp, img);
            let sp = g.softplus(dz);
            let real = g.mean(sp);
            let var = g.latent_variance(w);
            let t1 = g.axpby(ce, 1.0, real, -cfg.eta1);
            let total = g.axpby(t1, 1.0, var, -cfg.eta2);
            let tv = g.value(total).item();
            if !tv.is_finite() {
                atk.curves.push(acc);
                return Err(Error::NonFinite(format!("cloud attack objective diverged at epoch {epoch}")));
            }
            acc.total += tv as f64;
            acc.ce += g.value(ce).item() as f64;
            acc.realness += g.value(real).item() as f64;
            acc.latent_var += g.value(var).item() as f64;
            agree += g.value(z).unbatch().iter().zip(&y).filter(|(zi, &yi)| argmax(zi.data()) == yi).count();
            batches += 1;
            let grads = g.backward(total).for_params(&p, &atk.store);
            opt.step(&mut atk.store, &grads);
        }
        let b = batches.max(1) as f64;
        acc.total /= b;
        acc.ce /= b;
        acc.realness /= b;
        acc.latent_var /= b;
        acc.label_agreement = agree as f64 / n as f64;
        info!(
            "cloud epoch {epoch}: total {:.4} ce {:.4} real {:.4} var {:.4} agree {:.3}",
            acc.total, acc.ce, acc.realness, acc.latent_var, acc.label_agreement
        );
        atk.curves.push(acc);
    }
    Ok(atk)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_variance_examples() {
        let same = Tensor::new(&[3, 2], vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(latent_variance_penalty(&same).unwrap(), 0.0);
        let two = Tensor::new(&[2, 2], vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        assert_eq!(latent_variance_penalty(&two).unwrap(), 2.0);
        assert!(latent_variance_penalty(&Tensor::zeros(&[1, 4])).is_err());
    }

    #[test]
    fn latent_variance_matches_graph_op() {
        let x = Tensor::new(&[3, 2], vec![0.5, -1.0, 2.0, 0.0, 1.5, 3.0]).unwrap();
        let mut g = Graph::new();
        let v = g.input(x.clone());
        let y = g.latent_variance(v);
        assert!((g.value(y).item() as f64 - latent_variance_penalty(&x).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn discriminator_emits_one_logit_per_image() {
        let d = Discriminator::new((1, 28, 28), 1);
        assert_eq!(d.score(&Tensor::zeros(&[5, 1, 28, 28])).unwrap().len(), 5);
    }

    #[test]
    fn fakes_keep_shape_and_range() {
        let mut rng = seeded_rng(2);
        let real = Tensor::full(&[1, 1, 8, 8], 0.5);
        for k in 0..4 {
            let f = fake_like(&real, k, &mut rng);
            assert_eq!(f.shape(), real.shape());
            assert!(f.min() >= 0.0 && f.max() <= 1.0);
        }
    }
}
