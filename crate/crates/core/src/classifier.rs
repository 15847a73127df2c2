//! Plaintext-domain classifiers. Inputs are raw `[0,1]` pixels with no
//! normalisation, so plaintexts, noise and ciphertexts share one domain.

use std::str::FromStr;

use log::info;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Adam, AdamHyper, Bound, Conv2d, Dense, Graph, ParamStore, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    MnistCnn5,
    SvhnCnn7,
    SmallResnet,
}

impl Arch {
    pub fn id(self) -> &'static str {
        match self {
            Arch::MnistCnn5 => "mnist_cnn5",
            Arch::SvhnCnn7 => "svhn_cnn7",
            Arch::SmallResnet => "small_resnet",
        }
    }
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Arch::MnistCnn5, Arch::SvhnCnn7, Arch::SmallResnet]
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown classifier architecture `{s}`")))
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    a: Conv2d,
    b: Conv2d,
    proj: Option<Conv2d>,
}

#[derive(Clone, Debug)]
enum Net {
    /// Conv stack with a 2×2 max-pool after every second conv.
    Plain { convs: Vec<Conv2d>, head: Dense },
    Resnet { stem: Conv2d, blocks: Vec<ResBlock>, head: Dense },
}

/// A classifier plus its parameters. Frozen handles refuse training.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub arch: Arch,
    pub input: (usize, usize, usize),
    pub num_classes: usize,
    store: ParamStore,
    net: Net,
    frozen: bool,
}

fn conv_stack(ps: &mut ParamStore, cin: usize, widths: &[usize], rng: &mut rand_chacha::ChaCha8Rng) -> Vec<Conv2d> {
    let mut c = cin;
    widths
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let conv = Conv2d::same(ps, &format!("conv{}", i + 1), c, w, 3, rng);
            c = w;
            conv
        })
        .collect()
}

impl Classifier {
    /// Freshly initialised network. Layout depends only on `(arch, input, classes)`.
    pub fn new(arch: Arch, input: (usize, usize, usize), num_classes: usize, seed: u64) -> Result<Self> {
        let (c, h, w) = input;
        if num_classes < 2 {
            return Err(Error::Invalid("a classifier needs at least two classes".into()));
        }
        let mut ps = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let net = match arch {
            Arch::MnistCnn5 | Arch::SvhnCnn7 => {
                let widths: &[usize] = if arch == Arch::MnistCnn5 {
                    &[32, 64, 64, 128, 128]
                } else {
                    &[32, 64, 64, 128, 128, 256, 256]
                };
                let pools = widths.len() / 2;
                if h % (1 << pools) != 0 || w % (1 << pools) != 0 {
                    return Err(Error::Shape(format!("{} needs h,w divisible by {}", arch.id(), 1 << pools)));
                }
                let convs = conv_stack(&mut ps, c, widths, &mut rng);
                let flat = widths[widths.len() - 1] * (h >> pools) * (w >> pools);
                let head = Dense::new(&mut ps, "fc", flat, num_classes, &mut rng);
                Net::Plain { convs, head }
            }
            Arch::SmallResnet => {
                if h % 4 != 0 || w % 4 != 0 {
                    return Err(Error::Shape("small_resnet needs h,w divisible by 4".into()));
                }
                let stem = Conv2d::same(&mut ps, "stem", c, 16, 3, &mut rng);
                let mut blocks = Vec::new();
                let mut cin = 16;
                for (i, (cout, stride)) in [(16, 1), (32, 2), (64, 2)].into_iter().enumerate() {
                    let a = Conv2d::new(&mut ps, &format!("block{i}.a"), cin, cout, 3, stride, 1, &mut rng);
                    let b = Conv2d::same(&mut ps, &format!("block{i}.b"), cout, cout, 3, &mut rng);
                    let proj = (stride != 1 || cin != cout)
                        .then(|| Conv2d::new(&mut ps, &format!("block{i}.proj"), cin, cout, 1, stride, 0, &mut rng));
                    blocks.push(ResBlock { a, b, proj });
                    cin = cout;
                }
                let head = Dense::new(&mut ps, "fc", 64 * (h / 4) * (w / 4), num_classes, &mut rng);
                Net::Resnet { stem, blocks, head }
            }
        };
        Ok(Self { arch, input, num_classes, store: ps, net, frozen: false })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Replaces parameters from a blob produced by [`ParamStore::to_bytes`].
    pub fn load_params(&mut self, bytes: &[u8]) -> Result<()> {
        self.store.load_bytes(bytes)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Content hash of the parameters; doubles as the classifier id.
    pub fn id(&self) -> String {
        self.store.content_hash()
    }

    /// Logits for a `[n,c,h,w]` batch already placed in `g`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        match &self.net {
            Net::Plain { convs, head } => {
                let mut h = x;
                for (i, conv) in convs.iter().enumerate() {
                    let y = conv.forward(g, p, h);
                    h = g.relu(y);
                    if i % 2 == 1 {
                        h = g.max_pool2(h);
                    }
                }
                let f = g.flatten(h);
                head.forward(g, p, f)
            }
            Net::Resnet { stem, blocks, head } => {
                let s = stem.forward(g, p, x);
                let mut h = g.relu(s);
                for blk in blocks {
                    let a = blk.a.forward(g, p, h);
                    let a = g.relu(a);
                    let b = blk.b.forward(g, p, a);
                    let skip = match &blk.proj {
                        Some(pr) => pr.forward(g, p, h),
                        None => h,
                    };
                    let sum = g.add(b, skip);
                    h = g.relu(sum);
                }
                let f = g.flatten(h);
                head.forward(g, p, f)
            }
        }
    }

    pub fn check_batch(&self, x: &Tensor) -> Result<()> {
        let (c, h, w) = self.input;
        match x.shape() {
            [_, cc, hh, ww] if (*cc, *hh, *ww) == (c, h, w) => Ok(()),
            s => Err(Error::Shape(format!("classifier expects [n,{c},{h},{w}], got {s:?}"))),
        }
    }

    /// `[n, num_classes]` logits, evaluated in chunks.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_batch(x)?;
        let n = x.shape()[0];
        let per = x.len() / n.max(1);
        let (c, h, w) = self.input;
        let mut out = Vec::with_capacity(n * self.num_classes);
        for start in (0..n).step_by(128) {
            let end = (start + 128).min(n);
            let chunk = Tensor::new(&[end - start, c, h, w], x.data()[start * per..end * per].to_vec())?;
            let mut g = Graph::new();
            let p = g.bind(&self.store, false);
            let xi = g.input(chunk);
            let z = self.forward(&mut g, &p, xi);
            out.extend_from_slice(g.value(z).data());
        }
        let z = Tensor::new(&[n, self.num_classes], out)?;
        if !z.all_finite() {
            return Err(Error::NonFinite("classifier logits".into()));
        }
        Ok(z)
    }

    pub fn predict_batch(&self, x: &Tensor) -> Result<Vec<usize>> {
        let z = self.logits(x)?;
        Ok(z.data().chunks(self.num_classes).map(argmax).collect())
    }

    /// Label of a single `[1,c,h,w]` image.
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        if x.shape().first() != Some(&1) {
            return Err(Error::Shape(format!("predict takes one image, got {:?}", x.shape())));
        }
        Ok(self.predict_batch(x)?[0])
    }

    /// Percent of `data` classified correctly.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Invalid("accuracy of an empty set".into()));
        }
        let idx: Vec<usize> = (0..data.len()).collect();
        let (x, y) = data.batch(&idx);
        let pred = self.predict_batch(&x)?;
        crate::metrics::accuracy(&pred, &y)
    }
}

/// Argmax with ties resolved to the lowest index.
pub fn argmax(z: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(z: &[f32]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let e: Vec<f64> = z.iter().map(|&v| (v as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierHyper {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    /// Max random translation in pixels for augmentation (0 disables).
    pub shift: usize,
    pub seed: u64,
}

impl Default for ClassifierHyper {
    fn default() -> Self {
        Self { epochs: 20, batch: 64, lr: 1e-3, shift: 2, seed: 1 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub epoch_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

/// Shifts every image in a batch by an integer offset with zero fill.
fn shift_batch(x: &Tensor, rng: &mut impl Rng, max: usize) -> Tensor {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let m = max as i64;
    let mut out = vec![0.0f32; x.len()];
    let src = x.data();
    for i in 0..n {
        let dy = rng.random_range(-m..=m);
        let dx = rng.random_range(-m..=m);
        for ch in 0..c {
            let base = (i * c + ch) * h * w;
            for yy in 0..h as i64 {
                let sy = yy - dy;
                if sy < 0 || sy >= h as i64 {
                    continue;
                }
                for xx in 0..w as i64 {
                    let sx = xx - dx;
                    if sx >= 0 && sx < w as i64 {
                        out[base + (yy as usize) * w + xx as usize] = src[base + (sy as usize) * w + sx as usize];
                    }
                }
            }
        }
    }
    Tensor::new(x.shape(), out).expect("same shape")
}

/// Cross-entropy training with Adam. Validation accuracy is logged per epoch.
pub fn train_classifier(
    train: &Dataset,
    val: Option<&Dataset>,
    arch: Arch,
    hyper: &ClassifierHyper,
) -> Result<(Classifier, ClassifierReport)> {
    if train.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let mut clf = Classifier::new(arch, train.shape(), train.num_classes(), hyper.seed)?;
    let mut opt = Adam::new(&clf.store, AdamHyper { lr: hyper.lr, ..AdamHyper::default() });
    let mut rng = seeded_rng(hyper.seed ^ 0x5eed);
    let mut report = ClassifierReport::default();
    for epoch in 0..hyper.epochs {
        // Cosine decay from `lr` towards zero over the run.
        opt.hyper.lr = hyper.lr * 0.5 * (1.0 + (std::f32::consts::PI * epoch as f32 / hyper.epochs as f32).cos());
        let order = train.shuffled_indices(hyper.seed.wrapping_add(epoch as u64 * 7919));
        let mut total = 0.0f64;
        for chunk in order.chunks(hyper.batch.max(1)) {
            let (x, y) = train.batch(chunk);
            let x = if hyper.shift > 0 { shift_batch(&x, &mut rng, hyper.shift) } else { x };
            let mut g = Graph::new();
            let p = g.bind(&clf.store, true);
            let xi = g.input(x);
            let z = clf.forward(&mut g, &p, xi);
            let ce = g.cross_entropy(z, &y);
            let loss = g.mean(ce);
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("classifier loss diverged at epoch {epoch}")));
            }
            total += lv as f64 * chunk.len() as f64;
            let grads = g.backward(loss).for_params(&p, &clf.store);
            opt.step(&mut clf.store, &grads);
        }
        report.epoch_loss.push(total / train.len() as f64);
        if let Some(v) = val {
            let acc = clf.accuracy(v)?;
            report.val_accuracy.push(acc);
            info!("classifier epoch {epoch}: loss {:.4} val acc {acc:.2}%", total / train.len() as f64);
        } else {
            info!("classifier epoch {epoch}: loss {:.4}", total / train.len() as f64);
        }
    }
    clf.freeze();
    Ok((clf, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.9]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn logits_shape_and_duplicate_rows() {
        for (arch, shape) in [(Arch::MnistCnn5, (1, 28, 28)), (Arch::SvhnCnn7, (3, 32, 32)), (Arch::SmallResnet, (3, 32, 32))] {
            let clf = Classifier::new(arch, shape, 10, 3).unwrap();
            let img = Tensor::full(&[1, shape.0, shape.1, shape.2], 0.3);
            let x = Tensor::stack(&[&img, &img, &Tensor::full(img.shape(), 0.7)]).unwrap();
            let z = clf.logits(&x).unwrap();
            assert_eq!(z.shape(), &[3, 10]);
            assert_eq!(z.data()[..10], z.data()[10..20]);
            let s: f64 = softmax(&z.data()[..10]).iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn wrong_shape_rejected() {
        let clf = Classifier::new(Arch::MnistCnn5, (1, 28, 28), 10, 3).unwrap();
        assert!(clf.logits(&Tensor::zeros(&[1, 1, 32, 32])).is_err());
    }

    #[test]
    fn empty_dataset_rejected() {
        let d = Dataset::new((1, 28, 28), vec![], vec![], 10).unwrap();
        assert!(train_classifier(&d, None, Arch::MnistCnn5, &ClassifierHyper::default()).is_err());
    }
}
