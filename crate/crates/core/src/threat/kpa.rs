use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Adam, AdamHyper, Bound, Conv2d, Graph, ParamStore, Var};
use crate::tensor::Tensor;

use super::Fidelity;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpaConfig {
    pub n_pairs: usize,
    /// Resolution levels of the U-Net (`depth − 1` poolings).
    pub depth: usize,
    pub base_width: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for KpaConfig {
    fn default() -> Self {
        Self { n_pairs: 500, depth: 4, base_width: 32, epochs: 30, batch: 16, lr: 1e-3, seed: 21 }
    }
}

struct Level {
    a: Conv2d,
    b: Conv2d,
}

impl Level {
    fn new(ps: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        Self { a: Conv2d::same(ps, &format!("{name}.a"), cin, cout, 3, rng), b: Conv2d::same(ps, &format!("{name}.b"), cout, cout, 3, rng) }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = self.a.forward(g, p, x);
        let h = g.relu(h);
        let h = self.b.forward(g, p, h);
        g.relu(h)
    }
}

/// U-Net regressor from ciphertexts to plaintexts. Inputs are zero-padded to
/// a multiple of `2^(depth-1)` and the output is cropped back.
pub struct KpaModel {
    pub cfg: KpaConfig,
    input: (usize, usize, usize),
    pad: usize,
    store: ParamStore,
    down: Vec<Level>,
    up_proj: Vec<Conv2d>,
    up: Vec<Level>,
    head: Conv2d,
}

impl KpaModel {
    pub fn new(input: (usize, usize, usize), cfg: &KpaConfig) -> Result<Self> {
        let (c, h, w) = input;
        if cfg.depth < 1 || cfg.base_width == 0 {
            return Err(Error::Invalid("u-net needs depth >= 1 and a positive width".into()));
        }
        if h != w {
            return Err(Error::Shape(format!("u-net expects square images, got {h}x{w}")));
        }
        let m = 1usize << (cfg.depth - 1);
        let side = h.div_ceil(m) * m;
        if !(side - h).is_multiple_of(2) {
            return Err(Error::Shape(format!("cannot pad {h} symmetrically to a multiple of {m}")));
        }
        let mut ps = ParamStore::new();
        let mut rng = seeded_rng(cfg.seed);
        let widths: Vec<usize> = (0..cfg.depth).map(|i| cfg.base_width << i).collect();
        let mut down = Vec::new();
        let mut cin = c;
        for (i, &wd) in widths.iter().enumerate() {
            down.push(Level::new(&mut ps, &format!("down{i}"), cin, wd, &mut rng));
            cin = wd;
        }
        let mut up_proj = Vec::new();
        let mut up = Vec::new();
        for i in (0..cfg.depth - 1).rev() {
            up_proj.push(Conv2d::same(&mut ps, &format!("upproj{i}"), widths[i + 1], widths[i], 3, &mut rng));
            up.push(Level::new(&mut ps, &format!("up{i}"), 2 * widths[i], widths[i], &mut rng));
        }
        let head = Conv2d::same(&mut ps, "head", widths[0], c, 1, &mut rng);
        Ok(Self { cfg: cfg.clone(), input, pad: (side - h) / 2, store: ps, down, up_proj, up, head })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let (_, h, w) = self.input;
        let mut hcur = if self.pad > 0 { g.pad2d(x, self.pad) } else { x };
        let mut skips = Vec::new();
        for (i, lvl) in self.down.iter().enumerate() {
            if i > 0 {
                hcur = g.max_pool2(hcur);
            }
            hcur = lvl.forward(g, p, hcur);
            skips.push(hcur);
        }
        skips.pop();
        for (proj, lvl) in self.up_proj.iter().zip(&self.up) {
            let u = g.upsample2(hcur);
            let u = proj.forward(g, p, u);
            let u = g.relu(u);
            let s = skips.pop().expect("one skip per level");
            let cat = g.concat(s, u);
            hcur = lvl.forward(g, p, cat);
        }
        let y = self.head.forward(g, p, hcur);
        let y = if self.pad > 0 { g.crop2d(y, self.pad, self.pad, h, w) } else { y };
        g.sigmoid(y)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut outs = Vec::new();
        let n = x.shape()[0];
        for chunk in x.unbatch().chunks(32) {
            let refs: Vec<&Tensor> = chunk.iter().collect();
            let mut g = Graph::new();
            let p = g.bind(&self.store, false);
            let xi = g.input(Tensor::stack(&refs)?);
            let y = self.forward(&mut g, &p, xi);
            outs.extend(g.value(y).unbatch());
        }
        let refs: Vec<&Tensor> = outs.iter().collect();
        let out = Tensor::stack(&refs)?;
        debug_assert_eq!(out.shape()[0], n);
        Ok(out)
    }
}

/// Fits `M` to minimise the mean L2 distance between `M(ciphertext)` and the
/// recovered plaintext. Returns the model and per-epoch mean loss.
pub fn train_kpa(ciphertexts: &Tensor, targets: &Tensor, cfg: &KpaConfig) -> Result<(KpaModel, Vec<f64>)> {
    if ciphertexts.shape() != targets.shape() {
        return Err(Error::Shape(format!("pairs misaligned: {:?} vs {:?}", ciphertexts.shape(), targets.shape())));
    }
    let n = ciphertexts.shape()[0];
    if n == 0 || cfg.n_pairs == 0 {
        return Err(Error::Invalid("known-plaintext attack needs at least one pair".into()));
    }
    let input = match ciphertexts.shape() {
        [_, c, h, w] => (*c, *h, *w),
        s => return Err(Error::Shape(format!("expected [n,c,h,w] ciphertexts, got {s:?}"))),
    };
    let mut model = KpaModel::new(input, cfg)?;
    let mut opt = Adam::new(&model.store, AdamHyper { lr: cfg.lr, ..AdamHyper::default() });
    let xs = ciphertexts.unbatch();
    let ys = targets.unbatch();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut rng = seeded_rng(cfg.seed ^ 0x6b7061);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch.max(1)) {
            let bx: Vec<&Tensor> = chunk.iter().map(|&i| &xs[i]).collect();
            let by: Vec<&Tensor> = chunk.iter().map(|&i| &ys[i]).collect();
            let mut g = Graph::new();
            let p = g.bind(&model.store, true);
            let x = g.input(Tensor::stack(&bx)?);
            let y = g.input(Tensor::stack(&by)?);
            let out = model.forward(&mut g, &p, x);
            let d = g.l2_dist(out, y);
            let loss = g.mean(d);
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("known-plaintext loss diverged at epoch {epoch}")));
            }
            total += lv as f64 * chunk.len() as f64;
            let grads = g.backward(loss).for_params(&p, &model.store);
            opt.step(&mut model.store, &grads);
        }
        let mean = total / n as f64;
        info!("kpa epoch {epoch}: loss {mean:.4}");
        curve.push(mean);
    }
    Ok((model, curve))
}

pub fn eval_kpa(model: &KpaModel, ciphertexts: &Tensor, plaintexts: &Tensor) -> Result<Fidelity> {
    Fidelity::of(&model.predict(ciphertexts)?, plaintexts)
}
