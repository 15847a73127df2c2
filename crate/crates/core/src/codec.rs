//! Encryption and decryption pipelines, plus the LSB baseline.
//!
//! Encryption: `ŷ = C(x)`, `n = rni(k)`, `n_adv = nae(n, ŷ)`,
//! `u = E(F(x) ‖ n_adv)`, `x′ = (1−λ)u + λ·n_adv`, then 8-bit quantisation.
//! Decryption re-derives `ŷ` by classifying the ciphertext, rebuilds `n_adv`,
//! undoes the blend and decodes.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, NaeCache, NoiseAdversarialExample};
use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::imageio::{read_png, write_png};
use crate::keystream::{generate_rni, KeyStream, SecretKey};
use crate::nn::{seeded_rng, Bound, Conv2d, Graph, ParamStore, Var};
use crate::tensor::{Image8, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// NAE plus symmetric residual blend.
    Full,
    /// The plain RNI stands in for the NAE everywhere.
    Rni,
    /// `x′ = u_en`; the decoder sees `x′_q ‖ n_adv`.
    NoSrl,
}

impl Variant {
    pub fn uses_nae(self) -> bool {
        self != Variant::Rni
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RicArch {
    pub input: (usize, usize, usize),
    pub feature_width: usize,
    pub branch_width: usize,
    pub kernels: Vec<usize>,
    pub variant: Variant,
    pub lambda: f32,
}

impl RicArch {
    pub fn new(input: (usize, usize, usize), lambda: f32) -> Self {
        Self { input, feature_width: 32, branch_width: 32, kernels: vec![3, 5, 7], variant: Variant::Full, lambda }
    }

    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if self.kernels.is_empty() || self.kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Invalid(format!("branch kernels must be odd and non-empty: {:?}", self.kernels)));
        }
        if self.feature_width == 0 || self.branch_width == 0 {
            return Err(Error::Invalid("zero channel width".into()));
        }
        Ok(())
    }
}

fn check_lambda(lambda: f32) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Invalid(format!("lambda must lie in (0,1), got {lambda}")));
    }
    Ok(())
}

/// Parallel conv branches of different kernel sizes, concatenated and fused
/// by a 1×1 convolution.
#[derive(Clone, Debug)]
struct MultiBranch {
    branches: Vec<(Conv2d, Conv2d)>,
    fuse: Conv2d,
}

impl MultiBranch {
    fn new(ps: &mut ParamStore, name: &str, cin: usize, width: usize, cout: usize, kernels: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let branches = kernels
            .iter()
            .map(|&k| {
                let a = Conv2d::same(ps, &format!("{name}.k{k}.0"), cin, width, k, rng);
                let b = Conv2d::same(ps, &format!("{name}.k{k}.1"), width, width, k, rng);
                (a, b)
            })
            .collect();
        let fuse = Conv2d::same(ps, &format!("{name}.fuse"), width * kernels.len(), cout, 1, rng);
        Self { branches, fuse }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let mut cat: Option<Var> = None;
        for (a, b) in &self.branches {
            let h = a.forward(g, p, x);
            let h = g.relu(h);
            let h = b.forward(g, p, h);
            let h = g.relu(h);
            cat = Some(match cat {
                None => h,
                Some(c) => g.concat(c, h),
            });
        }
        let fused = self.fuse.forward(g, p, cat.expect("at least one branch"));
        g.sigmoid(fused)
    }
}

/// Feature extractor `F`, encoder `E`, decoder `D` and the blend weight.
#[derive(Clone, Debug)]
pub struct RicModel {
    pub arch: RicArch,
    store: ParamStore,
    feat: (Conv2d, Conv2d),
    enc: MultiBranch,
    dec: MultiBranch,
}

/// Intermediate values of one encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodeTrace {
    pub u_en: Tensor,
    pub x_prime: Tensor,
}

/// Graph handles of one differentiable pass, used by training.
pub struct PassVars {
    pub u_en: Var,
    pub x_prime: Var,
    pub x_q: Var,
    pub x_tilde: Var,
}

impl RicModel {
    pub fn new(arch: RicArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let c = arch.input.0;
        let mut ps = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let fw = arch.feature_width;
        let feat = (
            Conv2d::same(&mut ps, "feat.0", c, fw, 3, &mut rng),
            Conv2d::same(&mut ps, "feat.1", fw, fw, 3, &mut rng),
        );
        let enc = MultiBranch::new(&mut ps, "enc", fw + c, arch.branch_width, c, &arch.kernels, &mut rng);
        let dec_in = if arch.variant == Variant::NoSrl { 2 * c } else { c };
        let dec = MultiBranch::new(&mut ps, "dec", dec_in, arch.branch_width, c, &arch.kernels, &mut rng);
        Ok(Self { arch, store: ps, feat, enc, dec })
    }

    pub fn lambda(&self) -> f32 {
        self.arch.lambda
    }

    pub fn variant(&self) -> Variant {
        self.arch.variant
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn load_params(&mut self, bytes: &[u8]) -> Result<()> {
        self.store.load_bytes(bytes)
    }

    /// Content hash of the parameters plus the architecture.
    pub fn id(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.arch).expect("arch serialises"));
        h.update(self.store.content_hash());
        hex::encode(h.finalize())
    }

    fn check_image(&self, x: &Tensor) -> Result<usize> {
        let (c, h, w) = self.arch.input;
        match x.shape() {
            [n, cc, hh, ww] if (*cc, *hh, *ww) == (c, h, w) => Ok(*n),
            s => Err(Error::Shape(format!("model expects [n,{c},{h},{w}], got {s:?}"))),
        }
    }

    pub fn features_graph(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = self.feat.0.forward(g, p, x);
        let h = g.relu(h);
        let h = self.feat.1.forward(g, p, h);
        g.relu(h)
    }

    /// `u_en = E(F(x) ‖ n_adv)` and `x′` (the blend, or `u_en` without SRL).
    pub fn encode_graph(&self, g: &mut Graph, p: &Bound, x: Var, n_adv: Var) -> (Var, Var) {
        let f = self.features_graph(g, p, x);
        let cat = g.concat(f, n_adv);
        let u = self.enc.forward(g, p, cat);
        let lam = self.arch.lambda;
        let xp = match self.arch.variant {
            Variant::NoSrl => u,
            _ => g.axpby(u, 1.0 - lam, n_adv, lam),
        };
        (u, xp)
    }

    /// Decoder input from a (dequantised) ciphertext, then `D`.
    pub fn decode_graph(&self, g: &mut Graph, p: &Bound, x_q: Var, n_adv: Var) -> Var {
        let lam = self.arch.lambda;
        let inp = match self.arch.variant {
            Variant::NoSrl => g.concat(x_q, n_adv),
            _ => {
                let d = g.axpby(x_q, 1.0, n_adv, -lam);
                g.scale(d, 1.0 / (1.0 - lam))
            }
        };
        self.dec.forward(g, p, inp)
    }

    /// Full differentiable pass with the additive-noise quantiser.
    pub fn train_pass(&self, g: &mut Graph, p: &Bound, x: Var, n_adv: Var, noise: Var) -> PassVars {
        let (u_en, x_prime) = self.encode_graph(g, p, x, n_adv);
        let x_q = quantize_train_graph(g, x_prime, noise);
        let x_tilde = self.decode_graph(g, p, x_q, n_adv);
        PassVars { u_en, x_prime, x_q, x_tilde }
    }

    pub fn extract_features(&self, image: &Tensor) -> Result<Tensor> {
        self.check_image(image)?;
        let mut g = Graph::new();
        let p = g.bind(&self.store, false);
        let x = g.input(image.clone());
        let f = self.features_graph(&mut g, &p, x);
        Ok(g.value(f).clone())
    }

    /// Encodes `image` ([1,c,h,w]) with the mask `n_adv` ([1,c,h,w]).
    pub fn encode_with(&self, image: &Tensor, n_adv: &Tensor) -> Result<EncodeTrace> {
        self.check_image(image)?;
        if image.shape() != n_adv.shape() {
            return Err(Error::Shape(format!("image {:?} vs mask {:?}", image.shape(), n_adv.shape())));
        }
        let mut g = Graph::new();
        let p = g.bind(&self.store, false);
        let x = g.input(image.clone());
        let n = g.input(n_adv.clone());
        let (u, xp) = self.encode_graph(&mut g, &p, x, n);
        Ok(EncodeTrace { u_en: g.value(u).clone(), x_prime: g.value(xp).clone() })
    }

    /// Encoding with a crafted NAE; refuses unsuccessful ones.
    pub fn encode(&self, image: &Tensor, nae: &NoiseAdversarialExample) -> Result<EncodeTrace> {
        if !nae.success {
            return Err(Error::NaeFailed { target: nae.target_label, best_margin: -nae.achieved_margin, iters: nae.iters });
        }
        self.encode_with(image, &nae.adv_batch())
    }

    /// `D` applied to a dequantised ciphertext ([1,c,h,w]); the SRL
    /// subtraction runs outside the graph through [`srl_subtract`].
    pub fn decode_with(&self, x_q: &Tensor, n_adv: &Tensor) -> Result<Tensor> {
        self.check_image(x_q)?;
        if x_q.shape() != n_adv.shape() {
            return Err(Error::Shape(format!("ciphertext {:?} vs mask {:?}", x_q.shape(), n_adv.shape())));
        }
        let mut g = Graph::new();
        let p = g.bind(&self.store, false);
        let inp = match self.arch.variant {
            Variant::NoSrl => {
                let a = g.input(x_q.clone());
                let b = g.input(n_adv.clone());
                g.concat(a, b)
            }
            _ => g.input(srl_subtract(x_q, n_adv, self.arch.lambda)?),
        };
        let y = self.dec.forward(&mut g, &p, inp);
        Ok(g.value(y).clone())
    }
}

/// `clip(255·x′ + u, 0, 255)/255` inside a graph; `noise` holds `u`.
/// The clip passes gradients straight through its interior.
pub fn quantize_train_graph(g: &mut Graph, x_prime: Var, noise: Var) -> Var {
    let a = g.axpby(x_prime, 255.0, noise, 1.0);
    let c = g.ste_clip(a, 0.0, 255.0);
    g.scale(c, 1.0 / 255.0)
}

/// Draws `u ~ U[−0.5, 0.5]` for every element of `shape`.
pub fn quant_noise(shape: &[usize], stream: &mut KeyStream) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| (stream.next_unit() - 0.5) as f32).collect()).expect("shape product")
}

/// Value-only training quantiser.
pub fn quantize_train(x_prime: &Tensor, stream: &mut KeyStream) -> Tensor {
    let mut out = x_prime.clone();
    for v in out.data_mut() {
        let u = (stream.next_unit() - 0.5) as f32;
        *v = (255.0 * *v + u).clamp(0.0, 255.0) / 255.0;
    }
    out
}

/// Eval quantiser: `round(clip(255·x′, 0, 255))`, ties away from zero.
pub fn quantize_eval(x_prime: &Tensor) -> Result<Image8> {
    Image8::from_unit(x_prime)
}

pub fn dequantize(img: &Image8) -> Tensor {
    img.to_unit()
}

/// `u′ = (x′_q − λ·n_adv)/(1−λ)`.
pub fn srl_subtract(x_q: &Tensor, n_adv: &Tensor, lambda: f32) -> Result<Tensor> {
    check_lambda(lambda)?;
    x_q.zip_map(n_adv, |q, n| (q - lambda * n) / (1.0 - lambda))
}

/// `x′ = (1−λ)·u + λ·n_adv`.
pub fn srl_blend(u_en: &Tensor, n_adv: &Tensor, lambda: f32) -> Result<Tensor> {
    check_lambda(lambda)?;
    u_en.zip_map(n_adv, |u, n| (1.0 - lambda) * u + lambda * n)
}

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CipherMeta {
    pub schema_version: u32,
    pub model_id: String,
    pub classifier_id: String,
    pub lambda: f32,
    pub shape: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nae_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ciphertext {
    pub pixels: Image8,
    pub meta: CipherMeta,
}

impl Ciphertext {
    pub fn unit(&self) -> Tensor {
        dequantize(&self.pixels)
    }
}

/// Mask used for `key` and target: the NAE, or the bare RNI for that variant.
fn mask_for(model: &RicModel, clf: &Classifier, key: SecretKey, target: usize, cfg: &AttackConfig, cache: &mut NaeCache) -> Result<(Tensor, Option<String>)> {
    if model.variant().uses_nae() {
        let nae = cache.get_or_craft(clf, key, target, cfg)?;
        if !nae.success {
            return Err(Error::NaeFailed { target, best_margin: -nae.achieved_margin, iters: nae.iters });
        }
        Ok((nae.adv_batch(), Some(nae.content_hash())))
    } else {
        Ok((generate_rni(key, model.arch.input)?.batch(), None))
    }
}

fn check_pair(model: &RicModel, clf: &Classifier) -> Result<()> {
    if model.arch.input != clf.input {
        return Err(Error::Shape(format!("model input {:?} vs classifier input {:?}", model.arch.input, clf.input)));
    }
    Ok(())
}

/// Encrypts a `[1,c,h,w]` image, reusing NAEs from `cache`.
pub fn encrypt_cached(
    model: &RicModel,
    clf: &Classifier,
    key: SecretKey,
    image: &Tensor,
    cfg: &AttackConfig,
    cache: &mut NaeCache,
) -> Result<Ciphertext> {
    check_pair(model, clf)?;
    let y_hat = clf.predict(image)?;
    let (mask, nae_hash) = mask_for(model, clf, key, y_hat, cfg, cache)?;
    let trace = model.encode_with(image, &mask)?;
    let pixels = quantize_eval(&trace.x_prime)?;
    let (c, h, w) = model.arch.input;
    let meta = CipherMeta {
        schema_version: SCHEMA_VERSION,
        model_id: model.id(),
        classifier_id: clf.id(),
        lambda: model.lambda(),
        shape: [c, h, w],
        nae_hash,
    };
    Ok(Ciphertext { pixels, meta })
}

pub fn encrypt(model: &RicModel, clf: &Classifier, key: SecretKey, image: &Tensor, cfg: &AttackConfig) -> Result<Ciphertext> {
    encrypt_cached(model, clf, key, image, cfg, &mut NaeCache::new())
}

/// Ids are passed precomputed so bulk decryption hashes parameters once.
pub struct Ids {
    pub model: String,
    pub classifier: String,
}

impl Ids {
    pub fn of(model: &RicModel, clf: &Classifier) -> Self {
        Self { model: model.id(), classifier: clf.id() }
    }
}

pub fn check_meta(ct: &Ciphertext, ids: &Ids, model: &RicModel) -> Result<()> {
    let m = &ct.meta;
    if m.schema_version != SCHEMA_VERSION {
        return Err(Error::Metadata(format!("schema version {}", m.schema_version)));
    }
    if m.model_id != ids.model {
        return Err(Error::Metadata("ciphertext was produced by a different model".into()));
    }
    if m.classifier_id != ids.classifier {
        return Err(Error::Metadata("ciphertext was produced against a different classifier".into()));
    }
    if m.lambda != model.lambda() {
        return Err(Error::Metadata(format!("lambda {} vs model {}", m.lambda, model.lambda())));
    }
    let (c, h, w) = model.arch.input;
    if m.shape != [c, h, w] || ct.pixels.dims() != (c, h, w) {
        return Err(Error::Metadata(format!("shape {:?} vs model {:?}", m.shape, model.arch.input)));
    }
    Ok(())
}

/// Decrypts without checking metadata. Any key is accepted; a wrong key
/// yields garbage rather than an error.
pub fn decrypt_pixels(model: &RicModel, clf: &Classifier, key: SecretKey, pixels: &Image8, cfg: &AttackConfig, cache: &mut NaeCache) -> Result<Tensor> {
    check_pair(model, clf)?;
    let x_q = dequantize(pixels);
    let y_hat = clf.predict(&x_q)?;
    let (mask, _) = mask_for(model, clf, key, y_hat, cfg, cache)?;
    model.decode_with(&x_q, &mask)
}

pub fn decrypt_cached(
    model: &RicModel,
    clf: &Classifier,
    ids: &Ids,
    key: SecretKey,
    ct: &Ciphertext,
    cfg: &AttackConfig,
    cache: &mut NaeCache,
) -> Result<Tensor> {
    check_meta(ct, ids, model)?;
    decrypt_pixels(model, clf, key, &ct.pixels, cfg, cache)
}

pub fn decrypt(model: &RicModel, clf: &Classifier, key: SecretKey, ct: &Ciphertext, cfg: &AttackConfig) -> Result<Tensor> {
    decrypt_cached(model, clf, &Ids::of(model, clf), key, ct, cfg, &mut NaeCache::new())
}

/// Sidecar path for a ciphertext PNG: `<name>.png` → `<name>.ric.json`.
pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("ric.json")
}

pub fn write_ciphertext(png: &Path, ct: &Ciphertext) -> Result<()> {
    write_png(png, &ct.pixels)?;
    let side = sidecar_path(png);
    let body = serde_json::to_vec_pretty(&ct.meta)?;
    std::fs::write(&side, body).map_err(|e| Error::io(&side, e))
}

pub fn read_ciphertext(png: &Path) -> Result<Ciphertext> {
    let pixels = read_png(png)?;
    let side = sidecar_path(png);
    let raw = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CipherMeta = serde_json::from_slice(&raw)?;
    Ok(Ciphertext { pixels, meta })
}

/// Replaces the low `bits` bits of `container` with the high `bits` bits of `plain`.
pub fn lsb_embed(plain: &Image8, container: &Image8, bits: u32) -> Result<Image8> {
    check_bits(bits)?;
    if plain.dims() != container.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", plain.dims(), container.dims())));
    }
    let low = (1u16 << bits) as u8 - 1;
    let pixels = plain.pixels.iter().zip(&container.pixels).map(|(&p, &c)| (c & !low) | (p >> (8 - bits))).collect();
    Image8::new(plain.channels, plain.height, plain.width, pixels)
}

pub fn lsb_extract(stego: &Image8, bits: u32) -> Result<Image8> {
    check_bits(bits)?;
    let low = (1u16 << bits) as u8 - 1;
    let pixels = stego.pixels.iter().map(|&s| (s & low) << (8 - bits)).collect();
    Image8::new(stego.channels, stego.height, stego.width, pixels)
}

fn check_bits(bits: u32) -> Result<()> {
    if !(1..=7).contains(&bits) {
        return Err(Error::Invalid(format!("lsb bits must be in 1..=7, got {bits}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keystream::{derive_stream, Purpose};

    fn small_arch() -> RicArch {
        RicArch { feature_width: 4, branch_width: 4, ..RicArch::new((1, 8, 8), 0.8) }
    }

    #[test]
    fn blend_arithmetic() {
        let u = Tensor::full(&[1, 1, 2, 2], 0.5);
        let n = Tensor::full(&[1, 1, 2, 2], 1.0);
        let xp = srl_blend(&u, &n, 0.8).unwrap();
        assert!(xp.data().iter().all(|&v| (v - 0.9).abs() < 1e-6));
        let back = srl_subtract(&Tensor::full(&[1, 1, 2, 2], 0.9), &n, 0.8).unwrap();
        assert!(back.data().iter().all(|&v| (v - 0.5).abs() < 1e-5));
        assert!(srl_subtract(&u, &n, 1.0).is_err());
        assert!(srl_subtract(&u, &n, 0.0).is_err());
    }

    #[test]
    fn lambda_near_one_returns_mask() {
        let model = RicModel::new(RicArch { lambda: 0.999_999, ..small_arch() }, 1).unwrap();
        let x = Tensor::full(&[1, 1, 8, 8], 0.3);
        let n = generate_rni(SecretKey::new(4), (1, 8, 8)).unwrap().batch();
        let tr = model.encode_with(&x, &n).unwrap();
        for (a, b) in tr.x_prime.data().iter().zip(n.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn shapes_close_end_to_end() {
        for variant in [Variant::Full, Variant::Rni, Variant::NoSrl] {
            let model = RicModel::new(RicArch { variant, ..small_arch() }, 2).unwrap();
            let x = Tensor::full(&[1, 1, 8, 8], 0.3);
            let n = Tensor::full(&[1, 1, 8, 8], 0.6);
            let f = model.extract_features(&x).unwrap();
            assert_eq!(f.shape(), &[1, 4, 8, 8]);
            let tr = model.encode_with(&x, &n).unwrap();
            assert_eq!(tr.u_en.shape(), x.shape());
            let y = model.decode_with(&tr.x_prime, &n).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert!(y.min() >= 0.0 && y.max() <= 1.0);
        }
    }

    #[test]
    fn quantize_examples() {
        let half = Tensor::full(&[1, 1, 1, 1], 0.5);
        assert_eq!(quantize_eval(&half).unwrap().pixels, vec![128]);
        let mut s = derive_stream(SecretKey::new(1), Purpose::Quant);
        let q = quantize_train(&Tensor::full(&[1, 1, 4, 4], 1.2), &mut s);
        assert!(q.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn quantize_train_noise_is_zero_mean() {
        let mut s = derive_stream(SecretKey::new(5), Purpose::Quant);
        let q = quantize_train(&Tensor::full(&[10_000], 0.5), &mut s);
        let tol = 3.0 * (0.5 / 3f64.sqrt()) / (255.0 * 100.0);
        assert!((q.mean() - 0.5).abs() < tol, "mean {}", q.mean());
        assert!(q.data().iter().all(|&v| (v * 255.0 - 127.5).abs() <= 0.5 + 1e-4));
    }

    #[test]
    fn lsb_examples() {
        let p = Image8::new(1, 1, 4, vec![0xab, 0xff, 0x00, 0x17]).unwrap();
        let c = Image8::new(1, 1, 4, vec![0x12, 0x34, 0x56, 0x78]).unwrap();
        let s = lsb_embed(&p, &c, 4).unwrap();
        assert_eq!(s.pixels, vec![0x1a, 0x3f, 0x50, 0x71]);
        assert_eq!(lsb_extract(&s, 4).unwrap().pixels, vec![0xa0, 0xf0, 0x00, 0x10]);
        assert!(lsb_embed(&p, &c, 8).is_err());
        assert!(lsb_extract(&s, 0).is_err());
    }

    #[test]
    fn ciphertext_container_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ct = Ciphertext {
            pixels: Image8::new(1, 3, 3, (0..9).map(|i| i * 20).collect()).unwrap(),
            meta: CipherMeta {
                schema_version: SCHEMA_VERSION,
                model_id: "m".into(),
                classifier_id: "c".into(),
                lambda: 0.8,
                shape: [1, 3, 3],
                nae_hash: Some("h".into()),
            },
        };
        let p = dir.path().join("x.png");
        write_ciphertext(&p, &ct).unwrap();
        assert!(dir.path().join("x.ric.json").exists());
        assert_eq!(read_ciphertext(&p).unwrap(), ct);
    }
}
