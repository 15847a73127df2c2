//! Fidelity and accuracy metrics on 8-bit images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Image8;

fn same_dims(a: &Image8, b: &Image8) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean squared error in pixel units.
pub fn mse(a: &Image8, b: &Image8) -> Result<f64> {
    same_dims(a, b)?;
    let s: f64 = a.pixels.iter().zip(&b.pixels).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok(s / a.pixels.len() as f64)
}

/// `20·log10(255/√MSE)`; identical images give `+inf`.
pub fn psnr(a: &Image8, b: &Image8) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (255.0 / mse.sqrt()).log10()
    }
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gauss1d() -> [f64; SSIM_WIN] {
    let mut k = [0.0; SSIM_WIN];
    let c = (SSIM_WIN / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter, "valid" region only.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64; SSIM_WIN]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WIN + 1, w - SSIM_WIN + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            rows[y * ow + xo] = (0..SSIM_WIN).map(|j| k[j] * x[y * w + xo + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..SSIM_WIN).map(|j| k[j] * rows[(yo + j) * ow + xo]).sum();
        }
    }
    out
}

/// Mean windowed SSIM (11×11 Gaussian, σ=1.5, K1=0.01, K2=0.03, L=255),
/// averaged over channels.
pub fn ssim(a: &Image8, b: &Image8) -> Result<f64> {
    same_dims(a, b)?;
    let (c, h, w) = a.dims();
    if h < SSIM_WIN || w < SSIM_WIN {
        return Err(Error::Invalid(format!("ssim needs at least {SSIM_WIN}x{SSIM_WIN}, got {h}x{w}")));
    }
    let k = gauss1d();
    let c1 = (0.01 * 255.0f64).powi(2);
    let c2 = (0.03 * 255.0f64).powi(2);
    let hw = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let x: Vec<f64> = a.pixels[ch * hw..(ch + 1) * hw].iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = b.pixels[ch * hw..(ch + 1) * hw].iter().map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, my) = (filter_valid(&x, h, w, &k), filter_valid(&y, h, w, &k));
        let (sxx, syy, sxy) = (filter_valid(&xx, h, w, &k), filter_valid(&yy, h, w, &k), filter_valid(&xy, h, w, &k));
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / c as f64)
}

/// Accuracy drop proportion, in percent.
pub fn adp(acc_p: f64, acc_e: f64) -> Result<f64> {
    if acc_p <= 0.0 {
        return Err(Error::Invalid("adp needs a positive plaintext accuracy".into()));
    }
    Ok((acc_p - acc_e) / acc_p * 100.0)
}

/// Percent of predictions equal to labels.
pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() || pred.len() != labels.len() {
        return Err(Error::Invalid(format!("accuracy over {} predictions and {} labels", pred.len(), labels.len())));
    }
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 * 100.0 / labels.len() as f64)
}

/// Mean/min/max over finite values; infinities are counted separately.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
    pub inf_count: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let finite: Vec<f64> = values.iter().cloned().filter(|v| v.is_finite()).collect();
    let inf_count = values.len() - finite.len();
    if finite.is_empty() {
        return Summary { mean: f64::NAN, min: f64::NAN, max: f64::NAN, count: 0, inf_count };
    }
    Summary {
        mean: finite.iter().sum::<f64>() / finite.len() as f64,
        min: finite.iter().cloned().fold(f64::INFINITY, f64::min),
        max: finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        count: finite.len(),
        inf_count,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc_plain: f64,
    pub acc_enc: f64,
    pub adp: f64,
    pub psnr_mean: f64,
    pub psnr_min: f64,
    pub psnr_max: f64,
    pub psnr_inf_count: usize,
    pub ssim_mean: f64,
    pub sample_count: usize,
}

impl MetricsReport {
    pub fn new(acc_plain: f64, acc_enc: f64, psnrs: &[f64], ssims: &[f64]) -> Result<Self> {
        let s = summarize(psnrs);
        Ok(Self {
            acc_plain,
            acc_enc,
            adp: adp(acc_plain, acc_enc)?,
            psnr_mean: s.mean,
            psnr_min: s.min,
            psnr_max: s.max,
            psnr_inf_count: s.inf_count,
            ssim_mean: ssims.iter().sum::<f64>() / ssims.len().max(1) as f64,
            sample_count: psnrs.len(),
        })
    }
}

/// Kolmogorov–Smirnov distance between the empirical distribution of
/// `values` and U[0,1].
pub fn ks_uniform(values: &[f32]) -> f64 {
    let mut v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = x.clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

fn sobel_mag(img: &Image8) -> Vec<f64> {
    let (c, h, w) = img.dims();
    let mut out = Vec::with_capacity(c * (h - 2) * (w - 2));
    let px = |ch: usize, y: usize, x: usize| img.pixels[(ch * h + y) * w + x] as f64;
    for ch in 0..c {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let gx = px(ch, y - 1, x + 1) + 2.0 * px(ch, y, x + 1) + px(ch, y + 1, x + 1)
                    - px(ch, y - 1, x - 1)
                    - 2.0 * px(ch, y, x - 1)
                    - px(ch, y + 1, x - 1);
                let gy = px(ch, y + 1, x - 1) + 2.0 * px(ch, y + 1, x) + px(ch, y + 1, x + 1)
                    - px(ch, y - 1, x - 1)
                    - 2.0 * px(ch, y - 1, x)
                    - px(ch, y - 1, x + 1);
                out.push((gx * gx + gy * gy).sqrt());
            }
        }
    }
    out
}

/// Plaintext edge energy visible in `cipher`: the least-squares coefficient of
/// the (mean-removed) cipher Sobel magnitude on the plaintext's. 1 means the
/// plaintext edge map is fully present, 0 means no linear trace of it.
pub fn edge_leakage(cipher: &Image8, plain: &Image8) -> Result<f64> {
    same_dims(cipher, plain)?;
    let (_, h, w) = plain.dims();
    if h < 3 || w < 3 {
        return Err(Error::Invalid("edge map needs at least 3x3".into()));
    }
    let sc = sobel_mag(cipher);
    let sp = sobel_mag(plain);
    let mc = sc.iter().sum::<f64>() / sc.len() as f64;
    let mp = sp.iter().sum::<f64>() / sp.len() as f64;
    let num: f64 = sc.iter().zip(&sp).map(|(a, b)| (a - mc) * (b - mp)).sum();
    let den: f64 = sp.iter().map(|b| (b - mp).powi(2)).sum();
    if den == 0.0 {
        return Err(Error::Invalid("plaintext has no edges".into()));
    }
    Ok((num / den).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn img(v: Vec<u8>, h: usize, w: usize) -> Image8 {
        Image8::new(1, h, w, v).unwrap()
    }

    #[test]
    fn mse_psnr_examples() {
        let z = img(vec![0; 16], 4, 4);
        let f = img(vec![255; 16], 4, 4);
        let one = img(vec![1; 16], 4, 4);
        assert_eq!(mse(&z, &z).unwrap(), 0.0);
        assert_eq!(mse(&z, &f).unwrap(), 65025.0);
        assert_eq!(mse(&z, &one).unwrap(), 1.0);
        assert!((psnr(&z, &one).unwrap() - 48.1308).abs() < 1e-3);
        assert_eq!(psnr(&z, &f).unwrap(), 0.0);
        assert!(psnr(&z, &z).unwrap().is_infinite());
        assert!(mse(&z, &img(vec![0; 20], 4, 5)).is_err());
    }

    #[test]
    fn ssim_properties() {
        let mut rng = crate::nn::seeded_rng(4);
        let a = img((0..64 * 64).map(|_| rng.random()).collect(), 64, 64);
        let b = img((0..64 * 64).map(|_| rng.random()).collect(), 64, 64);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!(ssim(&a, &b).unwrap() < 0.1);
        assert!(ssim(&img(vec![0; 100], 10, 10), &img(vec![0; 100], 10, 10)).is_err());
    }

    #[test]
    fn adp_reference_rows() {
        for (p, e, want) in [(97.09, 97.09, 0.00), (77.80, 7.84, 89.92), (99.75, 98.35, 1.40)] {
            assert!((adp(p, e).unwrap() - want).abs() < 0.01);
        }
        assert!(adp(0.0, 1.0).is_err());
    }

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 100.0);
        let pred = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];
        let lab = [0, 1, 2, 0, 0, 5, 6, 0, 8, 0];
        assert_eq!(accuracy(&pred, &lab).unwrap(), 60.0);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn ks_of_uniform_grid_is_small() {
        let v: Vec<f32> = (0..1000).map(|i| (i as f32 + 0.5) / 1000.0).collect();
        assert!(ks_uniform(&v) < 0.002);
        assert!(ks_uniform(&vec![0.5; 100]) >= 0.5);
    }

    #[test]
    fn edge_leakage_detects_copies() {
        let mut rng = crate::nn::seeded_rng(9);
        let plain = img((0..28 * 28).map(|i| if (i % 28) > 14 { 230 } else { 10 }).collect(), 28, 28);
        assert!((edge_leakage(&plain, &plain).unwrap() - 1.0).abs() < 1e-9);
        let noise = img((0..28 * 28).map(|_| rng.random()).collect(), 28, 28);
        assert!(edge_leakage(&noise, &plain).unwrap() < 0.2);
    }
}
