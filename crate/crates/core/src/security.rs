//! Brute-force bound: the key-guessing probability bound, NES gradient
//! estimation, and the data-dependent PSNR constant `α`.

use serde::{Deserialize, Serialize};

use crate::attack::{craft_for_key, AttackConfig};
use crate::classifier::{argmax, Classifier};
use crate::codec::RicModel;
use crate::error::{Error, Result};
use crate::keystream::{KeyStream, SecretKey};
use crate::tensor::{Image8, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NesConfig {
    pub sigma: f64,
    /// Total function evaluations; antithetic mode uses `z/2` mirrored pairs.
    pub z: usize,
    pub antithetic: bool,
}

impl Default for NesConfig {
    fn default() -> Self {
        Self { sigma: 1e-3, z: 50, antithetic: true }
    }
}

impl NesConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Invalid(format!("nes sigma must be positive, got {}", self.sigma)));
        }
        if self.z < 2 || (self.antithetic && !self.z.is_multiple_of(2)) {
            return Err(Error::Invalid(format!("nes z must be >= 2 (even when antithetic), got {}", self.z)));
        }
        Ok(())
    }

    fn draws(&self) -> usize {
        if self.antithetic {
            self.z / 2
        } else {
            self.z
        }
    }
}

/// How `(2m+1)/256` enters the bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    Exact,
    /// The base rounded to the nearest power of ten (`3/256 ≈ 0.01` for m = 1).
    PowerOfTen,
}

/// `log10 P <= d·log10((2m+1)/256)`, clamped at zero.
pub fn bound_probability(m: u32, d: u64, mode: BoundMode) -> Result<f64> {
    if !(1..=255).contains(&m) {
        return Err(Error::Invalid(format!("m must be in [1,255], got {m}")));
    }
    if d == 0 {
        return Err(Error::Invalid("d must be positive".into()));
    }
    let base = ((2 * m + 1) as f64 / 256.0).log10();
    let base = match mode {
        BoundMode::Exact => base,
        BoundMode::PowerOfTen => base.round(),
    };
    Ok((d as f64 * base).min(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecurityBound {
    pub m: u32,
    pub d: u64,
    pub alpha: f64,
    pub threshold_db: f64,
    pub log10_prob_bound: f64,
    pub log10_prob_bound_approx: f64,
}

pub fn theorem_report(m: u32, d: u64, alpha: f64) -> Result<SecurityBound> {
    Ok(SecurityBound {
        m,
        d,
        alpha,
        threshold_db: alpha / m as f64,
        log10_prob_bound: bound_probability(m, d, BoundMode::Exact)?,
        log10_prob_bound_approx: bound_probability(m, d, BoundMode::PowerOfTen)?,
    })
}

fn gaussian(stream: &mut KeyStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| stream.next_gaussian()).collect()
}

/// `(1/(σz))·Σ_j v_j·f(r + σ·v_j)`; antithetic mode evaluates each draw at `±v_j`.
pub fn nes_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    r: &[f64],
    cfg: &NesConfig,
    stream: &mut KeyStream,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("nes base point".into()));
    }
    let mut eval = |p: &[f64]| -> Result<f64> {
        let y = f(p);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::NonFinite(format!("f = {y} at point {p:?}")))
        }
    };
    let mut acc = vec![0.0f64; r.len()];
    let mut point = vec![0.0f64; r.len()];
    for _ in 0..cfg.draws() {
        let v = gaussian(stream, r.len());
        for (p, (&ri, &vi)) in point.iter_mut().zip(r.iter().zip(&v)) {
            *p = ri + cfg.sigma * vi;
        }
        let plus = eval(&point)?;
        // Pairs are accumulated as one difference so a constant f cancels exactly.
        let y = if cfg.antithetic {
            for (p, (&ri, &vi)) in point.iter_mut().zip(r.iter().zip(&v)) {
                *p = ri - cfg.sigma * vi;
            }
            plus - eval(&point)?
        } else {
            plus
        };
        for (a, vi) in acc.iter_mut().zip(&v) {
            *a += vi * y;
        }
    }
    let k = 1.0 / (cfg.sigma * cfg.z as f64);
    Ok(acc.into_iter().map(|a| a * k).collect())
}

/// NES gradients of several outputs of one batched map at once: row `i` of the
/// result estimates `∇_r out[pixels[i]]`. `f` maps a `[n,c,h,w]` batch of
/// inputs to a batch of outputs.
pub fn nes_jacobian_rows(
    mut f: impl FnMut(&Tensor) -> Result<Tensor>,
    r: &Tensor,
    pixels: &[usize],
    cfg: &NesConfig,
    stream: &mut KeyStream,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let d = r.len();
    let mut acc = vec![vec![0.0f64; d]; pixels.len()];
    let shape1: Vec<usize> = std::iter::once(1).chain(r.shape().iter().skip(1).copied()).collect();
    let draws = cfg.draws();
    // Small batches keep peak memory bounded for larger images.
    let per_batch = 8usize;
    let mut j = 0;
    while j < draws {
        let nb = per_batch.min(draws - j);
        let vs: Vec<Vec<f64>> = (0..nb).map(|_| gaussian(stream, d)).collect();
        let signs: &[f64] = if cfg.antithetic { &[1.0, -1.0] } else { &[1.0] };
        let mut inputs = Vec::with_capacity(nb * signs.len());
        for v in &vs {
            for &s in signs {
                let data = r.data().iter().zip(v).map(|(&a, &vi)| (a as f64 + s * cfg.sigma * vi) as f32).collect();
                inputs.push(Tensor::new(&shape1, data)?);
            }
        }
        let refs: Vec<&Tensor> = inputs.iter().collect();
        let out = f(&Tensor::stack(&refs)?)?;
        if !out.all_finite() {
            return Err(Error::NonFinite("nes evaluation".into()));
        }
        let stride = out.len() / inputs.len();
        for (b, v) in vs.iter().enumerate() {
            for (row, &px) in acc.iter_mut().zip(pixels) {
                let y = if cfg.antithetic {
                    out.data()[2 * b * stride + px] as f64 - out.data()[(2 * b + 1) * stride + px] as f64
                } else {
                    out.data()[b * stride + px] as f64
                };
                for (a, vi) in row.iter_mut().zip(v) {
                    *a += vi * y;
                }
            }
        }
        j += nb;
    }
    let k = 1.0 / (cfg.sigma * cfg.z as f64);
    for row in &mut acc {
        for a in row.iter_mut() {
            *a *= k;
        }
    }
    Ok(acc)
}

/// A ciphertext made under `key`, probed with `key` and a guess `wrong`.
#[derive(Clone, Debug)]
pub struct AlphaSample {
    pub ciphertext: Image8,
    pub key: SecretKey,
    pub wrong: SecretKey,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub alpha: f64,
    /// Mean extrapolated clamped sum under the square root.
    pub gradient_sum: f64,
    pub pixels_sampled: usize,
    pub d: usize,
    pub samples: usize,
    /// Fraction of per-pixel differences that were negative and clamped to zero.
    pub clamped_fraction: f64,
    pub nes: NesConfig,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Estimates `α` with `ε = 1`. `H_i(r)` decodes `ciphertext` with mask
/// `clamp(r + Δ)`, where `Δ` is the crafted perturbation at the key's own RNI,
/// and returns pixel `i`. Per sample, the sum over sampled
/// pixels of `max(0, ‖∇H_i(n′)‖ − ‖∇H_i(n)‖)` is scaled by `d / pixels`;
/// these sums are averaged and `α = 20·log10(255 / sqrt(sum))`.
pub fn estimate_alpha(
    model: &RicModel,
    clf: &Classifier,
    samples: &[AlphaSample],
    cfg: &NesConfig,
    attack: &AttackConfig,
    pixels: usize,
    stream: &mut KeyStream,
) -> Result<AlphaEstimate> {
    if samples.is_empty() {
        return Err(Error::Invalid("alpha estimation needs at least one sample".into()));
    }
    let (c, h, w) = model.arch.input;
    let d = c * h * w;
    let k = pixels.clamp(1, d);
    // Uniform pixel sample without replacement from the non-secret stream.
    let mut idx: Vec<usize> = (0..d).collect();
    for i in 0..k {
        let j = i + (stream.next_unit() * (d - i) as f64) as usize;
        idx.swap(i, j.min(d - 1));
    }
    let sample = &idx[..k];
    let mut sums = Vec::new();
    let (mut clamped, mut total, mut any_nonzero) = (0usize, 0usize, false);
    for smp in samples {
        let xq = smp.ciphertext.to_unit().reshape(&[1, c, h, w])?;
        let target = argmax(clf.logits(&xq)?.data());
        let grads_for = |key: SecretKey, stream: &mut KeyStream| -> Result<Vec<f64>> {
            let nae = craft_for_key(clf, key, target, attack)?;
            let base = nae.base.batch();
            let delta = nae.delta().reshape(base.shape())?;
            let rows = nes_jacobian_rows(
                |r| {
                    let n = r.shape()[0];
                    let mut mask = r.clone();
                    for (i, m) in mask.data_mut().iter_mut().enumerate() {
                        *m = (*m + delta.data()[i % d]).clamp(0.0, 1.0);
                    }
                    let reps: Vec<&Tensor> = std::iter::repeat_n(&xq, n).collect();
                    let xs = Tensor::stack(&reps)?.reshape(r.shape())?;
                    model.decode_with(&xs, &mask)
                },
                &base,
                sample,
                cfg,
                stream,
            )?;
            Ok(rows.iter().map(|g| l2(g)).collect())
        };
        {
            let gn = grads_for(smp.key, stream)?;
            let gw = grads_for(smp.wrong, stream)?;
            any_nonzero |= gn.iter().chain(&gw).any(|&g| g > 0.0);
            let mut s = 0.0;
            for (a, b) in gw.iter().zip(&gn) {
                let diff = a - b;
                total += 1;
                if diff < 0.0 {
                    clamped += 1;
                } else {
                    s += diff;
                }
            }
            sums.push(s * d as f64 / k as f64);
        }
    }
    if !any_nonzero {
        return Err(Error::Invalid("degenerate gradients: every NES estimate is zero".into()));
    }
    let mean = sums.iter().sum::<f64>() / sums.len() as f64;
    let alpha = if mean > 0.0 { 20.0 * (255.0 / mean.sqrt()).log10() } else { f64::INFINITY };
    Ok(AlphaEstimate {
        alpha,
        gradient_sum: mean,
        pixels_sampled: k,
        d,
        samples: sums.len(),
        clamped_fraction: clamped as f64 / total.max(1) as f64,
        nes: *cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keystream::{derive_stream, Purpose};

    #[test]
    fn bound_examples() {
        let one = bound_probability(1, 1, BoundMode::Exact).unwrap();
        assert!((one - (3.0f64 / 256.0).log10()).abs() < 1e-12);
        assert!((one + 1.9311).abs() < 1e-4);
        assert_eq!(bound_probability(255, 1000, BoundMode::Exact).unwrap(), 0.0);
        assert_eq!(bound_probability(1, 770_000, BoundMode::PowerOfTen).unwrap(), -1.54e6);
        assert!(bound_probability(0, 1, BoundMode::Exact).is_err());
        assert!(bound_probability(256, 1, BoundMode::Exact).is_err());
    }

    #[test]
    fn report_threshold_halves_with_m() {
        let a = theorem_report(1, 76_800, 5.64).unwrap();
        let b = theorem_report(2, 76_800, 5.64).unwrap();
        assert_eq!(a.threshold_db, 5.64);
        assert_eq!(b.threshold_db, 2.82);
        assert!(a.log10_prob_bound < b.log10_prob_bound);
    }

    #[test]
    fn constant_field_cancels_exactly() {
        let mut s = derive_stream(SecretKey::new(3), Purpose::Nes);
        let g = nes_gradient(|_| 7.25, &[0.1, 0.2, 0.3], &NesConfig { z: 20, ..Default::default() }, &mut s).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    fn rel_err(g: &[f64], truth: &[f64]) -> f64 {
        g.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / l2(truth)
    }

    #[test]
    fn quadratic_gradient_low_dim() {
        let r = [0.3, -0.7];
        let mut s = derive_stream(SecretKey::new(11), Purpose::Nes);
        let cfg = NesConfig { z: 1000, sigma: 1e-3, antithetic: true };
        let g = nes_gradient(|p| p.iter().map(|x| x * x).sum(), &r, &cfg, &mut s).unwrap();
        let truth: Vec<f64> = r.iter().map(|x| 2.0 * x).collect();
        let err = rel_err(&g, &truth);
        assert!(err < 0.1, "relative error {err}");
    }

    #[test]
    fn linear_error_matches_sampling_covariance() {
        // Antithetic pairs turn the estimate into (1/n)·Σ v vᵀ w with n = z/2,
        // whose mean squared relative error is (d+1)/n.
        let d = 16;
        let cfg = NesConfig { z: 200, sigma: 1e-3, antithetic: true };
        let mut s = derive_stream(SecretKey::new(12), Purpose::Nes);
        let trials = 60;
        let mut ms = 0.0;
        for _ in 0..trials {
            let w: Vec<f64> = (0..d).map(|_| s.next_gaussian()).collect();
            let r: Vec<f64> = (0..d).map(|_| s.next_unit()).collect();
            let g = nes_gradient(|p| p.iter().zip(&w).map(|(a, b)| a * b).sum(), &r, &cfg, &mut s).unwrap();
            ms += rel_err(&g, &w).powi(2) / trials as f64;
        }
        let oracle = (d + 1) as f64 / (cfg.z / 2) as f64;
        assert!((ms / oracle - 1.0).abs() < 0.25, "mean sq err {ms} vs {oracle}");
    }

    #[test]
    fn non_finite_field_reports_point() {
        let mut s = derive_stream(SecretKey::new(3), Purpose::Nes);
        let e = nes_gradient(|_| f64::NAN, &[0.0], &NesConfig::default(), &mut s).unwrap_err();
        assert!(e.to_string().contains("point"));
    }

    #[test]
    fn jacobian_rows_match_scalar_estimator() {
        // f(r) = 3·r elementwise; row i must match the scalar estimator on r_i's output.
        let r = Tensor::new(&[1, 1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let cfg = NesConfig { z: 40, ..Default::default() };
        let mut s1 = derive_stream(SecretKey::new(9), Purpose::Nes);
        let rows = nes_jacobian_rows(|x| Ok(x.map(|v| 3.0 * v)), &r, &[2], &cfg, &mut s1).unwrap();
        let mut s2 = derive_stream(SecretKey::new(9), Purpose::Nes);
        let rf: Vec<f64> = r.data().iter().map(|&v| v as f64).collect();
        let scalar = nes_gradient(|p| 3.0 * p[2], &rf, &cfg, &mut s2).unwrap();
        for (a, b) in rows[0].iter().zip(&scalar) {
            assert!((a - b).abs() < 0.05 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}
