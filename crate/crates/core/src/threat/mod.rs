//! Attack evaluations against a trained codec: key guessing, known-plaintext
//! regression, and generative inversion by the classifying server.

mod bruteforce;
mod cloud;
mod kpa;

pub use bruteforce::{brute_force_sweep, recover_with_guess, SeedStats, SweepResult};
pub use cloud::{
    discriminator_accuracy, latent_variance_penalty, train_cloud_attack, train_discriminator, CloudAttack, CloudAttackConfig,
    CloudEpoch, Discriminator, DiscriminatorConfig, DiscriminatorReport,
};
pub use kpa::{eval_kpa, train_kpa, KpaConfig, KpaModel};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{psnr, ssim, summarize};
use crate::tensor::{Image8, Tensor};

/// Reconstruction fidelity over an image set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub mean_psnr: f64,
    pub min_psnr: f64,
    pub max_psnr: f64,
    pub mean_ssim: Option<f64>,
    pub count: usize,
    /// Exact reconstructions (infinite PSNR), excluded from the PSNR statistics.
    pub inf_count: usize,
}

impl Fidelity {
    /// Compares `[n,c,h,w]` reconstructions against references after 8-bit quantisation.
    pub fn of(recon: &Tensor, truth: &Tensor) -> Result<Self> {
        let a: Vec<Image8> = recon.unbatch().iter().map(Image8::from_unit).collect::<Result<_>>()?;
        let b: Vec<Image8> = truth.unbatch().iter().map(Image8::from_unit).collect::<Result<_>>()?;
        Self::of_images(&a, &b)
    }

    pub fn of_images(recon: &[Image8], truth: &[Image8]) -> Result<Self> {
        let p: Vec<f64> = recon.iter().zip(truth).map(|(a, b)| psnr(a, b)).collect::<Result<_>>()?;
        let (_, h, w) = truth[0].dims();
        let mean_ssim = if h >= 11 && w >= 11 {
            let s: Vec<f64> = recon.iter().zip(truth).map(|(a, b)| ssim(a, b)).collect::<Result<_>>()?;
            Some(s.iter().sum::<f64>() / s.len() as f64)
        } else {
            None
        };
        let sm = summarize(&p);
        Ok(Self { mean_psnr: sm.mean, min_psnr: sm.min, max_psnr: sm.max, mean_ssim, count: p.len(), inf_count: sm.inf_count })
    }
}
