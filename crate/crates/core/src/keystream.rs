//! Key-seeded random streams.
//!
//! Every keyed draw comes from ChaCha20 with a 256-bit seed built from the
//! 64-bit key and the ChaCha stream id set to the purpose. Streams are
//! addressable by word position, so the decoder can rebuild any draw from
//! `(key, purpose, index)` alone.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The only secret of the scheme. `Debug`/`Display` never print the value.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SecretKey(u64);

impl SecretKey {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn seed(&self) -> u64 {
        self.0
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(<redacted>)")
    }
}

impl FromStr for SecretKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .parse::<u64>()
            .map(SecretKey)
            .map_err(|e| Error::Invalid(format!("key must be a decimal u64: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Rni,
    Quant,
    Nae,
    Nes,
}

impl Purpose {
    pub const ALL: [Purpose; 4] = [Purpose::Rni, Purpose::Quant, Purpose::Nae, Purpose::Nes];

    fn stream_id(self) -> u64 {
        match self {
            Purpose::Rni => 1,
            Purpose::Quant => 2,
            Purpose::Nae => 3,
            Purpose::Nes => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Purpose::Rni => "rni",
            Purpose::Quant => "quant",
            Purpose::Nae => "nae",
            Purpose::Nes => "nes",
        }
    }
}

impl FromStr for Purpose {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Purpose::ALL
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| Error::UnknownPurpose(s.to_string()))
    }
}

/// Deterministic stream of uniform reals in `[0,1)` (and Gaussians on demand).
pub struct KeyStream {
    rng: ChaCha20Rng,
}

const TWO_POW_32: f64 = 4294967296.0;

impl KeyStream {
    /// Jumps to the `index`-th 32-bit word of the stream.
    pub fn seek(&mut self, index: u128) {
        self.rng.set_word_pos(index);
    }

    /// `u32 / 2^32`, exact in f64 and strictly below 1.
    pub fn next_unit(&mut self) -> f64 {
        self.rng.next_u32() as f64 / TWO_POW_32
    }

    pub fn next_gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn units(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_unit()).collect()
    }
}

pub fn derive_stream(key: SecretKey, purpose: Purpose) -> KeyStream {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&key.0.to_le_bytes());
    seed[8..16].copy_from_slice(b"ric-keys");
    let mut rng = ChaCha20Rng::from_seed(seed);
    rng.set_stream(purpose.stream_id());
    KeyStream { rng }
}

/// String-labelled entry point; rejects labels outside [`Purpose`].
pub fn derive_stream_labeled(key: SecretKey, purpose: &str) -> Result<KeyStream> {
    Ok(derive_stream(key, purpose.parse()?))
}

/// A key-derived uniform image. Carries its shape, never its key.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomNoisyImage {
    pub values: Tensor,
    pub purpose: Purpose,
}

impl RandomNoisyImage {
    pub fn dims(&self) -> (usize, usize, usize) {
        match self.values.shape() {
            [c, h, w] => (*c, *h, *w),
            s => unreachable!("rni shape {s:?}"),
        }
    }

    /// The RNI as a `[1,c,h,w]` batch.
    pub fn batch(&self) -> Tensor {
        let (c, h, w) = self.dims();
        self.values.clone().reshape(&[1, c, h, w]).expect("same length")
    }
}

pub fn generate_rni(key: SecretKey, shape: (usize, usize, usize)) -> Result<RandomNoisyImage> {
    let (c, h, w) = shape;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Invalid(format!("rni shape ({c},{h},{w}) has a zero dimension")));
    }
    let mut s = derive_stream(key, Purpose::Rni);
    // f32 rounding may land a draw on exactly 1.0, still inside [0,1].
    let data = (0..c * h * w).map(|_| s.next_unit() as f32).collect();
    Ok(RandomNoisyImage { values: Tensor::new(&[c, h, w], data)?, purpose: Purpose::Rni })
}
