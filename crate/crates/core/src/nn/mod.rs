//! Minimal CPU neural-network engine: tensors on a tape, convolution via
//! im2col + sgemm, and Adam.

pub mod graph;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;

pub use graph::{Bound, Grads, Graph, Var};
pub use layers::{Conv2d, Dense};
pub use optim::{Adam, AdamHyper, AdamSlot};
pub use params::ParamStore;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for weight initialisation and data shuffling. These
/// seeds are not secrets and never touch the keystream.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod gradcheck;
