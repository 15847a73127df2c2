// Negated float comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod attack;
pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod imageio;
pub mod keystream;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod security;
pub mod tensor;
pub mod threat;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Image8, Tensor};
