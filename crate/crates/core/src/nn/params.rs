use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named, ordered parameter tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    /// Kaiming-uniform weights for a layer with the given fan-in.
    pub fn add_kaiming(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> usize {
        let bound = (6.0 / fan_in as f32).sqrt();
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape, data).expect("init shape"))
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Little-endian f32 concatenation of all tensors in order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.num_elements() * 4);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Overwrites every tensor from a blob produced by [`Self::to_bytes`].
    pub fn load_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        if bytes.len() != self.num_elements() * 4 {
            return Err(Error::Checkpoint(format!(
                "parameter blob has {} bytes, architecture needs {}",
                bytes.len(),
                self.num_elements() * 4
            )));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
                off += 4;
            }
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            h.update(n.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
        }
        h.update(self.to_bytes());
        hex::encode(h.finalize())
    }
}
