//! Parameterised building blocks. Each layer records the indices of its
//! tensors in a [`ParamStore`]; construction order fixes the layout, so
//! rebuilding an architecture and loading a blob restores it exactly.

use rand_chacha::ChaCha8Rng;

use super::graph::{Bound, Graph, Var};
use super::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Conv2d {
    w: usize,
    b: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Shape-preserving (for stride 1) convolution with padding `k/2`.
    pub fn same(ps: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(ps, name, cin, cout, k, 1, k / 2, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = ps.add_kaiming(format!("{name}.weight"), &[cout, cin, k, k], cin * k * k, rng);
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self { w, b, cin, cout, k, stride, pad }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        g.conv2d(x, p.var(self.w), p.var(self.b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    w: usize,
    b: usize,
    pub fin: usize,
    pub fout: usize,
}

impl Dense {
    pub fn new(ps: &mut ParamStore, name: &str, fin: usize, fout: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = ps.add_kaiming(format!("{name}.weight"), &[fout, fin], fin, rng);
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(&[fout]));
        Self { w, b, fin, fout }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        g.linear(x, p.var(self.w), p.var(self.b))
    }
}
