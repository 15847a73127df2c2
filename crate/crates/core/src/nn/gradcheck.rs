//! Finite-difference oracle for every differentiable op.

use super::graph::{Graph, Var};
use crate::tensor::Tensor;

fn pseudo(n: usize, seed: u32) -> Vec<f32> {
    (0..n).map(|i| (((i as u32).wrapping_mul(2654435761).wrapping_add(seed) >> 8) % 1000) as f32 / 500.0 - 1.0).collect()
}

/// Compares analytic gradients of `Σ w·op(x)` with central differences.
fn check(shape: &[usize], build: impl Fn(&mut Graph, Var) -> Var, h: f32, tol: f32) {
    let len: usize = shape.iter().product();
    let x0 = Tensor::new(shape, pseudo(len, 7)).unwrap();
    let mut g = Graph::new();
    let x = g.input_grad(x0.clone());
    let y = build(&mut g, x);
    let w = pseudo(g.value(y).len(), 99);
    let loss = g.weighted_sum(y, &w);
    let grads = g.backward(loss);
    let analytic = grads.of(x).expect("input gradient").clone();

    let eval = |xv: &Tensor| {
        let mut g = Graph::new();
        let x = g.input(xv.clone());
        let y = build(&mut g, x);
        let l = g.weighted_sum(y, &w);
        g.value(l).item() as f64
    };
    for i in 0..len {
        let mut p = x0.clone();
        p.data_mut()[i] += h;
        let mut m = x0.clone();
        m.data_mut()[i] -= h;
        let fd = ((eval(&p) - eval(&m)) / (2.0 * h as f64)) as f32;
        let an = analytic.data()[i];
        assert!(
            (fd - an).abs() <= tol * (1.0 + fd.abs().max(an.abs())),
            "element {i}: finite difference {fd} vs analytic {an}"
        );
    }
}

#[test]
fn conv_grad_wrt_input_and_weights() {
    check(&[2, 3, 5, 6], |g, x| {
        let w = g.input(Tensor::new(&[4, 3, 3, 3], pseudo(108, 3)).unwrap());
        let b = g.input(Tensor::new(&[4], vec![0.1, 0.2, -0.1, 0.0]).unwrap());
        g.conv2d(x, w, b, 1, 1)
    }, 1e-2, 1e-2);
    check(&[4, 2, 3, 3], |g, w| {
        let x = g.input(Tensor::new(&[2, 2, 6, 5], pseudo(120, 5)).unwrap());
        let b = g.input(Tensor::zeros(&[4]));
        g.conv2d(x, w, b, 2, 1)
    }, 1e-2, 1e-2);
    check(&[3, 5, 1, 1], |g, w| {
        let x = g.input(Tensor::new(&[2, 5, 3, 3], pseudo(90, 1)).unwrap());
        let b = g.input(Tensor::zeros(&[3]));
        g.conv2d(x, w, b, 1, 0)
    }, 1e-2, 1e-2);
}

#[test]
fn linear_grads() {
    check(&[3, 4], |g, x| {
        let w = g.input(Tensor::new(&[5, 4], pseudo(20, 1)).unwrap());
        let b = g.input(Tensor::zeros(&[5]));
        g.linear(x, w, b)
    }, 1e-2, 1e-2);
    check(&[5, 4], |g, w| {
        let x = g.input(Tensor::new(&[3, 4], pseudo(12, 2)).unwrap());
        let b = g.input(Tensor::zeros(&[5]));
        g.linear(x, w, b)
    }, 1e-2, 1e-2);
}

#[test]
fn pointwise_grads() {
    check(&[2, 7], |g, x| g.sigmoid(x), 1e-2, 1e-2);
    check(&[2, 7], |g, x| g.tanh(x), 1e-2, 1e-2);
    check(&[2, 7], |g, x| g.softplus(x), 1e-2, 1e-2);
    check(&[2, 7], |g, x| g.leaky_relu(x, 0.2), 1e-3, 1e-2);
    check(&[2, 7], |g, x| g.scale(x, -3.0), 1e-2, 1e-2);
    check(&[2, 7], |g, x| {
        let y = g.input(Tensor::new(&[2, 7], pseudo(14, 4)).unwrap());
        g.axpby(x, 0.3, y, 0.7)
    }, 1e-2, 1e-2);
}

#[test]
fn structural_grads() {
    check(&[1, 2, 4, 5], |g, x| g.max_pool2(x), 1e-3, 1e-2);
    check(&[1, 2, 3, 3], |g, x| g.upsample2(x), 1e-2, 1e-2);
    check(&[2, 1, 3, 3], |g, x| {
        let y = g.input(Tensor::new(&[2, 2, 3, 3], pseudo(36, 8)).unwrap());
        let c = g.concat(y, x);
        g.concat(c, x)
    }, 1e-2, 1e-2);
    check(&[1, 2, 3, 4], |g, x| g.pad2d(x, 2), 1e-2, 1e-2);
    check(&[1, 2, 5, 6], |g, x| g.crop2d(x, 1, 2, 3, 3), 1e-2, 1e-2);
    check(&[2, 2, 2, 2], |g, x| g.flatten(x), 1e-2, 1e-2);
}

#[test]
fn loss_grads() {
    check(&[3, 4], |g, x| g.cross_entropy(x, &[0, 3, 1]), 1e-2, 1e-2);
    check(&[3, 4], |g, x| g.margin_loss(x, &[0, 3, 1], 5.0), 1e-3, 1e-2);
    check(&[4], |g, x| g.bce_logits(x, &[1.0, 0.0, 1.0, 0.0]), 1e-2, 1e-2);
    check(&[2, 6], |g, x| {
        let y = g.input(Tensor::new(&[2, 6], pseudo(12, 6)).unwrap());
        g.l2_dist(x, y)
    }, 1e-3, 1e-2);
    check(&[5, 3], |g, x| g.latent_variance(x), 1e-2, 1e-2);
    check(&[5, 3], |g, x| g.mean(x), 1e-2, 1e-2);
}

#[test]
fn ste_clip_passes_interior_blocks_exterior() {
    let mut g = Graph::new();
    let x = g.input_grad(Tensor::new(&[4], vec![-1.0, 0.5, 1.5, 0.9]).unwrap());
    let y = g.ste_clip(x, 0.0, 1.0);
    assert_eq!(g.value(y).data(), &[0.0, 0.5, 1.0, 0.9]);
    let l = g.weighted_sum(y, &[1.0, 2.0, 3.0, 4.0]);
    let gr = g.backward(l);
    assert_eq!(gr.of(x).unwrap().data(), &[0.0, 2.0, 0.0, 4.0]);
}

#[test]
fn frozen_params_get_no_gradient() {
    let mut ps = super::ParamStore::new();
    let mut rng = super::seeded_rng(1);
    let conv = super::Conv2d::same(&mut ps, "c", 1, 2, 3, &mut rng);
    let mut g = Graph::new();
    let p = g.bind(&ps, false);
    let x = g.input_grad(Tensor::full(&[1, 1, 4, 4], 0.5));
    let y = conv.forward(&mut g, &p, x);
    let l = g.mean(y);
    let gr = g.backward(l);
    assert!(gr.of(x).is_some());
    assert!(gr.of(p.var(0)).is_none());
}
