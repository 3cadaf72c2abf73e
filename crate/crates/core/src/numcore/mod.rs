//! Dense `f64` tensors, a reverse-mode tape over them, and a
//! finite-difference gradient checker.

mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use gradcheck::finite_difference_check;
pub use graph::{Gradients, Graph, Var, LAYER_NORM_EPS, MASKED_SCORE};
pub use tensor::Tensor;

/// Fills a tensor with `N(0, std²)` draws.
pub fn normal_tensor<R: rand::Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    use rand_distr::{Distribution, Normal};
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

/// Fills a tensor with `U(-bound, bound)` draws.
pub fn uniform_tensor<R: rand::Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}
