use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::TokenMatrix;
use crate::projector::{Activation, AffineLayer, Projector};

/// Projector with uniform(-scale, scale) weights and uniform(-0.5, 0.5) biases.
pub fn random_projector(dims: &[usize], act: Activation, scale: f32, seed: u64) -> Projector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = dims
        .windows(2)
        .map(|d| {
            let w = Array2::from_shape_fn((d[1], d[0]), |_| rng.gen_range(-scale..scale));
            let b = Array1::from_shape_fn(d[1], |_| rng.gen_range(-0.5f32..0.5));
            AffineLayer::new(w, b).unwrap()
        })
        .collect();
    Projector::new(layers, act).unwrap()
}

pub fn random_tokens(n: usize, dim: usize, seed: u64) -> TokenMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TokenMatrix::from_rows(
        n,
        dim,
        (0..n * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
    )
    .unwrap()
}

pub fn single_layer(weight: Array2<f32>) -> Projector {
    let out = weight.nrows();
    Projector::new(
        vec![AffineLayer::new(weight, Array1::zeros(out)).unwrap()],
        Activation::Identity,
    )
    .unwrap()
}
