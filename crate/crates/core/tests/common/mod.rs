#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::{Array1, Array2};
use sensprune::numerics::rng::GaussianStream;
use sensprune::numerics::{cosine_similarity, TokenMatrix};
use sensprune::projector::{Activation, AffineLayer, Projector};
use sensprune::selection::Policy;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Projector with N(0, 1/in) weights and N(0, 0.01) biases drawn from the
/// crate's portable generator, so fixtures rebuild identically anywhere.
pub fn gaussian_projector(dims: &[usize], act: Activation, seed: u64) -> Projector {
    let mut g = GaussianStream::new(seed, 1000);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (i, o) = (w[0], w[1]);
            let s = 1.0 / (i as f64).sqrt();
            let weight = Array2::from_shape_fn((o, i), |_| (g.next_normal() * s) as f32);
            let bias = Array1::from_shape_fn(o, |_| (g.next_normal() * 0.1) as f32);
            AffineLayer::new(weight, bias).unwrap()
        })
        .collect();
    Projector::new(layers, act).unwrap()
}

pub fn gaussian_tokens(n: usize, dim: usize, seed: u64) -> TokenMatrix {
    let mut g = GaussianStream::new(seed, 2000);
    let values = (0..n * dim).map(|_| g.next_normal() as f32).collect();
    TokenMatrix::from_rows(n, dim, values).unwrap()
}

pub fn identity_projector(dim: usize) -> Projector {
    let weight = Array2::from_shape_fn((dim, dim), |(r, c)| if r == c { 1.0 } else { 0.0 });
    let layer = AffineLayer::new(weight, Array1::zeros(dim)).unwrap();
    Projector::new(vec![layer], Activation::Identity).unwrap()
}

fn div(features: &TokenMatrix, i: usize, chosen: &[usize]) -> f64 {
    if chosen.is_empty() {
        return 1.0;
    }
    let max_cos = chosen
        .iter()
        .map(|&j| cosine_similarity(features.row_slice(i), features.row_slice(j)).unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    1.0 - max_cos
}

/// Reference greedy selection: every score recomputed from scratch.
pub fn naive_greedy(
    features: &TokenMatrix,
    normalized: &[f32],
    k: usize,
    policy: Policy,
) -> Vec<usize> {
    let n = features.n_tokens();
    let mut chosen: Vec<usize> = Vec::new();
    if policy == Policy::DiversityOnly {
        let mut best = (0, f64::NEG_INFINITY);
        for i in 0..n {
            let nearest = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    1.0 - cosine_similarity(features.row_slice(i), features.row_slice(j)).unwrap()
                })
                .fold(f64::INFINITY, f64::min);
            if nearest > best.1 {
                best = (i, nearest);
            }
        }
        chosen.push(best.0);
    }
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|i| !chosen.contains(i)) {
            let s = f64::from(normalized[i]);
            let score = match policy {
                Policy::FusedMultiply => s * div(features, i, &chosen),
                Policy::FusedSum => s + div(features, i, &chosen),
                Policy::SensitivityOnly => s,
                Policy::DiversityOnly => div(features, i, &chosen),
            };
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}
