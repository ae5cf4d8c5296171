use nalgebra::DMatrix;
use ndarray::{Array1, Array2};

use super::{Activation, AffineLayer, Projector};
use crate::error::{Error, Result};

/// Replaces every layer `W x + b` by the pair `W_a (W_b x) + b`, where
/// `W_a = U_k Σ_k` and `W_b = V_kᵀ` come from the rank-`k` truncated SVD of
/// `W`. The boundary inside each pair is the identity; the original
/// activations stay between the pairs.
pub fn factorize_low_rank(p: &Projector, k: usize) -> Result<Projector> {
    if k == 0 {
        return Err(Error::contract("factorization rank must be positive"));
    }
    for (i, layer) in p.layers().iter().enumerate() {
        let limit = layer.in_dim().min(layer.out_dim());
        if k > limit {
            return Err(Error::contract(format!(
                "rank {k} exceeds min(in, out) = {limit} of layer {i} ({}x{})",
                layer.out_dim(),
                layer.in_dim()
            )));
        }
    }

    let mut layers = Vec::with_capacity(2 * p.layers().len());
    let mut boundaries = Vec::with_capacity(2 * p.layers().len());
    for (i, layer) in p.layers().iter().enumerate() {
        let (out_factor, in_factor) = truncated_factors(layer.weight(), k);
        layers.push(AffineLayer::new(in_factor, Array1::zeros(k))?);
        layers.push(AffineLayer::new(out_factor, layer.bias().clone())?);
        boundaries.push(Activation::Identity);
        if let Some(act) = p.boundary_activations().get(i) {
            boundaries.push(*act);
        }
    }
    Projector::with_boundaries(layers, boundaries)
}

/// Returns `(U_k Σ_k, V_kᵀ)` with singular values sorted descending.
fn truncated_factors(weight: &Array2<f32>, k: usize) -> (Array2<f32>, Array2<f32>) {
    let (rows, cols) = weight.dim();
    let w = DMatrix::from_fn(rows, cols, |r, c| f64::from(weight[[r, c]]));
    let svd = w.svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });

    let out_factor = Array2::from_shape_fn((rows, k), |(r, j)| {
        let s = order[j];
        (u[(r, s)] * svd.singular_values[s]) as f32
    });
    let in_factor = Array2::from_shape_fn((k, cols), |(j, c)| v_t[(order[j], c)] as f32);
    (out_factor, in_factor)
}
