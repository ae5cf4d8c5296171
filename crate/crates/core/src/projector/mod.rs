//! The multimodal projection MLP: batched evaluation, analytic
//! Jacobian-vector products, and truncated-SVD factorization.
//!
//! Weights are stored in 32-bit floats. Evaluation runs in 64-bit so that
//! finite differences at small step sizes are not swamped by rounding.

mod activation;
mod lowrank;

pub use activation::Activation;
pub use lowrank::factorize_low_rank;

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::numerics::TokenMatrix;

/// One affine map `y = W x + b` with `W` of shape `out_dim × in_dim`.
#[derive(Debug, Clone)]
pub struct AffineLayer {
    weight: Array2<f32>,
    bias: Array1<f32>,
    // f64 copies, weight transposed to in_dim × out_dim for row-batch GEMM
    weight_t: Array2<f64>,
    bias_f64: Array1<f64>,
}

impl AffineLayer {
    pub fn new(weight: Array2<f32>, bias: Array1<f32>) -> Result<Self> {
        let (out_dim, in_dim) = weight.dim();
        if out_dim == 0 || in_dim == 0 {
            return Err(Error::contract("affine layer with an empty weight matrix"));
        }
        if bias.len() != out_dim {
            return Err(Error::contract(format!(
                "bias length {} does not match weight rows {out_dim}",
                bias.len()
            )));
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "affine layer has non-finite parameters".into(),
            ));
        }
        let weight_t = weight.t().mapv(f64::from);
        let bias_f64 = bias.mapv(f64::from);
        Ok(AffineLayer {
            weight,
            bias,
            weight_t,
            bias_f64,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn weight(&self) -> &Array2<f32> {
        &self.weight
    }

    pub fn bias(&self) -> &Array1<f32> {
        &self.bias
    }

    fn apply_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight_t);
        y += &self.bias_f64;
        y
    }

    fn apply_vec(&self, x: &[f64], with_bias: bool) -> Vec<f64> {
        self.weight
            .outer_iter()
            .zip(self.bias.iter())
            .map(|(row, &b)| {
                let acc: f64 = row.iter().zip(x).map(|(&w, &v)| f64::from(w) * v).sum();
                if with_bias {
                    acc + f64::from(b)
                } else {
                    acc
                }
            })
            .collect()
    }
}

/// Chain of affine layers with an activation at every interior boundary.
///
/// `activations[i]` sits between `layers[i]` and `layers[i + 1]`; nothing
/// is applied after the last layer. Ordinary projectors use one activation
/// everywhere; factorized projectors interleave identity boundaries inside
/// each factor pair.
#[derive(Debug, Clone)]
pub struct Projector {
    layers: Vec<AffineLayer>,
    activations: Vec<Activation>,
}

impl Projector {
    /// Builds a projector that applies `activation` between consecutive layers.
    pub fn new(layers: Vec<AffineLayer>, activation: Activation) -> Result<Self> {
        let n = layers.len().saturating_sub(1);
        Self::with_boundaries(layers, vec![activation; n])
    }

    pub fn with_boundaries(layers: Vec<AffineLayer>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("projector needs at least one layer"));
        }
        if activations.len() + 1 != layers.len() {
            return Err(Error::contract(format!(
                "{} layers need {} boundary activations, got {}",
                layers.len(),
                layers.len() - 1,
                activations.len()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::contract(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Projector {
            layers,
            activations,
        })
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    pub fn boundary_activations(&self) -> &[Activation] {
        &self.activations
    }

    /// The nonlinearity of this projector: the first non-identity boundary,
    /// or identity when there is none.
    pub fn activation(&self) -> Activation {
        self.activations
            .iter()
            .copied()
            .find(|a| *a != Activation::Identity)
            .unwrap_or(Activation::Identity)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// `(in, out)` shape of every layer, in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.in_dim(), l.out_dim()))
            .collect()
    }

    fn check_in_dim(&self, got: usize, what: &str) -> Result<()> {
        if got != self.in_dim() {
            return Err(Error::contract(format!(
                "{what} has dimension {got}, projector expects {}",
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Evaluates the projector on every row of `x` in 64-bit.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_in_dim(x.ncols(), "input batch")?;
        let mut h = self.layers[0].apply_batch(x);
        for (layer, act) in self.layers[1..].iter().zip(&self.activations) {
            if *act != Activation::Identity {
                h.mapv_inplace(|v| act.apply(v));
            }
            h = layer.apply_batch(h.view());
        }
        Ok(h)
    }

    /// `Z = M(X)`, rounded back to 32-bit storage. Patch ids carry over.
    pub fn forward(&self, x: &TokenMatrix) -> Result<TokenMatrix> {
        self.check_in_dim(x.dim(), "token matrix")?;
        let input = x.data().mapv(f64::from);
        let out = self.forward_batch(input.view())?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "projector produced non-finite output".into(),
            ));
        }
        let z = TokenMatrix::new(out.mapv(|v| v as f32))?;
        match x.patch_ids() {
            Some(ids) => z.with_patch_ids(ids.to_vec()),
            None => Ok(z),
        }
    }

    /// Single-vector evaluation.
    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_in_dim(x.len(), "input vector")?;
        let mut h = self.layers[0].apply_vec(x, true);
        for (layer, act) in self.layers[1..].iter().zip(&self.activations) {
            h.iter_mut().for_each(|v| *v = act.apply(*v));
            h = layer.apply_vec(&h, true);
        }
        Ok(h)
    }

    /// Exact Jacobian-vector product `J(x) u`, propagated forward through
    /// each layer alongside the primal values.
    pub fn jvp(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_in_dim(x.len(), "jvp point")?;
        self.check_in_dim(u.len(), "jvp direction")?;
        let mut pre = self.layers[0].apply_vec(x, true);
        let mut tangent = self.layers[0].apply_vec(u, false);
        for (layer, act) in self.layers[1..].iter().zip(&self.activations) {
            for (t, &p) in tangent.iter_mut().zip(&pre) {
                *t *= act.derivative(p);
            }
            pre.iter_mut().for_each(|v| *v = act.apply(*v));
            pre = layer.apply_vec(&pre, true);
            tangent = layer.apply_vec(&tangent, false);
        }
        Ok(tangent)
    }

    /// Returns a copy with every weight and bias multiplied by `alpha`.
    pub fn scaled(&self, alpha: f32) -> Result<Projector> {
        let layers = self
            .layers
            .iter()
            .map(|l| AffineLayer::new(l.weight.mapv(|w| w * alpha), l.bias.mapv(|b| b * alpha)))
            .collect::<Result<Vec<_>>>()?;
        Projector::with_boundaries(layers, self.activations.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_projector;
    use ndarray::{arr1, arr2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layer(w: Array2<f32>, b: Array1<f32>) -> AffineLayer {
        AffineLayer::new(w, b).unwrap()
    }

    #[test]
    fn identity_layer_is_transparent() {
        let p = Projector::new(
            vec![layer(Array2::eye(3), Array1::zeros(3))],
            Activation::GeluTanh,
        )
        .unwrap();
        let x = TokenMatrix::from_rows(2, 3, vec![1., -2., 3., 0.5, 0., -0.25]).unwrap();
        assert_eq!(p.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_last_bias() {
        let b2 = arr1(&[0.5f32, -1.5]);
        let p = Projector::new(
            vec![
                layer(Array2::zeros((4, 3)), arr1(&[1., 2., 3., 4.])),
                layer(Array2::zeros((2, 4)), b2.clone()),
            ],
            Activation::GeluTanh,
        )
        .unwrap();
        let x = TokenMatrix::from_rows(3, 3, (0..9).map(|v| v as f32).collect()).unwrap();
        let z = p.forward(&x).unwrap();
        for i in 0..3 {
            assert_eq!(z.row_slice(i), b2.as_slice().unwrap());
        }
    }

    #[test]
    fn two_layer_matches_scalar_reference() {
        let w1 = arr2(&[[0.5f32, -1.0], [2.0, 0.25], [-0.75, 1.5]]);
        let b1 = arr1(&[0.1f32, -0.2, 0.3]);
        let w2 = arr2(&[[1.0f32, -0.5, 0.25], [0.0, 2.0, -1.0]]);
        let b2 = arr1(&[0.05f32, -0.05]);
        let p = Projector::new(
            vec![layer(w1.clone(), b1.clone()), layer(w2.clone(), b2.clone())],
            Activation::GeluTanh,
        )
        .unwrap();
        let x = [0.8f32, -0.3];
        // neuron-by-neuron evaluation with the textbook tanh-gelu
        let gelu = |v: f64| {
            0.5 * v
                * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v.powi(3))).tanh())
        };
        let hidden: Vec<f64> = (0..3)
            .map(|r| {
                let s = f64::from(w1[[r, 0]]) * f64::from(x[0])
                    + f64::from(w1[[r, 1]]) * f64::from(x[1])
                    + f64::from(b1[r]);
                gelu(s)
            })
            .collect();
        let expected: Vec<f64> = (0..2)
            .map(|o| {
                (0..3)
                    .map(|r| f64::from(w2[[o, r]]) * hidden[r])
                    .sum::<f64>()
                    + f64::from(b2[o])
            })
            .collect();
        let z = p
            .forward(&TokenMatrix::from_rows(1, 2, x.to_vec()).unwrap())
            .unwrap();
        for (g, e) in z.row_slice(0).iter().zip(&expected) {
            assert!((f64::from(*g) - e).abs() < 1e-5);
        }
    }

    #[test]
    fn affine_jvp_is_weight_times_direction() {
        let w = arr2(&[[1.0f32, 2.0], [-3.0, 0.5], [0.25, 4.0]]);
        let p = Projector::new(
            vec![layer(w.clone(), arr1(&[7., 8., 9.]))],
            Activation::GeluTanh,
        )
        .unwrap();
        let u = [0.3, -0.7];
        for x in [[0.0, 0.0], [10.0, -5.0]] {
            let got = p.jvp(&x, &u).unwrap();
            for r in 0..3 {
                let e = f64::from(w[[r, 0]]) * u[0] + f64::from(w[[r, 1]]) * u[1];
                assert_eq!(got[r], e);
            }
        }
    }

    #[test]
    fn identity_activation_jvp_is_product_of_weights() {
        let p = random_projector(&[4, 6, 3], Activation::Identity, 1.0, 5);
        let u = [0.1, -0.2, 0.3, 0.4];
        let w1 = p.layers()[0].weight().mapv(f64::from);
        let w2 = p.layers()[1].weight().mapv(f64::from);
        let expected = w2.dot(&w1).dot(&ndarray::arr1(&u));
        let got = p.jvp(&[1.0, 2.0, 3.0, 4.0], &u).unwrap();
        for (g, e) in got.iter().zip(expected.iter()) {
            assert!((g - e).abs() < 1e-6);
        }
    }

    #[test]
    fn gelu_jvp_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (seed, act) in [(1, Activation::GeluTanh), (2, Activation::GeluExact)] {
            let p = random_projector(&[4, 8, 3], act, 1.0, seed);
            for _ in 0..10 {
                let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let u: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let h = 1e-4;
                let xp: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + h * b).collect();
                let xm: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a - h * b).collect();
                let fp = p.forward_vec(&xp).unwrap();
                let fm = p.forward_vec(&xm).unwrap();
                let jv = p.jvp(&x, &u).unwrap();
                let fd: Vec<f64> = fp
                    .iter()
                    .zip(&fm)
                    .map(|(a, b)| (a - b) / (2.0 * h))
                    .collect();
                let err: f64 = fd
                    .iter()
                    .zip(&jv)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let scale: f64 = jv.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                assert!(err / scale < 1e-4, "relative error {}", err / scale);
            }
        }
    }

    #[test]
    fn batch_equals_row_by_row() {
        let p = random_projector(&[5, 7, 4], Activation::GeluTanh, 0.8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((9, 5), |_| rng.gen_range(-1.0..1.0));
        let batch = p.forward_batch(x.view()).unwrap();
        for (i, row) in x.outer_iter().enumerate() {
            let single = p.forward_vec(row.as_slice().unwrap()).unwrap();
            for (a, b) in batch.row(i).iter().zip(&single) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatches_are_contract_errors() {
        let p = random_projector(&[3, 2], Activation::Identity, 1.0, 0);
        let x = TokenMatrix::from_rows(1, 4, vec![0.0; 4]).unwrap();
        assert!(matches!(p.forward(&x), Err(Error::Contract(_))));
        assert!(p.jvp(&[0.0; 3], &[0.0; 2]).is_err());
        let bad = Projector::new(
            vec![
                layer(Array2::zeros((2, 3)), Array1::zeros(2)),
                layer(Array2::zeros((2, 4)), Array1::zeros(2)),
            ],
            Activation::Identity,
        );
        assert!(bad.is_err());
        assert!(AffineLayer::new(Array2::zeros((2, 3)), Array1::zeros(3)).is_err());
    }
}
