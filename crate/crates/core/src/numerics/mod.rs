//! Storage, direction sampling, and vector primitives.
//!
//! Values are stored in 32-bit floats; reductions (dot products, norms)
//! accumulate in 64-bit.

mod matrix;
pub mod rng;

pub use matrix::TokenMatrix;

use ndarray::Array2;

use crate::error::{Error, Result};
use rng::GaussianStream;

/// Names the algorithm that produced a [`DirectionSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeneratorId {
    /// PCG-XSH-RR 64/32 uniforms through Box–Muller pairs.
    Pcg32BoxMuller,
}

/// `m` unit-norm perturbation directions in `dim` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    directions: Array2<f32>,
    seed: u64,
    stream: u64,
    generator: GeneratorId,
}

impl DirectionSet {
    pub fn m(&self) -> usize {
        self.directions.nrows()
    }

    pub fn dim(&self) -> usize {
        self.directions.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn generator(&self) -> GeneratorId {
        self.generator
    }

    pub fn matrix(&self) -> &Array2<f32> {
        &self.directions
    }

    pub fn row(&self, j: usize) -> &[f32] {
        let dim = self.dim();
        let all = self
            .directions
            .as_slice()
            .expect("direction storage is standard layout");
        &all[j * dim..(j + 1) * dim]
    }
}

/// Samples `m` unit directions on stream 0 of `seed`.
pub fn sample_directions(m: usize, dim: usize, seed: u64) -> Result<DirectionSet> {
    sample_directions_on_stream(m, dim, seed, 0)
}

/// Samples `m` unit directions from an explicit PCG stream.
///
/// Entries are drawn direction-major: all `dim` normals of the first
/// direction, then the second, and so on, from one continuous Gaussian
/// stream. Each row is normalized in 64-bit and rounded to 32-bit. A row
/// whose norm is zero is redrawn from the next stream values.
pub fn sample_directions_on_stream(
    m: usize,
    dim: usize,
    seed: u64,
    stream: u64,
) -> Result<DirectionSet> {
    if m == 0 || dim == 0 {
        return Err(Error::contract(format!(
            "direction count and dimension must be positive (m={m}, dim={dim})"
        )));
    }
    let mut gauss = GaussianStream::new(seed, stream);
    let mut values = Vec::with_capacity(m * dim);
    let mut row = vec![0.0f64; dim];
    for _ in 0..m {
        loop {
            row.iter_mut().for_each(|v| *v = gauss.next_normal());
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 && norm.is_finite() {
                values.extend(row.iter().map(|v| (v / norm) as f32));
                break;
            }
        }
    }
    let directions =
        Array2::from_shape_vec((m, dim), values).expect("shape matches generated length");
    Ok(DirectionSet {
        directions,
        seed,
        stream,
        generator: GeneratorId::Pcg32BoxMuller,
    })
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine from a precomputed dot product and norms, clamped to [-1, 1].
/// A zero norm on either side yields 0.
pub fn cosine_from_parts(dot: f64, norm_a: f64, norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    (dot / (norm_a * norm_b)).clamp(-1.0, 1.0)
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "cosine similarity of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(cosine_from_parts(dot(a, b), norm(a), norm(b)))
}

/// Min-max rescaling to [0, 1]. A constant input maps to all ones.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::contract("min-max normalization of an empty vector"));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "value at position {i} is not finite"
        )));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![1.0; values.len()]);
    }
    let span = max - min;
    Ok(values
        .iter()
        .map(|v| ((v - min) / span).clamp(0.0, 1.0))
        .collect())
}
