//! Zeroth-order token sensitivity through the projector.
//!
//! For token `x_i` and unit direction `u_j`, the symmetric response is
//! `δ_ij = (M(x_i + h u_j) - M(x_i - h u_j)) / 2h` and the sensitivity is the
//! mean response norm `S(i) = (1/m) Σ_j ‖δ_ij‖₂`. The expanded `X ± hU`
//! batches are evaluated in chunks of at most `row_budget` rows.

mod verify;

pub use verify::{verify_central_difference, ConvergenceRow, ConvergenceTable, PROBE_DIRECTIONS};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    minmax_normalize, sample_directions, sample_directions_on_stream, DirectionSet, TokenMatrix,
};
use crate::projector::Projector;

pub const DEFAULT_M: usize = 64;
pub const DEFAULT_H: f64 = 0.01;
pub const DEFAULT_ROW_BUDGET: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    /// Number of perturbation directions.
    pub m: usize,
    /// Finite-difference step.
    pub h: f64,
    pub seed: u64,
    /// Reuse one direction set for every token. When false, token `i` draws
    /// its own directions from PCG stream `i + 1`.
    pub share_directions: bool,
    /// Upper bound on rows per batched projector call (both signs counted).
    #[serde(skip, default = "default_row_budget")]
    pub row_budget: usize,
}

fn default_row_budget() -> usize {
    DEFAULT_ROW_BUDGET
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            m: DEFAULT_M,
            h: DEFAULT_H,
            seed: 0,
            share_directions: true,
            row_budget: DEFAULT_ROW_BUDGET,
        }
    }
}

impl SensitivityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::contract("number of directions m must be at least 1"));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::contract(format!(
                "step size h must be positive and finite, got {}",
                self.h
            )));
        }
        if self.row_budget < 2 {
            return Err(Error::contract(
                "row budget must allow at least one +/- pair",
            ));
        }
        Ok(())
    }
}

/// Raw and min-max normalized sensitivities for every token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub raw: Vec<f32>,
    pub normalized: Vec<f32>,
    #[serde(flatten)]
    pub config: SensitivityConfig,
}

impl SensitivityReport {
    /// Builds a report from raw sensitivities (normalizing them).
    pub fn from_raw(raw: Vec<f32>, config: SensitivityConfig) -> Result<Self> {
        let wide: Vec<f64> = raw.iter().map(|&v| f64::from(v)).collect();
        let normalized = minmax_normalize(&wide)?
            .into_iter()
            .map(|v| v as f32)
            .collect();
        Ok(SensitivityReport {
            raw,
            normalized,
            config,
        })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

enum Directions {
    Shared(DirectionSet),
    PerToken { m: usize, dim: usize, seed: u64 },
}

impl Directions {
    fn for_token(&self, token: usize) -> Result<std::borrow::Cow<'_, DirectionSet>> {
        match self {
            Directions::Shared(d) => Ok(std::borrow::Cow::Borrowed(d)),
            Directions::PerToken { m, dim, seed } => Ok(std::borrow::Cow::Owned(
                sample_directions_on_stream(*m, *dim, *seed, token as u64 + 1)?,
            )),
        }
    }
}

pub fn estimate_sensitivity(
    p: &Projector,
    x: &TokenMatrix,
    cfg: &SensitivityConfig,
) -> Result<SensitivityReport> {
    cfg.validate()?;
    if x.dim() != p.in_dim() {
        return Err(Error::contract(format!(
            "tokens have dimension {}, projector expects {}",
            x.dim(),
            p.in_dim()
        )));
    }
    let (n, dim, m) = (x.n_tokens(), x.dim(), cfg.m);
    let directions = if cfg.share_directions {
        Directions::Shared(sample_directions(m, dim, cfg.seed)?)
    } else {
        Directions::PerToken {
            m,
            dim,
            seed: cfg.seed,
        }
    };

    // Flat (token, direction) pair index space, split into fixed chunks.
    let total = n * m;
    let chunk = (cfg.row_budget / 2).max(1);
    let starts: Vec<usize> = (0..total).step_by(chunk).collect();
    let norms: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + chunk).min(total);
            response_norms(p, x, &directions, cfg.h, m, start, end)
        })
        .collect::<Result<_>>()?;

    let mut raw = vec![0.0f32; n];
    let mut flat = norms.iter().flatten();
    for s in raw.iter_mut() {
        let mut acc = 0.0f64;
        for _ in 0..m {
            acc += flat.next().expect("one norm per pair");
        }
        *s = (acc / m as f64) as f32;
    }
    SensitivityReport::from_raw(raw, *cfg)
}

/// `‖δ‖₂` for pairs `start..end` of the flattened token-major pair index.
fn response_norms(
    p: &Projector,
    x: &TokenMatrix,
    directions: &Directions,
    h: f64,
    m: usize,
    start: usize,
    end: usize,
) -> Result<Vec<f64>> {
    let dim = x.dim();
    let rows = end - start;
    let mut plus = Array2::<f64>::zeros((rows, dim));
    let mut minus = Array2::<f64>::zeros((rows, dim));
    let mut token = usize::MAX;
    let mut dirs = None;
    for (r, pair) in (start..end).enumerate() {
        let (t, j) = (pair / m, pair % m);
        if t != token {
            token = t;
            dirs = Some(directions.for_token(t)?);
        }
        let u = dirs.as_ref().expect("set above").row(j);
        let xt = x.row_slice(t);
        let mut prow = plus.row_mut(r);
        let mut mrow = minus.row_mut(r);
        for k in 0..dim {
            let base = f64::from(xt[k]);
            let step = h * f64::from(u[k]);
            prow[k] = base + step;
            mrow[k] = base - step;
        }
    }
    let zp = p.forward_batch(plus.view())?;
    let zm = p.forward_batch(minus.view())?;
    let inv = 1.0 / (2.0 * h);
    let mut out = Vec::with_capacity(rows);
    for (a, b) in zp.outer_iter().zip(zm.outer_iter()) {
        let sq: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(p, q)| ((p - q) * inv).powi(2))
            .sum();
        if !sq.is_finite() {
            return Err(Error::NonFinite(
                "projector output is not finite; weights may be corrupted".into(),
            ));
        }
        out.push(sq.sqrt());
    }
    Ok(out)
}
