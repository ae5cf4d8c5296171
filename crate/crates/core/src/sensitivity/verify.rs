//! Empirical check that the symmetric finite difference converges to the
//! Jacobian-vector product: exactly for affine maps, quadratically in `h`
//! otherwise.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::rng::GaussianStream;
use crate::numerics::sample_directions_on_stream;
use crate::projector::Projector;

/// Directions averaged per probe point.
pub const PROBE_DIRECTIONS: usize = 8;

/// Round-off is considered dominant when the error is within this factor of
/// the estimated cancellation floor `eps * ‖M‖ / h`.
const ROUNDOFF_FACTOR: f64 = 100.0;

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub probe: usize,
    pub h: f64,
    /// Mean over directions of `‖FD(h) - J u‖₂`.
    pub error: f64,
    /// `log(e(h_prev) / e(h)) / log(h_prev / h)`; absent for the first step
    /// or when either error is zero.
    pub order: Option<f64>,
    pub roundoff_warning: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub h_values: Vec<f64>,
    /// Error averaged over probes, per step size.
    pub mean_error: Vec<f64>,
    /// Per consecutive pair of step sizes, the order averaged over probes.
    pub mean_order: Vec<Option<f64>>,
}

impl ConvergenceTable {
    pub fn max_error(&self) -> f64 {
        self.rows.iter().map(|r| r.error).fold(0.0, f64::max)
    }

    /// Mean of every per-probe order in the table.
    pub fn overall_order(&self) -> Option<f64> {
        let orders: Vec<f64> = self.rows.iter().filter_map(|r| r.order).collect();
        if orders.is_empty() {
            None
        } else {
            Some(orders.iter().sum::<f64>() / orders.len() as f64)
        }
    }
}

/// Probe points are standard normal vectors from stream 0 of `seed`; probe
/// `k` uses [`PROBE_DIRECTIONS`] unit directions from stream `k + 1`.
pub fn verify_central_difference(
    p: &Projector,
    n_probes: usize,
    h_values: &[f64],
    seed: u64,
) -> Result<ConvergenceTable> {
    if n_probes == 0 {
        return Err(Error::contract("need at least one probe"));
    }
    if h_values.is_empty() {
        return Err(Error::contract("need at least one step size"));
    }
    if h_values.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return Err(Error::contract("step sizes must be positive and finite"));
    }
    if h_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::contract("step sizes must be strictly descending"));
    }

    let dim = p.in_dim();
    let mut points = GaussianStream::new(seed, 0);
    let mut rows = Vec::with_capacity(n_probes * h_values.len());
    for probe in 0..n_probes {
        let x: Vec<f64> = (0..dim).map(|_| points.next_normal()).collect();
        let dirs = sample_directions_on_stream(PROBE_DIRECTIONS, dim, seed, probe as u64 + 1)?;
        let units: Vec<Vec<f64>> = (0..dirs.m())
            .map(|j| dirs.row(j).iter().map(|&v| f64::from(v)).collect())
            .collect();
        let exact: Vec<Vec<f64>> = units.iter().map(|u| p.jvp(&x, u)).collect::<Result<_>>()?;

        let mut prev: Option<(f64, f64)> = None;
        for &h in h_values {
            let mut err_sum = 0.0;
            let mut floor_sum = 0.0;
            for (u, ju) in units.iter().zip(&exact) {
                let xp: Vec<f64> = x.iter().zip(u).map(|(a, b)| a + h * b).collect();
                let xm: Vec<f64> = x.iter().zip(u).map(|(a, b)| a - h * b).collect();
                let fp = p.forward_vec(&xp)?;
                let fm = p.forward_vec(&xm)?;
                let diff: f64 = fp
                    .iter()
                    .zip(&fm)
                    .zip(ju)
                    .map(|((a, b), j)| ((a - b) / (2.0 * h) - j).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if !diff.is_finite() {
                    return Err(Error::NonFinite("projector output is not finite".into()));
                }
                err_sum += diff;
                floor_sum += f64::EPSILON * (l2(&fp) + l2(&fm)) / (2.0 * h);
            }
            let error = err_sum / units.len() as f64;
            let floor = floor_sum / units.len() as f64;
            let order = prev.and_then(|(ph, pe)| convergence_order(ph, pe, h, error));
            rows.push(ConvergenceRow {
                probe,
                h,
                error,
                order,
                roundoff_warning: error <= ROUNDOFF_FACTOR * floor,
            });
            prev = Some((h, error));
        }
    }

    let steps = h_values.len();
    let mean_error = (0..steps)
        .map(|s| {
            rows.iter()
                .skip(s)
                .step_by(steps)
                .map(|r| r.error)
                .sum::<f64>()
                / n_probes as f64
        })
        .collect();
    let mean_order = (1..steps)
        .map(|s| {
            let orders: Vec<f64> = rows
                .iter()
                .skip(s)
                .step_by(steps)
                .filter_map(|r| r.order)
                .collect();
            (!orders.is_empty()).then(|| orders.iter().sum::<f64>() / orders.len() as f64)
        })
        .collect();
    Ok(ConvergenceTable {
        rows,
        h_values: h_values.to_vec(),
        mean_error,
        mean_order,
    })
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn convergence_order(h_prev: f64, e_prev: f64, h: f64, e: f64) -> Option<f64> {
    if e_prev > 0.0 && e > 0.0 {
        Some((e_prev / e).ln() / (h_prev / h).ln())
    } else {
        None
    }
}
