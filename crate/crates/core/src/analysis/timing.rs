use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::TokenMatrix;
use crate::pipeline::select_tokens;
use crate::projector::Projector;
use crate::selection::SelectionConfig;
use crate::sensitivity::{estimate_sensitivity, SensitivityConfig};

/// Order statistics of one stage, in milliseconds.
#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub median_ms: f64,
    pub q1_ms: f64,
    pub q3_ms: f64,
    pub iqr_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub samples_ms: Vec<f64>,
}

impl StageTiming {
    fn from_samples(samples: Vec<f64>) -> Self {
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let (q1, median, q3) = (
            quantile(&sorted, 0.25),
            quantile(&sorted, 0.5),
            quantile(&sorted, 0.75),
        );
        StageTiming {
            median_ms: median,
            q1_ms: q1,
            q3_ms: q3,
            iqr_ms: q3 - q1,
            min_ms: sorted[0],
            max_ms: sorted[sorted.len() - 1],
            samples_ms: samples,
        }
    }
}

/// Linear interpolation between closest ranks of a sorted sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingSummary {
    pub sensitivity: StageTiming,
    pub selection: StageTiming,
    pub total: StageTiming,
    pub repeats: usize,
    pub timed_iterations: usize,
}

/// Times `repeats` sequential runs of estimation then selection, discarding
/// the first as warm-up. Selection time includes computing the diversity
/// features.
pub fn time_pipeline(
    p: &Projector,
    x: &TokenMatrix,
    sens_cfg: &SensitivityConfig,
    sel_cfg: &SelectionConfig,
    repeats: usize,
) -> Result<TimingSummary> {
    if repeats < 3 {
        return Err(Error::contract(format!(
            "need at least 3 repeats, got {repeats}"
        )));
    }
    let mut sens_ms = Vec::with_capacity(repeats - 1);
    let mut sel_ms = Vec::with_capacity(repeats - 1);
    let mut total_ms = Vec::with_capacity(repeats - 1);
    for iter in 0..repeats {
        let start = Instant::now();
        let report = estimate_sensitivity(p, x, sens_cfg)?;
        let mid = Instant::now();
        let selection = select_tokens(p, x, &report, sel_cfg)?;
        let end = Instant::now();
        std::hint::black_box(&selection);
        if iter == 0 {
            continue;
        }
        sens_ms.push((mid - start).as_secs_f64() * 1e3);
        sel_ms.push((end - mid).as_secs_f64() * 1e3);
        total_ms.push((end - start).as_secs_f64() * 1e3);
    }
    Ok(TimingSummary {
        sensitivity: StageTiming::from_samples(sens_ms),
        selection: StageTiming::from_samples(sel_ms),
        total: StageTiming::from_samples(total_ms),
        repeats,
        timed_iterations: repeats - 1,
    })
}
