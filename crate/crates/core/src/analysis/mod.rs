//! Rank correlation, FLOPs accounting, policy overlap and timing.

mod flops;
mod spearman;
mod timing;

pub use flops::{FlopsModel, PrefillFlops};
pub use spearman::{average_ranks, spearman, CorrelationConfig, TieMethod};
pub use timing::{time_pipeline, StageTiming, TimingSummary};

use std::collections::HashSet;

use crate::selection::SelectionResult;

/// Jaccard index of the two selected index sets. Two empty selections are
/// identical and score 1.
pub fn selection_overlap(a: &SelectionResult, b: &SelectionResult) -> f64 {
    let sa: HashSet<usize> = a.indices.iter().copied().collect();
    let sb: HashSet<usize> = b.indices.iter().copied().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}
