use crate::error::Result;
use crate::numerics::TokenMatrix;
use crate::projector::Projector;
use crate::selection::{
    select, select_per_patch, DiversitySpace, SelectionConfig, SelectionResult,
};
use crate::sensitivity::{estimate_sensitivity, SensitivityConfig, SensitivityReport};

/// Features the diversity term is computed on.
pub fn diversity_features(
    p: &Projector,
    x: &TokenMatrix,
    space: DiversitySpace,
) -> Result<TokenMatrix> {
    match space {
        DiversitySpace::Projected => p.forward(x),
        DiversitySpace::Raw => Ok(x.clone()),
    }
}

/// Selection stage alone, given precomputed sensitivities.
pub fn select_tokens(
    p: &Projector,
    x: &TokenMatrix,
    report: &SensitivityReport,
    cfg: &SelectionConfig,
) -> Result<SelectionResult> {
    let features = diversity_features(p, x, cfg.diversity_space)?;
    if cfg.per_patch {
        select_per_patch(&features, report, cfg)
    } else {
        select(&features, report, cfg)
    }
}

/// Sensitivity estimation followed by selection.
pub fn prune(
    p: &Projector,
    x: &TokenMatrix,
    sens_cfg: &SensitivityConfig,
    sel_cfg: &SelectionConfig,
) -> Result<(SensitivityReport, SelectionResult)> {
    let report = estimate_sensitivity(p, x, sens_cfg)?;
    let selection = select_tokens(p, x, &report, sel_cfg)?;
    Ok((report, selection))
}

/// Combined report `{"selection": .., "sensitivity": ..}` as pretty JSON
/// with a trailing newline. This is the exact byte layout `prune` writes.
pub fn report_json(report: &SensitivityReport, selection: &SelectionResult) -> String {
    let doc = serde_json::json!({ "selection": selection, "sensitivity": report });
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}
