//! Sensitivity-aware diversity selection.
//!
//! Tokens are picked one at a time. Each step scores every remaining
//! candidate from its normalized sensitivity `Ŝ(i)` and its diversity
//! `Div(i, P) = 1 - max_{j∈P} cos(z_i, z_j)` (1 while `P` is empty), then
//! keeps the highest score, lowest index first on ties. The running
//! max-cosine per candidate is updated once per step, so a full selection
//! costs `O(N k d)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine_from_parts, cosine_similarity, dot, norm, TokenMatrix};
use crate::sensitivity::SensitivityReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// `Ŝ(i) · Div(i, P)`
    #[default]
    FusedMultiply,
    /// `Ŝ(i) + Div(i, P)`
    FusedSum,
    /// `Ŝ(i)`; equivalent to top-k.
    SensitivityOnly,
    /// `Div(i, P)`, starting from the token farthest from all others.
    DiversityOnly,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::FusedMultiply,
        Policy::FusedSum,
        Policy::SensitivityOnly,
        Policy::DiversityOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::FusedMultiply => "fused_multiply",
            Policy::FusedSum => "fused_sum",
            Policy::SensitivityOnly => "sensitivity_only",
            Policy::DiversityOnly => "diversity_only",
        }
    }

    fn score(self, sens: f64, div: f64) -> f64 {
        match self {
            Policy::FusedMultiply => sens * div,
            Policy::FusedSum => sens + div,
            Policy::SensitivityOnly => sens,
            Policy::DiversityOnly => div,
        }
    }

    fn uses_diversity(self) -> bool {
        self != Policy::SensitivityOnly
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::format(format!("unknown policy {s:?}")))
    }
}

/// Which embedding the diversity term compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversitySpace {
    /// Projector outputs `Z = M(X)`.
    #[default]
    Projected,
    /// Encoder outputs `X`.
    Raw,
}

impl FromStr for DiversitySpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "projected" => Ok(DiversitySpace::Projected),
            "raw" => Ok(DiversitySpace::Raw),
            other => Err(Error::format(format!("unknown diversity space {other:?}"))),
        }
    }
}

/// How a budget is spread over image patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PatchBudget {
    /// `budget_k` in total: `budget_k / n_patches` each, the remainder going
    /// one token apiece to the lowest-numbered patches.
    #[default]
    FixedTotal,
    /// The same quota in every patch; the total scales with the patch count.
    PerPatch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub budget_k: usize,
    pub policy: Policy,
    pub diversity_space: DiversitySpace,
    pub per_patch: bool,
    pub patch_budget: PatchBudget,
}

impl SelectionConfig {
    pub fn new(budget_k: usize) -> Self {
        SelectionConfig {
            budget_k,
            policy: Policy::default(),
            diversity_space: DiversitySpace::default(),
            per_patch: false,
            patch_budget: PatchBudget::default(),
        }
    }

    pub fn with_policy(mut self, policy: Policy) -> Self {
        self.policy = policy;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Selected token indices in the order they were picked.
    pub indices: Vec<usize>,
    /// Score of each token at the step it was picked.
    pub scores: Vec<f32>,
    pub policy: Policy,
    pub budget: usize,
}

impl SelectionResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("selection serializes")
    }

    /// One byte per token: 1 if kept, 0 otherwise.
    pub fn to_mask(&self, n_tokens: usize) -> Result<Vec<u8>> {
        let mut mask = vec![0u8; n_tokens];
        for &i in &self.indices {
            *mask.get_mut(i).ok_or_else(|| {
                Error::contract(format!("index {i} out of range for {n_tokens} tokens"))
            })? = 1;
        }
        Ok(mask)
    }
}

/// `1 - max_{j ∈ selected} cos(z_i, z_j)`, or 1 when nothing is selected.
pub fn diversity_score(features: &TokenMatrix, i: usize, selected: &[usize]) -> Result<f64> {
    let n = features.n_tokens();
    if i >= n {
        return Err(Error::contract(format!(
            "token {i} out of range for {n} tokens"
        )));
    }
    if selected.contains(&i) {
        return Err(Error::contract(format!("token {i} is already selected")));
    }
    let mut max_cos = f64::NEG_INFINITY;
    for &j in selected {
        if j >= n {
            return Err(Error::contract(format!("selected token {j} out of range")));
        }
        max_cos = max_cos.max(cosine_similarity(
            features.row_slice(i),
            features.row_slice(j),
        )?);
    }
    Ok(if selected.is_empty() {
        1.0
    } else {
        1.0 - max_cos
    })
}

fn check_inputs(features: &TokenMatrix, sens: &SensitivityReport, budget: usize) -> Result<()> {
    let n = features.n_tokens();
    if sens.len() != n {
        return Err(Error::contract(format!(
            "sensitivity report covers {} tokens, features have {n}",
            sens.len()
        )));
    }
    if budget == 0 {
        return Err(Error::contract("budget must be at least 1"));
    }
    if budget > n {
        return Err(Error::contract(format!(
            "budget {budget} exceeds the {n} available tokens"
        )));
    }
    Ok(())
}

/// Greedy selection of `cfg.budget_k` tokens from `features`.
pub fn select(
    features: &TokenMatrix,
    sens: &SensitivityReport,
    cfg: &SelectionConfig,
) -> Result<SelectionResult> {
    check_inputs(features, sens, cfg.budget_k)?;
    let normalized: Vec<f64> = sens.normalized.iter().map(|&v| f64::from(v)).collect();
    let (indices, scores) = greedy(features, &normalized, cfg.budget_k, cfg.policy);
    Ok(SelectionResult {
        indices,
        scores,
        policy: cfg.policy,
        budget: cfg.budget_k,
    })
}

/// Token count for each patch under `budget`.
pub fn patch_budgets(n_patches: usize, budget: PatchBudget, budget_k: usize) -> Vec<usize> {
    match budget {
        PatchBudget::FixedTotal => {
            let (base, rem) = (budget_k / n_patches, budget_k % n_patches);
            (0..n_patches)
                .map(|p| base + usize::from(p < rem))
                .collect()
        }
        PatchBudget::PerPatch(q) => vec![q; n_patches],
    }
}

/// Runs [`select`] independently inside each patch and concatenates the
/// results in patch order. Sensitivities keep their global normalization.
pub fn select_per_patch(
    features: &TokenMatrix,
    sens: &SensitivityReport,
    cfg: &SelectionConfig,
) -> Result<SelectionResult> {
    let ids = features
        .patch_ids()
        .ok_or_else(|| Error::contract("per-patch selection needs patch ids"))?;
    let n_patches = features.n_patches();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_patches];
    for (t, &p) in ids.iter().enumerate() {
        members[p as usize].push(t);
    }
    let budgets = patch_budgets(n_patches, cfg.patch_budget, cfg.budget_k);
    let total: usize = budgets.iter().sum();
    check_inputs(features, sens, total)?;
    for (p, (tokens, &b)) in members.iter().zip(&budgets).enumerate() {
        if tokens.len() < b {
            return Err(Error::contract(format!(
                "patch {p} has {} tokens but its budget is {b}",
                tokens.len()
            )));
        }
    }

    let mut indices = Vec::with_capacity(total);
    let mut scores = Vec::with_capacity(total);
    for (tokens, &b) in members.iter().zip(&budgets) {
        if b == 0 {
            continue;
        }
        let sub = features.select_rows(tokens)?;
        let normalized: Vec<f64> = tokens
            .iter()
            .map(|&t| f64::from(sens.normalized[t]))
            .collect();
        let (local, local_scores) = greedy(&sub, &normalized, b, cfg.policy);
        indices.extend(local.into_iter().map(|l| tokens[l]));
        scores.extend(local_scores);
    }
    Ok(SelectionResult {
        indices,
        scores,
        policy: cfg.policy,
        budget: total,
    })
}

/// Index maximizing the minimum cosine distance to every other token.
fn farthest_from_all(features: &TokenMatrix, norms: &[f64]) -> usize {
    let n = features.n_tokens();
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..n {
        let mut nearest = f64::INFINITY;
        for j in (0..n).filter(|&j| j != i) {
            let c = cosine_from_parts(
                dot(features.row_slice(i), features.row_slice(j)),
                norms[i],
                norms[j],
            );
            nearest = nearest.min(1.0 - c);
        }
        if nearest > best.1 {
            best = (i, nearest);
        }
    }
    best.0
}

fn greedy(
    features: &TokenMatrix,
    normalized: &[f64],
    budget: usize,
    policy: Policy,
) -> (Vec<usize>, Vec<f32>) {
    let n = features.n_tokens();
    let norms: Vec<f64> = (0..n).map(|i| norm(features.row_slice(i))).collect();
    let mut max_cos = vec![f64::NEG_INFINITY; n];
    let mut taken = vec![false; n];
    let mut indices = Vec::with_capacity(budget);
    let mut scores = Vec::with_capacity(budget);

    for step in 0..budget {
        let (pick, score) = if step == 0 && policy == Policy::DiversityOnly {
            (farthest_from_all(features, &norms), 1.0)
        } else {
            let mut best: Option<(usize, f64)> = None;
            for i in (0..n).filter(|&i| !taken[i]) {
                let div = if step == 0 { 1.0 } else { 1.0 - max_cos[i] };
                let s = policy.score(normalized[i], div);
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
            best.expect("budget never exceeds token count")
        };
        taken[pick] = true;
        indices.push(pick);
        scores.push(score as f32);

        if policy.uses_diversity() && step + 1 < budget {
            let chosen = features.row_slice(pick);
            for i in (0..n).filter(|&i| !taken[i]) {
                let c =
                    cosine_from_parts(dot(features.row_slice(i), chosen), norms[i], norms[pick]);
                if c > max_cos[i] {
                    max_cos[i] = c;
                }
            }
        }
    }
    (indices, scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensitivity::SensitivityConfig;
    use crate::testutil::random_tokens;

    fn report(normalized: &[f32]) -> SensitivityReport {
        SensitivityReport {
            raw: normalized.to_vec(),
            normalized: normalized.to_vec(),
            config: SensitivityConfig::default(),
        }
    }

    fn tokens(rows: &[[f32; 2]]) -> TokenMatrix {
        TokenMatrix::from_rows(rows.len(), 2, rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn diversity_examples() {
        let z = tokens(&[[1., 0.], [0., 1.], [1., 0.], [-1., 0.]]);
        assert_eq!(diversity_score(&z, 0, &[]).unwrap(), 1.0);
        assert_eq!(diversity_score(&z, 2, &[0]).unwrap(), 0.0);
        assert_eq!(diversity_score(&z, 1, &[0, 3]).unwrap(), 1.0);
        assert_eq!(diversity_score(&z, 3, &[0]).unwrap(), 2.0);
        assert!(diversity_score(&z, 4, &[]).is_err());
        assert!(diversity_score(&z, 0, &[0]).is_err());
    }

    #[test]
    fn diversity_never_increases_as_selection_grows() {
        // starts from a non-empty set: Div(i, {}) = 1 while 1 - cos can reach 2
        let z = random_tokens(12, 5, 3);
        let mut selected = vec![1];
        let mut last = diversity_score(&z, 0, &selected).unwrap();
        for j in 2..12 {
            selected.push(j);
            let d = diversity_score(&z, 0, &selected).unwrap();
            assert!(d <= last);
            last = d;
        }
    }

    #[test]
    fn fused_multiply_worked_example() {
        let z = tokens(&[[1., 0.], [0., 1.], [1., 0.]]);
        let r = select(&z, &report(&[1.0, 0.6, 0.0]), &SelectionConfig::new(2)).unwrap();
        assert_eq!(r.indices, vec![0, 1]);
        assert_eq!(r.scores, vec![1.0, 0.6]);
        assert_eq!(r.budget, 2);
    }

    #[test]
    fn sensitivity_only_is_top_k() {
        let z = random_tokens(3, 4, 1);
        let cfg = SelectionConfig::new(2).with_policy(Policy::SensitivityOnly);
        let r = select(&z, &report(&[0.2, 0.9, 0.5]), &cfg).unwrap();
        assert_eq!(r.indices, vec![1, 2]);
    }

    #[test]
    fn diversity_only_starts_from_the_isolated_token() {
        // token 2 points away from the cluster formed by 0, 1 and 3
        let z = tokens(&[[1., 0.1], [1., 0.], [-0.2, 1.], [1., -0.1]]);
        let cfg = SelectionConfig::new(2).with_policy(Policy::DiversityOnly);
        let r = select(&z, &report(&[1.0, 1.0, 0.0, 1.0]), &cfg).unwrap();
        assert_eq!(r.indices[0], 2);
    }

    #[test]
    fn duplicates_are_not_reselected_and_zero_scores_fill_by_index() {
        let z = tokens(&[[1., 0.], [1., 0.], [2., 0.], [0., 1.]]);
        let r = select(&z, &report(&[1.0, 0.9, 0.8, 0.1]), &SelectionConfig::new(2)).unwrap();
        assert_eq!(r.indices, vec![0, 3]);
        // everything left is parallel to a kept token: scores are 0, lowest index wins
        let r = select(&z, &report(&[1.0, 0.9, 0.8, 0.1]), &SelectionConfig::new(4)).unwrap();
        assert_eq!(r.indices, vec![0, 3, 1, 2]);
        assert_eq!(&r.scores[2..], &[0.0, 0.0]);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let z = tokens(&[[1., 0.], [0., 1.], [1., 1.]]);
        let r = select(&z, &report(&[0.5, 0.5, 0.5]), &SelectionConfig::new(1)).unwrap();
        assert_eq!(r.indices, vec![0]);
    }

    #[test]
    fn budget_errors() {
        let z = random_tokens(4, 3, 0);
        let s = report(&[0.1, 0.2, 0.3, 0.4]);
        let err = select(&z, &s, &SelectionConfig::new(5)).unwrap_err();
        assert!(matches!(err, Error::Contract(ref m) if m.contains("budget")));
        assert!(select(&z, &s, &SelectionConfig::new(0)).is_err());
        assert!(select(&z, &report(&[0.1, 0.2]), &SelectionConfig::new(1)).is_err());
        let all = select(&z, &s, &SelectionConfig::new(4)).unwrap();
        let mut sorted = all.indices.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn patch_budget_split() {
        assert_eq!(patch_budgets(5, PatchBudget::FixedTotal, 160), vec![32; 5]);
        assert_eq!(patch_budgets(4, PatchBudget::FixedTotal, 160), vec![40; 4]);
        assert_eq!(patch_budgets(3, PatchBudget::FixedTotal, 7), vec![3, 2, 2]);
        assert_eq!(
            patch_budgets(4, PatchBudget::PerPatch(32), 160),
            vec![32; 4]
        );
    }

    #[test]
    fn per_patch_selection_stays_inside_patches() {
        let ids: Vec<u32> = (0..30).map(|t| t / 10).collect();
        let z = random_tokens(30, 4, 5).with_patch_ids(ids.clone()).unwrap();
        let norm: Vec<f32> = (0..30).map(|t| (t as f32 * 0.37).sin().abs()).collect();
        let cfg = SelectionConfig {
            per_patch: true,
            ..SelectionConfig::new(7)
        };
        let r = select_per_patch(&z, &report(&norm), &cfg).unwrap();
        assert_eq!(r.indices.len(), 7);
        let per: Vec<usize> = (0..3)
            .map(|p| r.indices.iter().filter(|&&i| ids[i] == p).count())
            .collect();
        assert_eq!(per, vec![3, 2, 2]);
        // concatenated in patch order, each block equal to a standalone run
        let block: Vec<usize> = (0..10).collect();
        let sub = z.select_rows(&block).unwrap();
        let local = select(&sub, &report(&norm[..10]), &SelectionConfig::new(3)).unwrap();
        assert_eq!(&r.indices[..3], local.indices.as_slice());
    }

    #[test]
    fn per_patch_errors_name_the_patch() {
        let ids = vec![0, 0, 0, 1, 2, 2, 2];
        let z = random_tokens(7, 3, 2).with_patch_ids(ids).unwrap();
        let cfg = SelectionConfig::new(6);
        let err = select_per_patch(&z, &report(&[0.5; 7]), &cfg).unwrap_err();
        assert!(err.to_string().contains("patch 1"), "{err}");
        let no_ids = random_tokens(7, 3, 2);
        assert!(select_per_patch(&no_ids, &report(&[0.5; 7]), &cfg).is_err());
    }

    #[test]
    fn mask_and_json() {
        let r = SelectionResult {
            indices: vec![3, 0],
            scores: vec![1.0, 0.5],
            policy: Policy::FusedSum,
            budget: 2,
        };
        assert_eq!(r.to_mask(5).unwrap(), vec![1, 0, 0, 1, 0]);
        assert!(r.to_mask(3).is_err());
        assert_eq!(
            r.to_json(),
            r#"{"indices":[3,0],"scores":[1.0,0.5],"policy":"fused_sum","budget":2}"#
        );
        assert_eq!(
            "diversity_only".parse::<Policy>().unwrap(),
            Policy::DiversityOnly
        );
        assert!("mean".parse::<Policy>().is_err());
    }
}
