use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::minmax_normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMethod {
    /// Tied values share the mean of the ranks they span.
    #[default]
    AverageRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationConfig {
    /// Pairs whose min-max normalized reference value falls below this are
    /// dropped before ranking. 0 keeps everything.
    pub threshold: f64,
    pub tie_method: TieMethod,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        CorrelationConfig {
            threshold: 0.5,
            tie_method: TieMethod::AverageRank,
        }
    }
}

impl CorrelationConfig {
    pub fn unfiltered() -> Self {
        CorrelationConfig {
            threshold: 0.0,
            ..Self::default()
        }
    }
}

/// 1-based ranks with ties averaged.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let shared = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = shared;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation between a reference ranking `a` and a proxy
/// ranking `b`, after filtering on the normalized reference.
pub fn spearman(a: &[f64], b: &[f64], cfg: &CorrelationConfig) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "rank correlation of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !cfg.threshold.is_finite() {
        return Err(Error::contract("correlation threshold must be finite"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(
            "rank correlation input is not finite".into(),
        ));
    }
    let keep: Vec<usize> = if cfg.threshold > 0.0 && !a.is_empty() {
        let norm = minmax_normalize(a)?;
        (0..a.len()).filter(|&i| norm[i] >= cfg.threshold).collect()
    } else {
        (0..a.len()).collect()
    };
    if keep.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} pair(s) left after filtering at threshold {}; need at least 2",
            keep.len(),
            cfg.threshold
        )));
    }
    let fa: Vec<f64> = keep.iter().map(|&i| a[i]).collect();
    let fb: Vec<f64> = keep.iter().map(|&i| b[i]).collect();
    let TieMethod::AverageRank = cfg.tie_method;
    pearson(&average_ranks(&fa), &average_ranks(&fb)).ok_or_else(|| {
        Error::InsufficientData("one of the rankings is constant after filtering".into())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ALL: CorrelationConfig = CorrelationConfig {
        threshold: 0.0,
        tie_method: TieMethod::AverageRank,
    };

    #[test]
    fn reference_examples() {
        assert!((spearman(&[1., 2., 3.], &[1., 2., 3.], &ALL).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1., 2., 3.], &[3., 2., 1.], &ALL).unwrap() + 1.0).abs() < 1e-12);
        assert!(
            (spearman(&[1., 2., 3., 4.], &[1., 3., 2., 4.], &ALL).unwrap() - 0.8).abs() < 1e-12
        );
    }

    #[test]
    fn tied_ranks_are_averaged() {
        assert_eq!(
            average_ranks(&[10., 20., 10., 30.]),
            vec![1.5, 3.0, 1.5, 4.0]
        );
        assert_eq!(average_ranks(&[5., 5., 5.]), vec![2.0, 2.0, 2.0]);
        // Pearson on average ranks: a=[1,2,2,3] -> ranks [1,2.5,2.5,4]
        let rho = spearman(&[1., 2., 2., 3.], &[1., 2., 3., 4.], &ALL).unwrap();
        let expected = 4.5 / (4.5f64 * 5.0).sqrt();
        assert!((rho - expected).abs() < 1e-12);
    }

    #[test]
    fn threshold_filters_on_reference() {
        // normalized reference [0, 0.25, 0.5, 0.75, 1]: threshold 0.5 keeps the last three
        let a = [0., 1., 2., 3., 4.];
        let b = [9., -3., 1., 2., 3.];
        let rho = spearman(&a, &b, &CorrelationConfig::default()).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
        let unfiltered = spearman(&a, &b, &ALL).unwrap();
        assert!(unfiltered < 0.5);
    }

    #[test]
    fn insufficient_data_is_an_error() {
        let err =
            spearman(&[0., 0., 1.], &[1., 2., 3.], &CorrelationConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
        assert!(matches!(
            spearman(&[1.], &[1.], &ALL),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            spearman(&[1., 1.], &[1., 2.], &ALL),
            Err(Error::InsufficientData(_))
        ));
        assert!(spearman(&[1., 2.], &[1.], &ALL).is_err());
    }

    proptest! {
        #[test]
        fn invariant_under_increasing_transforms(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..40)
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let Ok(base) = spearman(&a, &b, &ALL) else { return Ok(()); };
            let ta: Vec<f64> = a.iter().map(|v| v.powi(3) + v).collect();
            let tb: Vec<f64> = b.iter().map(|v| (v / 2.0).exp()).collect();
            let t = spearman(&ta, &tb, &ALL).unwrap();
            prop_assert!((t - base).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&base));
        }
    }
}
