//! Analytic FLOPs for projector passes and LLM prefill.
//!
//! Counts are multiply-accumulates scaled by `counts_mac_as` (1 or 2), in
//! exact integer arithmetic. Activations and normalizations are ignored.
//! Per decoder layer over `n` tokens:
//!
//! - attention projections (Q, K, V, O): `4 n d²`
//! - attention scores and weighted values: `2 n² d`
//! - feed-forward (up and down): `2 n d m_ffn`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsModel {
    pub llm_layers: u64,
    pub llm_hidden: u64,
    pub llm_ffn: u64,
    /// `(in, out)` per projector layer.
    pub proj_dims: Vec<(u64, u64)>,
    #[serde(rename = "mac_flops")]
    pub counts_mac_as: u64,
}

/// Prefill cost split by term; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PrefillFlops {
    pub projections: u128,
    pub attention: u128,
    pub ffn: u128,
    pub total: u128,
}

impl FlopsModel {
    /// 7B-class decoder (32 layers, hidden 4096, FFN 11008) behind a
    /// 1024 → 4096 → 4096 projector, counting 2 FLOPs per MAC.
    pub fn llm_7b() -> Self {
        FlopsModel {
            llm_layers: 32,
            llm_hidden: 4096,
            llm_ffn: 11008,
            proj_dims: vec![(1024, 4096), (4096, 4096)],
            counts_mac_as: 2,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: FlopsModel =
            serde_json::from_str(text).map_err(|e| Error::format(format!("FLOPs config: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.llm_layers == 0 || self.llm_hidden == 0 || self.llm_ffn == 0 {
            return Err(Error::format(
                "FLOPs config: LLM dimensions must be positive",
            ));
        }
        if self.proj_dims.is_empty() {
            return Err(Error::format("FLOPs config: proj_dims must not be empty"));
        }
        if self.proj_dims.iter().any(|&(i, o)| i == 0 || o == 0) {
            return Err(Error::format(
                "FLOPs config: projector dimensions must be positive",
            ));
        }
        if !matches!(self.counts_mac_as, 1 | 2) {
            return Err(Error::format(format!(
                "FLOPs config: mac_flops must be 1 or 2, got {}",
                self.counts_mac_as
            )));
        }
        Ok(())
    }

    fn mac(&self) -> u128 {
        u128::from(self.counts_mac_as)
    }

    /// FLOPs of one projector pass for one token.
    pub fn projector_pass_flops(&self) -> u128 {
        self.proj_dims
            .iter()
            .map(|&(i, o)| self.mac() * u128::from(i) * u128::from(o))
            .sum()
    }

    /// Cost of the `2 n m` projector passes of sensitivity estimation.
    pub fn sensitivity_overhead_flops(&self, n_tokens: u64, m: u64) -> u128 {
        2 * u128::from(n_tokens) * u128::from(m) * self.projector_pass_flops()
    }

    pub fn llm_prefill_breakdown(&self, n_tokens: u64) -> PrefillFlops {
        let (l, d, f, n) = (
            u128::from(self.llm_layers),
            u128::from(self.llm_hidden),
            u128::from(self.llm_ffn),
            u128::from(n_tokens),
        );
        let mac = self.mac();
        let projections = l * mac * 4 * n * d * d;
        let attention = l * mac * 2 * n * n * d;
        let ffn = l * mac * 2 * n * d * f;
        PrefillFlops {
            projections,
            attention,
            ffn,
            total: projections + attention + ffn,
        }
    }

    pub fn llm_prefill_flops(&self, n_tokens: u64) -> u128 {
        self.llm_prefill_breakdown(n_tokens).total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_proj(dims: &[(u64, u64)], mac: u64) -> FlopsModel {
        FlopsModel {
            proj_dims: dims.to_vec(),
            counts_mac_as: mac,
            ..FlopsModel::llm_7b()
        }
    }

    #[test]
    fn projector_pass_examples() {
        assert_eq!(
            with_proj(&[(1024, 4096), (4096, 4096)], 2).projector_pass_flops(),
            41_943_040
        );
        assert_eq!(with_proj(&[(2, 3)], 2).projector_pass_flops(), 12);
        let factorized = [(1024, 128), (128, 4096), (4096, 128), (128, 4096)];
        assert_eq!(with_proj(&factorized, 2).projector_pass_flops(), 3_407_872);
    }

    #[test]
    fn sensitivity_overhead_examples() {
        assert_eq!(with_proj(&[(2, 3)], 2).sensitivity_overhead_flops(1, 1), 24);
        let p = with_proj(&[(1024, 4096), (4096, 4096)], 2);
        assert_eq!(
            p.sensitivity_overhead_flops(500, 64),
            2 * 500 * 64 * 41_943_040
        );
        let factorized = with_proj(&[(1024, 128), (128, 4096), (4096, 128), (128, 4096)], 2);
        assert_eq!(
            factorized.sensitivity_overhead_flops(2880, 64),
            2 * 2880 * 64 * 3_407_872
        );
        assert_eq!(
            factorized.sensitivity_overhead_flops(2880, 64),
            1_256_277_934_080
        );
    }

    #[test]
    fn prefill_small_example() {
        let m = FlopsModel {
            llm_layers: 1,
            llm_hidden: 2,
            llm_ffn: 4,
            proj_dims: vec![(1, 1)],
            counts_mac_as: 1,
        };
        // 4·1·4 + 2·1·2 + 2·1·2·4
        assert_eq!(m.llm_prefill_flops(1), 36);
        let doubled = FlopsModel {
            counts_mac_as: 2,
            ..m
        };
        assert_eq!(doubled.llm_prefill_flops(1), 72);
    }

    #[test]
    fn linear_terms_double_exactly() {
        let m = FlopsModel::llm_7b();
        let a = m.llm_prefill_breakdown(700);
        let b = m.llm_prefill_breakdown(1400);
        assert_eq!(b.projections, 2 * a.projections);
        assert_eq!(b.ffn, 2 * a.ffn);
        assert_eq!(b.attention, 4 * a.attention);
    }

    #[test]
    fn prefill_is_strictly_increasing() {
        let m = FlopsModel::llm_7b();
        let mut last = 0;
        for n in 1..500 {
            let f = m.llm_prefill_flops(n);
            assert!(f > last);
            last = f;
        }
    }

    #[test]
    fn pruned_ratio_on_7b_config() {
        let m = FlopsModel::llm_7b();
        let n = 2880u64;
        let pruned = (0.222 * n as f64).round() as u64;
        let ratio = m.llm_prefill_flops(pruned) as f64 / m.llm_prefill_flops(n) as f64;
        assert!((0.19..=0.23).contains(&ratio), "{ratio}");
    }

    #[test]
    fn json_config() {
        let m = FlopsModel::from_json(
            r#"{"llm_layers": 32, "llm_hidden": 4096, "llm_ffn": 11008,
                "proj_dims": [[1024, 4096], [4096, 4096]], "mac_flops": 2}"#,
        )
        .unwrap();
        assert_eq!(m, FlopsModel::llm_7b());
        assert!(FlopsModel::from_json(r#"{"llm_layers": 32}"#).is_err());
        let bad_mac = r#"{"llm_layers": 1, "llm_hidden": 1, "llm_ffn": 1, "proj_dims": [[1, 1]], "mac_flops": 3}"#;
        assert!(matches!(
            FlopsModel::from_json(bad_mac),
            Err(Error::Format(_))
        ));
        let no_proj =
            r#"{"llm_layers": 1, "llm_hidden": 1, "llm_ffn": 1, "proj_dims": [], "mac_flops": 1}"#;
        assert!(FlopsModel::from_json(no_proj).is_err());
    }
}
