//! Token accounting and dollar-cost recomputation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GatewayError;

/// Per-million-token prices in USD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input_per_million: f64,
    pub output_per_million: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PricingTable {
    pub prices: BTreeMap<String, ModelPrice>,
}

impl PricingTable {
    /// Prices implied by the published run-cost tables (USD per million
    /// tokens), back-solved from total spend over recorded token counts.
    pub fn implied_defaults() -> Self {
        let mut prices = BTreeMap::new();
        prices.insert(
            "grok-4-fast".to_string(),
            ModelPrice { input_per_million: 0.20, output_per_million: 0.50 },
        );
        prices.insert(
            "gemini-2.5-flash".to_string(),
            ModelPrice { input_per_million: 0.30, output_per_million: 2.50 },
        );
        prices.insert(
            "qwen3-225b".to_string(),
            ModelPrice { input_per_million: 0.18, output_per_million: 0.54 },
        );
        prices.insert(
            "qwen3-80b".to_string(),
            ModelPrice { input_per_million: 0.09, output_per_million: 1.09 },
        );
        PricingTable { prices }
    }

    pub fn price(&self, model: &str) -> Result<ModelPrice, GatewayError> {
        self.prices
            .get(model)
            .copied()
            .ok_or_else(|| GatewayError::UnknownModel(model.to_string()))
    }
}

/// Token totals attributed to one model within one accounting row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageByModel {
    pub model: String,
    /// Row label, e.g. an experiment arm or pipeline stage.
    pub label: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
    /// Officials covered by this row; used for per-official averages.
    pub officials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub model: String,
    pub label: String,
    pub input_cost: f64,
    pub output_cost: f64,
    pub total_cost: f64,
    /// `total_cost / officials`; zero officials yields `None`.
    pub per_official: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub grand_total: f64,
}

/// Recomputes dollar costs from raw token counts; rows keep input order.
pub fn compute_cost(
    usage: &[UsageByModel],
    pricing: &PricingTable,
) -> Result<CostReport, GatewayError> {
    let mut rows = Vec::with_capacity(usage.len());
    let mut grand_total = 0.0;
    for u in usage {
        let price = pricing.price(&u.model)?;
        let input_cost = u.tokens_in as f64 / 1e6 * price.input_per_million;
        let output_cost = u.tokens_out as f64 / 1e6 * price.output_per_million;
        let total_cost = input_cost + output_cost;
        grand_total += total_cost;
        rows.push(CostRow {
            model: u.model.clone(),
            label: u.label.clone(),
            input_cost,
            output_cost,
            total_cost,
            per_official: (u.officials > 0).then(|| total_cost / u.officials as f64),
        });
    }
    Ok(CostReport { rows, grand_total })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grok_agent_wiki_row_recomputes() {
        let usage = [UsageByModel {
            model: "grok-4-fast".into(),
            label: "agent-wiki".into(),
            tokens_in: 271_700_000,
            tokens_out: 13_100_000,
            officials: 398,
        }];
        let report = compute_cost(&usage, &PricingTable::implied_defaults()).unwrap();
        let row = &report.rows[0];
        assert!((row.input_cost - 54.34).abs() < 1e-9);
        assert!((row.output_cost - 6.55).abs() < 1e-9);
        assert!((row.total_cost - 60.89).abs() < 1e-9);
        assert!((row.per_official.unwrap() - 0.153).abs() < 0.001);
    }

    #[test]
    fn unknown_model_is_an_error() {
        let usage = [UsageByModel {
            model: "mystery".into(),
            label: "x".into(),
            tokens_in: 1,
            tokens_out: 1,
            officials: 1,
        }];
        assert_eq!(
            compute_cost(&usage, &PricingTable::implied_defaults()),
            Err(GatewayError::UnknownModel("mystery".into()))
        );
    }

    #[test]
    fn costs_are_additive_across_rows() {
        let pricing = PricingTable::implied_defaults();
        let a = UsageByModel {
            model: "qwen3-80b".into(),
            label: "a".into(),
            tokens_in: 5_000_000,
            tokens_out: 500_000,
            officials: 10,
        };
        let b = UsageByModel {
            model: "qwen3-80b".into(),
            label: "b".into(),
            tokens_in: 7_000_000,
            tokens_out: 300_000,
            officials: 10,
        };
        let merged = UsageByModel {
            model: "qwen3-80b".into(),
            label: "ab".into(),
            tokens_in: 12_000_000,
            tokens_out: 800_000,
            officials: 20,
        };
        let split = compute_cost(&[a, b], &pricing).unwrap();
        let whole = compute_cost(&[merged], &pricing).unwrap();
        assert!((split.grand_total - whole.grand_total).abs() < 1e-9);
    }
}
