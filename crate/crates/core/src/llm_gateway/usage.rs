use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Transcript, TranscriptEntry, Usage};

/// USD per million tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub prompt_per_mtok: f64,
    pub completion_per_mtok: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    #[serde(default)]
    pub models: BTreeMap<String, ModelPrice>,
}

impl PriceTable {
    pub fn cost(&self, model_id: &str, usage: Usage) -> f64 {
        let price = self.models.get(model_id).copied().unwrap_or_default();
        (usage.prompt_tokens as f64 * price.prompt_per_mtok
            + usage.completion_tokens as f64 * price.completion_per_mtok)
            / 1_000_000.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageReport {
    pub run_id: String,
    pub calls: usize,
    pub per_stage: BTreeMap<String, Usage>,
    pub per_model: BTreeMap<String, Usage>,
    pub total: Usage,
    pub cost_usd: f64,
}

/// Sums the recorded usage of every answered call.
pub fn usage_report_from_entries(run_id: &str, entries: &[TranscriptEntry], prices: &PriceTable) -> UsageReport {
    let mut report = UsageReport { run_id: run_id.to_string(), ..Default::default() };
    for entry in entries {
        let Some(resp) = &entry.response else { continue };
        report.calls += 1;
        report.per_stage.entry(entry.stage.clone()).or_default().add(resp.usage);
        report.per_model.entry(entry.request.model_id.clone()).or_default().add(resp.usage);
        report.total.add(resp.usage);
    }
    report.cost_usd = report.per_model.iter().map(|(m, u)| prices.cost(m, *u)).sum();
    report
}

/// Usage of a run from its persisted `transcripts/` directory.
pub fn usage_report(run_dir: &Path, prices: &PriceTable) -> std::io::Result<UsageReport> {
    let entries = Transcript::load_dir(&run_dir.join("transcripts"))?;
    let run_id = run_dir.file_name().and_then(|s| s.to_str()).unwrap_or_default();
    Ok(usage_report_from_entries(run_id, &entries, prices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::{ChatMessage, ChatRequest, ChatResponse};

    fn answered(t: &Transcript, stage: &str, model: &str, p: u64, c: u64) {
        let req = ChatRequest::new(model, vec![ChatMessage::user(stage)]);
        let resp = ChatResponse {
            text: String::new(),
            structured: None,
            usage: Usage { prompt_tokens: p, completion_tokens: c },
        };
        t.record(stage, &req, &Ok(resp));
    }

    #[test]
    fn totals_are_exact_sums() {
        let t = Transcript::in_memory("r");
        answered(&t, "a", "m", 100, 50);
        answered(&t, "b", "m", 200, 25);
        let r = usage_report_from_entries("r", &t.entries(), &PriceTable::default());
        assert_eq!(r.total, Usage { prompt_tokens: 300, completion_tokens: 75 });
        assert_eq!(r.calls, 2);
    }

    #[test]
    fn empty_run_is_zero() {
        let r = usage_report_from_entries("r", &[], &PriceTable::default());
        assert_eq!(r.total, Usage::default());
        assert_eq!(r.cost_usd, 0.0);
    }

    #[test]
    fn cost_is_dot_product_with_prices() {
        let t = Transcript::in_memory("r");
        answered(&t, "a", "big", 1_000, 200);
        answered(&t, "b", "big", 3_000, 800);
        answered(&t, "c", "small", 10_000, 0);
        let mut prices = PriceTable::default();
        prices.models.insert("big".into(), ModelPrice { prompt_per_mtok: 2.0, completion_per_mtok: 8.0 });
        prices.models.insert("small".into(), ModelPrice { prompt_per_mtok: 0.5, completion_per_mtok: 1.0 });
        let r = usage_report_from_entries("r", &t.entries(), &prices);
        // big: 4000 * 2 + 1000 * 8 = 16000; small: 10000 * 0.5 = 5000; per million tokens.
        let expected = (16_000.0 + 5_000.0) / 1e6;
        assert!((r.cost_usd - expected).abs() < 1e-15);
        assert_eq!(r.per_stage.len(), 3);
    }
}
