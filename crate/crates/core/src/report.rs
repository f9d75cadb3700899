//! Machine-readable search reports.
//!
//! The report is a JSON document with a fixed field order, so two runs with
//! the same configuration and seed differ only in `wall_time_ms`.

use serde::{Deserialize, Serialize};

use crate::arch::{decode_cell, ArchError, MacroConfig, NetworkArch, OpSet};
use crate::memmodel::{memory_footprint, MemoryBudget};
use crate::search::{CandidateRecord, SearchMode, SearchReport};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDoc {
    pub cell_indices: Vec<u64>,
    #[serde(rename = "macro")]
    pub macro_config: MacroConfig,
}

impl ArchDoc {
    pub fn to_network(&self, opset: &OpSet) -> Result<NetworkArch, ArchError> {
        let cells = self
            .cell_indices
            .iter()
            .map(|&i| decode_cell(i, opset))
            .collect::<Result<Vec<_>, _>>()?;
        NetworkArch::new(cells, self.macro_config.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub scenario: String,
    pub dataset: String,
    pub opset: String,
    pub cells: usize,
    pub budget: Option<MemoryBudget>,
    pub best_arch: ArchDoc,
    /// `null` when the best candidate's kernel sum was singular.
    pub best_score: Option<f64>,
    pub n_param: u64,
    pub mem_bits: u64,
    pub evaluations_total: u64,
    pub evaluations_skipped: u64,
    pub seed: u64,
    pub wall_time_ms: u64,
    pub engine_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<SearchMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub removed: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_draws: Option<u64>,
}

impl ReportDoc {
    pub fn from_search(
        scenario: &str,
        dataset: &str,
        report: &SearchReport,
        budget: Option<MemoryBudget>,
        bits: u32,
        seed: u64,
    ) -> ReportDoc {
        let bits = budget.map_or(bits, |b| b.bit_precision);
        ReportDoc {
            scenario: scenario.to_string(),
            dataset: dataset.to_string(),
            opset: report.opset.name().to_string(),
            cells: report.best_arch.num_cells(),
            budget,
            best_arch: ArchDoc {
                cell_indices: report.per_cell_best_indices.clone(),
                macro_config: report.best_arch.config().clone(),
            },
            best_score: report.best_score.as_option(),
            n_param: report.n_param,
            mem_bits: memory_footprint(report.n_param, bits).bits,
            evaluations_total: report.evaluations_total,
            evaluations_skipped: report.evaluations_skipped_by_budget,
            seed,
            wall_time_ms: report.wall_time.as_millis() as u64,
            engine_version: ENGINE_VERSION.to_string(),
            mode: Some(report.mode),
            removed: report.removed.map(|op| op.to_string()),
            duplicate_draws: (report.mode == SearchMode::Random).then_some(report.duplicate_draws),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<ReportDoc, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Copy with `wall_time_ms` zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> ReportDoc {
        ReportDoc {
            wall_time_ms: 0,
            ..self.clone()
        }
    }

    pub fn opset(&self) -> Result<OpSet, ArchError> {
        self.opset.parse()
    }

    /// Flat single-row CSV table (with header) for plotting scripts.
    pub fn to_table(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "scenario",
            "dataset",
            "opset",
            "cells",
            "budget",
            "cell_indices",
            "best_score",
            "n_param",
            "mem_bits",
            "evaluations_total",
            "evaluations_skipped",
            "seed",
            "wall_time_ms",
        ])?;
        let indices: Vec<String> = self
            .best_arch
            .cell_indices
            .iter()
            .map(|i| i.to_string())
            .collect();
        w.write_record([
            self.scenario.clone(),
            self.dataset.clone(),
            self.opset.clone(),
            self.cells.to_string(),
            self.budget
                .map_or(String::new(), |b| b.max_params.to_string()),
            indices.join(" "),
            self.best_score.map_or(String::new(), |s| s.to_string()),
            self.n_param.to_string(),
            self.mem_bits.to_string(),
            self.evaluations_total.to_string(),
            self.evaluations_skipped.to_string(),
            self.seed.to_string(),
            self.wall_time_ms.to_string(),
        ])?;
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// One JSON object per line.
pub fn candidate_log_lines(log: &[CandidateRecord]) -> String {
    let mut out = String::new();
    for rec in log {
        out.push_str(&serde_json::to_string(rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ReportDoc {
        ReportDoc {
            scenario: "2C3O_M".into(),
            dataset: "cifar100".into(),
            opset: "3O".into(),
            cells: 2,
            budget: Some(MemoryBudget::new(2_000_000, 32).unwrap()),
            best_arch: ArchDoc {
                cell_indices: vec![17, 700],
                macro_config: MacroConfig::default(),
            },
            best_score: Some(123.25),
            n_param: 1_500_000,
            mem_bits: 48_000_000,
            evaluations_total: 1400,
            evaluations_skipped: 58,
            seed: 42,
            wall_time_ms: 1234,
            engine_version: ENGINE_VERSION.into(),
            mode: Some(SearchMode::MemoryAware),
            removed: None,
            duplicate_draws: None,
        }
    }

    #[test]
    fn json_round_trip_and_fields() {
        let doc = sample();
        let text = doc.to_json();
        assert_eq!(ReportDoc::from_json(&text).unwrap(), doc);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in [
            "scenario",
            "dataset",
            "opset",
            "cells",
            "budget",
            "best_arch",
            "best_score",
            "n_param",
            "mem_bits",
            "evaluations_total",
            "evaluations_skipped",
            "seed",
            "wall_time_ms",
            "engine_version",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["best_arch"].get("cell_indices").is_some());
        assert!(v["best_arch"].get("macro").is_some());
    }

    #[test]
    fn singular_score_is_null() {
        let doc = ReportDoc {
            best_score: None,
            ..sample()
        };
        let text = doc.to_json();
        assert!(text.contains("\"best_score\": null"));
        assert_eq!(ReportDoc::from_json(&text).unwrap(), doc);
    }

    #[test]
    fn arch_doc_decodes() {
        let doc = sample();
        let net = doc.best_arch.to_network(&doc.opset().unwrap()).unwrap();
        assert_eq!(net.cell_indices(&OpSet::three()).unwrap(), vec![17, 700]);
    }

    #[test]
    fn table_has_header_and_row() {
        let t = sample().to_table().unwrap();
        let lines: Vec<_> = t.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("scenario,dataset"));
        assert!(lines[1].contains("17 700"));
    }
}
