// SPDX-License-Identifier: MIT OR Apache-2.0

//! Report types and their JSON, text-table, and CSV renderings.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{MetricKind, ReflectiveMode};
use crate::error::{Error, Result};
use crate::lat::SelectionBasis;

pub const STD_FORMULA: &str = "sample standard deviation over folds (n - 1 denominator)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Id,
    Ood,
}

/// One accuracy column of an evaluation report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Column {
    Random,
    IntrinsicLengthNorm,
    ReflectiveRegular,
    ReflectiveTf,
    /// Layer chosen on validation data.
    LatVal,
    /// Test-optimal layer; an upper bound, never used for selection.
    LatBest,
}

impl Column {
    pub fn name(self) -> &'static str {
        match self {
            Column::Random => "RANDOM",
            Column::IntrinsicLengthNorm => "INTRINSIC_LENGTH_NORM",
            Column::ReflectiveRegular => "REFLECTIVE_REGULAR",
            Column::ReflectiveTf => "REFLECTIVE_TF",
            Column::LatVal => "LAT_VAL",
            Column::LatBest => "LAT_BEST",
        }
    }

    pub fn for_metric(metric: MetricKind) -> &'static [Column] {
        match metric {
            MetricKind::Random => &[Column::Random],
            MetricKind::IntrinsicLengthNorm => &[Column::IntrinsicLengthNorm],
            MetricKind::ReflectiveRegular => &[Column::ReflectiveRegular],
            MetricKind::ReflectiveTf => &[Column::ReflectiveTf],
            MetricKind::Lat => &[Column::LatVal, Column::LatBest],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub store_sha256: String,
    pub dataset_sha256: String,
    pub qa_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_store_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub column: Column,
    /// `None` where the fold failed for this column.
    pub per_fold: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerResult {
    pub index: usize,
    pub n_fit: usize,
    pub n_val: usize,
    pub status: FoldStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub lat_val_layer: Option<usize>,
    pub lat_best_layer: Option<usize>,
    pub lat_val: Option<f64>,
    pub lat_best: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub index: usize,
    pub n_fit: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub status: FoldStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub lat_val_layer: Option<usize>,
    pub lat_best_layer: Option<usize>,
    /// Validation accuracy per layer (ID protocol); `None` for unusable layers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub val_layer_accuracy: Vec<Option<f64>>,
    /// Standard deviation of LAT(Val) over inner folds (OOD protocol).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat_val_inner_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat_best_inner_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inner: Vec<InnerResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub protocol: Protocol,
    pub seed: u64,
    pub n_folds: usize,
    pub std_formula: String,
    pub reflective_mode: ReflectiveMode,
    pub selection_basis: SelectionBasis,
    pub provenance: Provenance,
    pub columns: Vec<ColumnSummary>,
    pub folds: Vec<FoldResult>,
}

impl EvaluationReport {
    pub fn column(&self, column: Column) -> Option<&ColumnSummary> {
        self.columns.iter().find(|c| c.column == column)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let protocol = match self.protocol {
            Protocol::Id => "in-distribution",
            Protocol::Ood => "out-of-distribution",
        };
        let _ = writeln!(out, "protocol: {protocol}   folds: {}   seed: {}", self.n_folds, self.seed);
        let _ = writeln!(out, "std: {}", self.std_formula);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<24} {:>8} {:>8} {:>9}", "metric", "mean", "std", "folds ok");
        for c in &self.columns {
            let ok = c.per_fold.iter().filter(|v| v.is_some()).count();
            let _ = writeln!(
                out,
                "{:<24} {:>8} {:>8} {:>5}/{:<3}",
                c.column.name(),
                fmt_opt(c.mean),
                fmt_opt(c.std),
                ok,
                c.per_fold.len()
            );
        }
        let failed: Vec<&FoldResult> = self.folds.iter().filter(|f| f.status == FoldStatus::Failed).collect();
        if !failed.is_empty() {
            let _ = writeln!(out);
            for f in failed {
                let _ = writeln!(out, "fold {} failed: {}", f.index, f.failure.as_deref().unwrap_or("?"));
            }
        }
        out
    }

    /// `metric,fold,accuracy` rows; empty accuracy for failed folds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,fold,accuracy\n");
        for c in &self.columns {
            for (i, v) in c.per_fold.iter().enumerate() {
                let _ = writeln!(out, "{},{},{}", c.column.name(), i, v.map(|x| x.to_string()).unwrap_or_default());
            }
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingCurve {
    pub metric: MetricKind,
    /// pass@rank-k for each requested k, in order.
    pub pass_at_rank: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub seed: u64,
    pub ks: Vec<usize>,
    pub n_instances: usize,
    pub min_candidates: usize,
    pub lat_layer: Option<usize>,
    /// Single low-temperature generation success rate, when ingested.
    pub pass_at_1_baseline: Option<f64>,
    /// Any-candidate-correct ceiling over the same candidate pools.
    pub pass_ceiling: f64,
    pub curves: Vec<RankingCurve>,
}

impl RankingReport {
    pub fn curve(&self, metric: MetricKind) -> Option<&RankingCurve> {
        self.curves.iter().find(|c| c.metric == metric)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "problems: {}   candidates per problem: >= {}   seed: {}",
            self.n_instances, self.min_candidates, self.seed
        );
        let _ = write!(out, "{:<24}", "metric");
        for k in &self.ks {
            let _ = write!(out, " {:>8}", format!("rank-{k}"));
        }
        let _ = writeln!(out);
        for c in &self.curves {
            let _ = write!(out, "{:<24}", c.metric.name());
            for v in &c.pass_at_rank {
                let _ = write!(out, " {v:>8.4}");
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(out, "{:<24} {:>8}", "pass@1 baseline", fmt_opt(self.pass_at_1_baseline));
        let _ = writeln!(out, "{:<24} {:>8.4}", "pass ceiling", self.pass_ceiling);
        out
    }

    /// `metric,k,pass_at_rank` rows plus baseline and ceiling rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,k,pass_at_rank\n");
        for c in &self.curves {
            for (k, v) in self.ks.iter().zip(&c.pass_at_rank) {
                let _ = writeln!(out, "{},{k},{v}", c.metric.name());
            }
        }
        if let Some(b) = self.pass_at_1_baseline {
            let _ = writeln!(out, "PASS_AT_1_BASELINE,1,{b}");
        }
        let _ = writeln!(out, "PASS_CEILING,{},{}", self.min_candidates, self.pass_ceiling);
        out
    }
}

/// Either report kind, as read back from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnyReport {
    Evaluation(EvaluationReport),
    Ranking(RankingReport),
}

impl AnyReport {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_text(&self) -> String {
        match self {
            AnyReport::Evaluation(r) => r.to_text(),
            AnyReport::Ranking(r) => r.to_text(),
        }
    }

    pub fn to_csv(&self) -> String {
        match self {
            AnyReport::Evaluation(r) => r.to_csv(),
            AnyReport::Ranking(r) => r.to_csv(),
        }
    }

    pub fn to_json(&self) -> String {
        match self {
            AnyReport::Evaluation(r) => r.to_json(),
            AnyReport::Ranking(r) => r.to_json(),
        }
    }
}
