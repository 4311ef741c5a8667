// SPDX-License-Identifier: MIT OR Apache-2.0

//! Evaluation harness: fold plans, MCQA accuracy, ranking, and reports.

mod folds;
mod metrics;
mod protocol;
mod report;

pub use folds::{make_inner_folds, make_outer_folds, round_half_up, FoldPlan, InnerFold, OuterFold};
pub use metrics::{
    mcqa_accuracy, mean_std, pass_at_rank_k, pass_ceiling, rank_candidate_ids, rank_candidates,
    RankingInstance,
};
pub use protocol::{
    fit_task_ids, payload_score, provenance, ranking_instances, run_id_protocol, run_ood_protocol,
    run_ranking, EvalInputs, MetricSettings, RankingSettings,
};
pub use report::{
    AnyReport, Column, ColumnSummary, EvaluationReport, FoldResult, FoldStatus, InnerResult,
    Protocol, Provenance, RankingCurve, RankingReport, STD_FORMULA,
};
