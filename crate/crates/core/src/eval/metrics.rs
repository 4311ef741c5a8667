// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::datamodel::QaInstance;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Fraction of instances whose selection is the correct candidate.
pub fn mcqa_accuracy(selections: &[usize], instances: &[QaInstance]) -> Result<f64> {
    if selections.len() != instances.len() {
        return Err(Error::LengthMismatch(format!(
            "{} selections for {} instances",
            selections.len(),
            instances.len()
        )));
    }
    if instances.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let hits = selections
        .iter()
        .zip(instances)
        .filter(|(&s, q)| s == q.correct_index)
        .count();
    Ok(hits as f64 / instances.len() as f64)
}

/// Candidate indices by descending score; ties keep input order.
pub fn rank_candidates<T: Real>(scores: &[T]) -> Result<Vec<usize>> {
    if let Some(x) = scores.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("score {x}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    Ok(order)
}

/// [`rank_candidates`] applied to ids.
pub fn rank_candidate_ids<T: Real>(scores: &[T], candidate_ids: &[String]) -> Result<Vec<String>> {
    if scores.len() != candidate_ids.len() {
        return Err(Error::LengthMismatch(format!(
            "{} scores for {} candidates",
            scores.len(),
            candidate_ids.len()
        )));
    }
    Ok(rank_candidates(scores)?
        .into_iter()
        .map(|i| candidate_ids[i].clone())
        .collect())
}

/// A task's generated candidates and their test outcomes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingInstance {
    pub task_id: String,
    pub candidate_ids: Vec<String>,
    pub labels: Vec<bool>,
}

/// Fraction of problems with a correct candidate among the first `k` ranks.
///
/// Each element of `ranked_labels` is one problem's correctness labels in
/// ranked order.
pub fn pass_at_rank_k(ranked_labels: &[Vec<bool>], k: usize) -> Result<f64> {
    if ranked_labels.is_empty() {
        return Err(Error::BadK("no problems to evaluate".into()));
    }
    let min_n = ranked_labels.iter().map(Vec::len).min().unwrap_or(0);
    if k == 0 || k > min_n {
        return Err(Error::BadK(format!("k={k} outside 1..={min_n}")));
    }
    let hits = ranked_labels.iter().filter(|l| l[..k].iter().any(|&c| c)).count();
    Ok(hits as f64 / ranked_labels.len() as f64)
}

/// Fraction of problems with at least one correct candidate.
pub fn pass_ceiling(labels: &[Vec<bool>]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|l| l.iter().any(|&c| c)).count() as f64 / labels.len() as f64
}

/// Mean and sample (n − 1) standard deviation; the deviation of one value is 0.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}
