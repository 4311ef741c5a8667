// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fold plans for the in-distribution and nested out-of-distribution protocols.
//!
//! Split sizes use round-half-up on `fraction · count`; the test split takes
//! whatever remains. Each fold takes contiguous cyclic windows of one seeded
//! permutation, with window starts spread evenly across the permutation.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from;

const OUTER_STREAM: u64 = 0x0F01;
const INNER_STREAM: u64 = 0x0F02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OuterFold {
    pub fit_task_ids: Vec<String>,
    pub val_task_ids: Vec<String>,
    pub test_task_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerFold {
    pub fit_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub outer_folds: Vec<OuterFold>,
    /// One inner-fold list per outer fold (OOD protocol only).
    pub inner_folds: Option<Vec<Vec<InnerFold>>>,
    pub seed: u64,
}

pub fn round_half_up(fraction: f64, count: usize) -> usize {
    // The epsilon guards against products like 0.1 · 45 landing just below .5.
    (fraction * count as f64 + 0.5 + 1e-9).floor() as usize
}

fn check_ids(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::BadConfig(format!("duplicate id {id} in fold universe")));
        }
    }
    Ok(())
}

fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || fractions.iter().sum::<f64>() > 1.0 + 1e-9 {
        return Err(Error::BadConfig(format!("invalid split fractions {fractions:?}")));
    }
    Ok(())
}

fn window(perm: &[String], start: usize, len: usize) -> Vec<String> {
    (0..len).map(|k| perm[(start + k) % perm.len()].clone()).collect()
}

/// Outer folds: `fractions = (fit, val, test)`; test receives the remainder.
pub fn make_outer_folds(task_ids: &[String], n_folds: usize, fractions: (f64, f64, f64), seed: u64) -> Result<FoldPlan> {
    check_ids(task_ids)?;
    check_fractions(&[fractions.0, fractions.1, fractions.2])?;
    if n_folds == 0 {
        return Err(Error::BadConfig("n_folds must be positive".into()));
    }
    let t = task_ids.len();
    let n_fit = round_half_up(fractions.0, t);
    let n_val = round_half_up(fractions.1, t);
    if n_fit < 2 || n_val < 2 || n_fit + n_val >= t {
        return Err(Error::TooFewTasks(format!(
            "{t} tasks give fit={n_fit} val={n_val}; need fit, val >= 2 and a non-empty test split"
        )));
    }
    let mut perm = task_ids.to_vec();
    perm.shuffle(&mut rng_from(seed, &[OUTER_STREAM]));
    let outer_folds = (0..n_folds)
        .map(|i| {
            let start = i * t / n_folds;
            OuterFold {
                fit_task_ids: window(&perm, start, n_fit),
                val_task_ids: window(&perm, start + n_fit, n_val),
                test_task_ids: window(&perm, start + n_fit + n_val, t - n_fit - n_val),
            }
        })
        .collect();
    Ok(FoldPlan {
        outer_folds,
        inner_folds: None,
        seed,
    })
}

/// Inner folds over external stimuli: `fractions = (fit, val)`.
pub fn make_inner_folds(stimulus_ids: &[String], n_folds: usize, fractions: (f64, f64), seed: u64) -> Result<Vec<InnerFold>> {
    check_ids(stimulus_ids)?;
    check_fractions(&[fractions.0, fractions.1])?;
    if n_folds == 0 {
        return Err(Error::BadConfig("n_folds must be positive".into()));
    }
    let n = stimulus_ids.len();
    if n < 8 {
        return Err(Error::TooFewStimuli(format!("{n} stimuli, at least 8 required")));
    }
    let n_fit = round_half_up(fractions.0, n);
    let n_val = round_half_up(fractions.1, n);
    if n_fit < 2 || n_val < 2 || n_fit + n_val > n {
        return Err(Error::TooFewStimuli(format!("{n} stimuli give fit={n_fit} val={n_val}")));
    }
    let mut perm = stimulus_ids.to_vec();
    perm.shuffle(&mut rng_from(seed, &[INNER_STREAM]));
    Ok((0..n_folds)
        .map(|i| {
            let start = i * n / n_folds;
            InnerFold {
                fit_ids: window(&perm, start, n_fit),
                val_ids: window(&perm, start + n_fit, n_val),
            }
        })
        .collect())
}

impl FoldPlan {
    /// Adds one inner-fold list per outer fold, each with its own derived seed.
    pub fn with_inner_folds(mut self, stimulus_ids: &[String], n_folds: usize, fractions: (f64, f64)) -> Result<Self> {
        let inner = (0..self.outer_folds.len())
            .map(|i| {
                let seed = crate::seed::derive_seed(self.seed, &[INNER_STREAM, i as u64]);
                make_inner_folds(stimulus_ids, n_folds, fractions, seed)
            })
            .collect::<Result<_>>()?;
        self.inner_folds = Some(inner);
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i:04}")).collect()
    }

    fn disjoint(f: &OuterFold) -> bool {
        let mut all: Vec<&String> = f.fit_task_ids.iter().chain(&f.val_task_ids).chain(&f.test_task_ids).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        all.len() == n
    }

    #[test]
    fn humaneval_and_bigcodebench_sizes() {
        // test is the remainder: 457 - 46 - 46 = 365
        for (t, fit, test) in [(151, 15, 121), (457, 46, 365)] {
            let plan = make_outer_folds(&ids(t), 10, (0.1, 0.1, 0.8), 3).unwrap();
            assert_eq!(plan.outer_folds.len(), 10);
            for f in &plan.outer_folds {
                assert_eq!(f.fit_task_ids.len(), fit);
                assert_eq!(f.val_task_ids.len(), fit);
                assert_eq!(f.test_task_ids.len(), test);
                assert!(disjoint(f));
            }
        }
    }

    #[test]
    fn too_few_tasks() {
        assert!(matches!(
            make_outer_folds(&ids(10), 10, (0.1, 0.1, 0.8), 0),
            Err(Error::TooFewTasks(_))
        ));
    }

    #[test]
    fn inner_sizes() {
        for (n, k) in [(97, 24), (20, 5)] {
            let folds = make_inner_folds(&ids(n), 4, (0.25, 0.25), 1).unwrap();
            assert_eq!(folds.len(), 4);
            for f in &folds {
                assert_eq!(f.fit_ids.len(), k);
                assert_eq!(f.val_ids.len(), k);
                assert!(f.fit_ids.iter().all(|x| !f.val_ids.contains(x)));
            }
        }
        assert!(matches!(
            make_inner_folds(&ids(4), 4, (0.25, 0.25), 1),
            Err(Error::TooFewStimuli(_))
        ));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = make_outer_folds(&ids(60), 10, (0.1, 0.1, 0.8), 5).unwrap();
        assert_eq!(a, make_outer_folds(&ids(60), 10, (0.1, 0.1, 0.8), 5).unwrap());
        assert_ne!(a, make_outer_folds(&ids(60), 10, (0.1, 0.1, 0.8), 6).unwrap());
    }

    #[test]
    fn fit_windows_rotate() {
        let plan = make_outer_folds(&ids(100), 10, (0.1, 0.1, 0.8), 2).unwrap();
        let mut fit: Vec<&String> = plan.outer_folds.iter().flat_map(|f| &f.fit_task_ids).collect();
        fit.sort();
        fit.dedup();
        // With T divisible by the fold count, fit windows tile the universe.
        assert_eq!(fit.len(), 100);
    }
}
