// SPDX-License-Identifier: MIT OR Apache-2.0

//! Intrinsic, reflective, and random confidence metrics.
//!
//! All inputs come from payloads captured at extraction time; nothing here
//! calls a model.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datamodel::N_LEVELS;
use crate::error::{Error, Result};
use crate::linalg::argmax_first;
use crate::scalar::Real;
use crate::seed::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MetricKind {
    IntrinsicLengthNorm,
    ReflectiveRegular,
    ReflectiveTf,
    Random,
    Lat,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::Random,
        MetricKind::IntrinsicLengthNorm,
        MetricKind::ReflectiveRegular,
        MetricKind::ReflectiveTf,
        MetricKind::Lat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::IntrinsicLengthNorm => "INTRINSIC_LENGTH_NORM",
            MetricKind::ReflectiveRegular => "REFLECTIVE_REGULAR",
            MetricKind::ReflectiveTf => "REFLECTIVE_TF",
            MetricKind::Random => "RANDOM",
            MetricKind::Lat => "LAT",
        }
    }
}

/// How the seven level probabilities become one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectiveMode {
    /// Value of the most probable level times its joint probability.
    #[default]
    ArgmaxWeighted,
    /// Probability-weighted sum over all levels.
    Expectation,
}

/// Numeric value of each verbalized level, "Very low" → "Very high".
pub fn level_values<T: Real>() -> [T; N_LEVELS] {
    std::array::from_fn(|j| T::lit(j as f64 - 3.0) / T::lit(3.0))
}

/// Mean token log-probability.
pub fn length_normalized_loglik<T: Real>(token_logprobs: &[T]) -> Result<T> {
    if token_logprobs.is_empty() {
        return Err(Error::EmptySequence);
    }
    if let Some(x) = token_logprobs.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("token logprob {x}")));
    }
    if let Some(x) = token_logprobs.iter().find(|&&x| x > T::zero()) {
        return Err(Error::OutOfRange(format!("token logprob {x} > 0")));
    }
    let sum: T = token_logprobs.iter().copied().sum();
    Ok(sum / T::lit(token_logprobs.len() as f64))
}

pub fn reflective_regular<T: Real>(level_joint_probs: &[T], mode: ReflectiveMode) -> Result<T> {
    if level_joint_probs.len() != N_LEVELS {
        return Err(Error::BadShape(format!(
            "expected {N_LEVELS} level probabilities, got {}",
            level_joint_probs.len()
        )));
    }
    if let Some(p) = level_joint_probs
        .iter()
        .find(|p| !p.is_finite() || **p < T::zero() || **p > T::one())
    {
        return Err(Error::OutOfRange(format!("level probability {p}")));
    }
    let v = level_values::<T>();
    Ok(match mode {
        ReflectiveMode::ArgmaxWeighted => {
            let j = argmax_first(level_joint_probs);
            v[j] * level_joint_probs[j]
        }
        ReflectiveMode::Expectation => v.iter().zip(level_joint_probs).map(|(&v, &p)| v * p).sum(),
    })
}

pub fn reflective_tf<T: Real>(p_true: T) -> Result<T> {
    if !(p_true >= T::zero() && p_true <= T::one()) {
        return Err(Error::OutOfRange(format!("p_true {p_true}")));
    }
    Ok(p_true)
}

/// Uniform index in `[0, n)`, a pure function of `(seed, counter)`.
pub fn random_select(n_candidates: usize, seed: u64, counter: u64) -> usize {
    if n_candidates <= 1 {
        return 0;
    }
    rng_from(seed, &[counter]).random_range(0..n_candidates)
}
