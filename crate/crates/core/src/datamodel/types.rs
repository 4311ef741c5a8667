// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Benchmark a task comes from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Benchmark {
    #[serde(rename = "HE")]
    HumanEval,
    #[serde(rename = "BCB")]
    BigCodeBench,
    #[serde(rename = "MBPP_PLUS")]
    MbppPlus,
    #[serde(rename = "SYNTHETIC")]
    Synthetic,
    #[serde(rename = "OTHER")]
    Other(String),
}

/// A programming task: natural-language description plus provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub description: String,
    pub benchmark: Benchmark,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Correct,
    Incorrect,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSolution {
    pub task_id: String,
    pub candidate_id: String,
    pub code: String,
    pub label: Label,
    pub origin: String,
}

/// Which prompt produced an activation record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PromptKind {
    FitCorrect,
    FitIncorrect,
    Eval,
}

impl PromptKind {
    pub fn is_fit(self) -> bool {
        !matches!(self, PromptKind::Eval)
    }

    /// Label a fit record carries implicitly.
    pub fn fit_label(self) -> Option<Label> {
        match self {
            PromptKind::FitCorrect => Some(Label::Correct),
            PromptKind::FitIncorrect => Some(Label::Incorrect),
            PromptKind::Eval => None,
        }
    }

    pub fn for_label(label: Label) -> Option<Self> {
        match label {
            Label::Correct => Some(PromptKind::FitCorrect),
            Label::Incorrect => Some(PromptKind::FitIncorrect),
            Label::Unknown => None,
        }
    }
}

/// Last-token hidden states, one row per layer, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    n_layers: usize,
    hidden_dim: usize,
    data: Vec<f32>,
}

impl HiddenStates {
    pub fn new(n_layers: usize, hidden_dim: usize, data: Vec<f32>) -> Result<Self> {
        if n_layers == 0 || hidden_dim == 0 {
            return Err(Error::DimensionMismatch(format!(
                "n_layers ({n_layers}) and hidden_dim ({hidden_dim}) must be positive"
            )));
        }
        if data.len() != n_layers * hidden_dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for {n_layers}x{hidden_dim}, got {}",
                n_layers * hidden_dim,
                data.len()
            )));
        }
        Ok(Self {
            n_layers,
            hidden_dim,
            data,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f32>>) -> Result<Self> {
        let n_layers = rows.len();
        let hidden_dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != hidden_dim) {
            return Err(Error::DimensionMismatch("ragged layer rows".into()));
        }
        Self::new(n_layers, hidden_dim, rows.into_iter().flatten().collect())
    }

    pub fn zeros(n_layers: usize, hidden_dim: usize) -> Self {
        Self {
            n_layers,
            hidden_dim,
            data: vec![0.0; n_layers * hidden_dim],
        }
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn layer(&self, l: usize) -> &[f32] {
        &self.data[l * self.hidden_dim..(l + 1) * self.hidden_dim]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut [f32] {
        &mut self.data[l * self.hidden_dim..(l + 1) * self.hidden_dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub const N_LEVELS: usize = 7;

/// Verbalized confidence readouts captured at extraction time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfidencePayload {
    /// Joint probability of each level's token sequence, "Very low" first.
    pub level_joint_probs: Option<[f32; N_LEVELS]>,
    pub p_true: Option<f32>,
}

impl ConfidencePayload {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.level_joint_probs.is_none() && self.p_true.is_none() {
            return Err("confidence payload present but empty".into());
        }
        let in_unit = |p: f32| (0.0..=1.0).contains(&p);
        if let Some(levels) = &self.level_joint_probs {
            if !levels.iter().all(|&p| in_unit(p)) {
                return Err(format!("level probabilities outside [0,1]: {levels:?}"));
            }
        }
        if let Some(p) = self.p_true {
            if !in_unit(p) {
                return Err(format!("p_true outside [0,1]: {p}"));
            }
        }
        Ok(())
    }
}

/// One forward pass worth of captured data.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub record_id: String,
    pub task_id: String,
    pub candidate_id: String,
    pub prompt_kind: PromptKind,
    pub hidden: HiddenStates,
    /// Natural-log probabilities of the candidate-code tokens.
    pub token_logprobs: Option<Vec<f32>>,
    pub confidence: Option<ConfidencePayload>,
}

impl ActivationRecord {
    /// Checks the per-record invariants (shape-independent).
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidRecord {
            record_id: self.record_id.clone(),
            reason,
        };
        if self.record_id.is_empty() {
            return Err(fail("empty record_id".into()));
        }
        if self.task_id.is_empty() || self.candidate_id.is_empty() {
            return Err(fail("empty task_id or candidate_id".into()));
        }
        if !self.hidden.is_finite() {
            return Err(fail("hidden state contains non-finite values".into()));
        }
        if let Some(lp) = &self.token_logprobs {
            if let Some(bad) = lp.iter().find(|x| !x.is_finite() || **x > 0.0) {
                return Err(fail(format!("token logprob {bad} is not a finite value <= 0")));
            }
        }
        if let Some(c) = &self.confidence {
            c.validate().map_err(fail)?;
        }
        Ok(())
    }
}

/// A task's two fit stimuli, correct and incorrect.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedActivations {
    pub task_id: String,
    pub correct: HiddenStates,
    pub incorrect: HiddenStates,
}

/// One multiple-choice instance: a correct candidate among incorrect ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaInstance {
    pub task_id: String,
    pub candidates: Vec<String>,
    pub correct_index: usize,
}
