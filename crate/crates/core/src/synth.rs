// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic activations with a planted separating direction.
//!
//! Every coordinate of every layer is i.i.d. `N(0, noise_sigma^2)`. At the
//! planted layer a correct candidate additionally gets `+offset * m_t / 2 * v`
//! and an incorrect one `-offset * m_t / 2 * v`, where `v` is the planted unit
//! vector and `m_t ~ U[1 - offset_spread, 1 + offset_spread]` is drawn once
//! per task. With `offset_spread = 0` every fit difference has the same
//! component along `v`, which centering removes; the spread is what makes the
//! direction visible to the principal component.
//!
//! Each record draws from its own stream, so generation is parallel and
//! deterministic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    build_qa_instances, ActivationRecord, ActivationStore, Benchmark, CandidateEntry,
    ConfidencePayload, Dataset, HiddenStates, Label, PromptKind, QaDataset, TaskEntry, N_LEVELS,
};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from, unit_f64, Gaussian};

const VECTOR_STREAM: u64 = 0x5301;
const TASK_STREAM: u64 = 0x5302;
const RECORD_STREAM: u64 = 0x5303;
const PAYLOAD_STREAM: u64 = 0x5304;
const QA_STREAM: u64 = 0x5305;

fn default_candidates() -> usize {
    4
}

fn default_spread() -> f64 {
    1.0
}

fn default_sigma() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_tasks: usize,
    /// One correct candidate plus `n_candidates_per_task - 1` incorrect ones.
    #[serde(default = "default_candidates")]
    pub n_candidates_per_task: usize,
    pub planted_layer: usize,
    pub planted_vector_seed: u64,
    /// Class separation along the planted vector, in absolute units.
    pub offset: f64,
    #[serde(default = "default_spread")]
    pub offset_spread: f64,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    pub seed: u64,
    /// Task id prefix, so ID and OOD sources can coexist.
    #[serde(default = "default_prefix")]
    pub task_prefix: String,
}

fn default_prefix() -> String {
    "synth".into()
}

impl SynthConfig {
    /// A config with the optional knobs at their defaults.
    pub fn new(n_layers: usize, hidden_dim: usize, n_tasks: usize, planted_layer: usize, offset: f64, seed: u64) -> Self {
        Self {
            n_layers,
            hidden_dim,
            n_tasks,
            n_candidates_per_task: default_candidates(),
            planted_layer,
            planted_vector_seed: seed,
            offset,
            offset_spread: default_spread(),
            noise_sigma: default_sigma(),
            seed,
            task_prefix: default_prefix(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        if self.n_layers == 0 || self.hidden_dim == 0 {
            return bad("n_layers and hidden_dim must be positive".into());
        }
        if self.n_tasks == 0 {
            return bad("n_tasks must be positive".into());
        }
        if self.n_candidates_per_task < 2 {
            return bad("n_candidates_per_task must be at least 2".into());
        }
        if self.planted_layer >= self.n_layers {
            return bad(format!("planted_layer {} outside 0..{}", self.planted_layer, self.n_layers));
        }
        if !(self.offset.is_finite() && self.offset >= 0.0) {
            return bad(format!("offset must be finite and >= 0, got {}", self.offset));
        }
        if !(0.0..=1.0).contains(&self.offset_spread) {
            return bad(format!("offset_spread must lie in [0, 1], got {}", self.offset_spread));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return bad(format!("noise_sigma must be finite and > 0, got {}", self.noise_sigma));
        }
        if self.task_prefix.is_empty() {
            return bad("task_prefix must be non-empty".into());
        }
        Ok(())
    }

    pub fn task_id(&self, t: usize) -> String {
        format!("{}/{t}", self.task_prefix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub planted_layer: usize,
    pub planted_vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub store: ActivationStore,
    pub dataset: Dataset,
    pub qa: QaDataset,
    pub truth: GroundTruth,
}

/// Unit vector drawn uniformly from the sphere.
pub fn planted_vector(dim: usize, seed: u64) -> Vec<f64> {
    let mut g = Gaussian::new(rng_from(seed, &[VECTOR_STREAM]));
    loop {
        let v: Vec<f64> = (0..dim).map(|_| g.sample()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn task_multiplier(cfg: &SynthConfig, t: usize) -> f64 {
    let mut rng = rng_from(cfg.seed, &[TASK_STREAM, t as u64]);
    1.0 + cfg.offset_spread * (2.0 * unit_f64(&mut rng) - 1.0)
}

fn hidden(cfg: &SynthConfig, v: &[f64], shift: f64, stream: &[u64]) -> HiddenStates {
    let mut g = Gaussian::new(rng_from(cfg.seed, stream));
    let mut h = HiddenStates::zeros(cfg.n_layers, cfg.hidden_dim);
    for l in 0..cfg.n_layers {
        let row = h.layer_mut(l);
        for (k, x) in row.iter_mut().enumerate() {
            let mut val = cfg.noise_sigma * g.sample();
            if l == cfg.planted_layer {
                val += shift * v[k];
            }
            *x = val as f32;
        }
    }
    h
}

/// Label-independent logprobs and confidence readouts.
fn payloads(cfg: &SynthConfig, t: usize, c: usize) -> (Vec<f32>, ConfidencePayload) {
    let mut rng = rng_from(cfg.seed, &[PAYLOAD_STREAM, t as u64, c as u64]);
    let n_tokens = 4 + (unit_f64(&mut rng) * 12.0) as usize;
    let logprobs = (0..n_tokens)
        .map(|_| (-(3.0 * unit_f64(&mut rng)) - 0.01) as f32)
        .collect();
    let mut levels = [0f32; N_LEVELS];
    for p in &mut levels {
        *p = (0.2 * unit_f64(&mut rng)) as f32;
    }
    let conf = ConfidencePayload {
        level_joint_probs: Some(levels),
        p_true: Some(unit_f64(&mut rng) as f32),
    };
    (logprobs, conf)
}

/// Candidate 0 of every task is the correct one.
pub fn candidate_id(c: usize) -> String {
    format!("c{c}")
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let v = planted_vector(cfg.hidden_dim, cfg.planted_vector_seed);
    let n_c = cfg.n_candidates_per_task;

    let records: Vec<ActivationRecord> = (0..cfg.n_tasks)
        .into_par_iter()
        .flat_map_iter(|t| {
            let m = task_multiplier(cfg, t);
            let task_id = cfg.task_id(t);
            let v = &v;
            (0..n_c).flat_map(move |c| {
                let correct = c == 0;
                let sign = if correct { 1.0 } else { -1.0 };
                let shift = sign * cfg.offset * m / 2.0;
                let fit_kind = if correct { PromptKind::FitCorrect } else { PromptKind::FitIncorrect };
                let (logprobs, conf) = payloads(cfg, t, c);
                let cand = candidate_id(c);
                let fit = ActivationRecord {
                    record_id: format!("{task_id}/{cand}/fit"),
                    task_id: task_id.clone(),
                    candidate_id: cand.clone(),
                    prompt_kind: fit_kind,
                    hidden: hidden(cfg, v, shift, &[RECORD_STREAM, t as u64, c as u64, 0]),
                    token_logprobs: None,
                    confidence: None,
                };
                let eval = ActivationRecord {
                    record_id: format!("{task_id}/{cand}/eval"),
                    task_id: task_id.clone(),
                    candidate_id: cand,
                    prompt_kind: PromptKind::Eval,
                    hidden: hidden(cfg, v, shift, &[RECORD_STREAM, t as u64, c as u64, 1]),
                    token_logprobs: Some(logprobs),
                    confidence: Some(conf),
                };
                [fit, eval]
            })
        })
        .collect();
    let store = ActivationStore::new(records)?;

    let tasks = (0..cfg.n_tasks)
        .map(|t| TaskEntry {
            task_id: cfg.task_id(t),
            description: format!("Synthetic task {t}."),
            benchmark: Benchmark::Synthetic,
            baseline_correct: None,
            candidates: (0..n_c)
                .map(|c| CandidateEntry {
                    candidate_id: candidate_id(c),
                    code: format!("def solve():\n    return {c}\n"),
                    label: if c == 0 { Label::Correct } else { Label::Incorrect },
                    origin: "synth".into(),
                })
                .collect(),
        })
        .collect();
    let dataset = Dataset::new(tasks)?;
    let qa = build_qa_instances(&dataset, n_c - 1, derive_seed(cfg.seed, &[QA_STREAM]));
    Ok(SynthOutput {
        store,
        dataset,
        qa,
        truth: GroundTruth {
            planted_layer: cfg.planted_layer,
            planted_vector: v,
        },
    })
}
