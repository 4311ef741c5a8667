// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dataset manifests, fit-record pairing, and MCQA instance construction.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::store::ActivationStore;
use super::types::{
    ActivationRecord, Benchmark, CandidateSolution, Label, PairedActivations, PromptKind,
    QaInstance, TaskSpec,
};
use crate::error::{Error, Result};
use crate::seed::{rng_from, Rng};

/// A candidate as it appears inside a task object of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub candidate_id: String,
    pub code: String,
    pub label: Label,
    #[serde(default)]
    pub origin: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub task_id: String,
    pub description: String,
    pub benchmark: Benchmark,
    /// Outcome of the single low-temperature generation, for pass@1 baselines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_correct: Option<bool>,
    pub candidates: Vec<CandidateEntry>,
}

impl TaskEntry {
    pub fn spec(&self) -> TaskSpec {
        TaskSpec {
            task_id: self.task_id.clone(),
            description: self.description.clone(),
            benchmark: self.benchmark.clone(),
        }
    }

    pub fn solutions(&self) -> impl Iterator<Item = CandidateSolution> + '_ {
        self.candidates.iter().map(|c| CandidateSolution {
            task_id: self.task_id.clone(),
            candidate_id: c.candidate_id.clone(),
            code: c.code.clone(),
            label: c.label,
            origin: c.origin.clone(),
        })
    }

    pub fn candidate(&self, candidate_id: &str) -> Option<&CandidateEntry> {
        self.candidates.iter().find(|c| c.candidate_id == candidate_id)
    }
}

/// The JSON dataset manifest: an array of task objects.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dataset {
    pub tasks: Vec<TaskEntry>,
}

impl Dataset {
    pub fn new(tasks: Vec<TaskEntry>) -> Result<Self> {
        let ds = Self { tasks };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut task_ids = HashSet::new();
        for t in &self.tasks {
            if t.task_id.is_empty() {
                return Err(Error::InvalidDataset("empty task_id".into()));
            }
            if !task_ids.insert(t.task_id.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate task_id {}", t.task_id)));
            }
            if t.description.trim().is_empty() {
                return Err(Error::InvalidDataset(format!("task {} has no description", t.task_id)));
            }
            let mut cand_ids = HashSet::new();
            for c in &t.candidates {
                if c.candidate_id.is_empty() || !cand_ids.insert(c.candidate_id.as_str()) {
                    return Err(Error::InvalidDataset(format!(
                        "task {}: empty or duplicate candidate_id {:?}",
                        t.task_id, c.candidate_id
                    )));
                }
                if c.code.is_empty() {
                    return Err(Error::InvalidDataset(format!(
                        "task {} candidate {} has empty code",
                        t.task_id, c.candidate_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskEntry> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ds: Dataset = serde_json::from_str(&text)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedTask {
    pub task_id: String,
    pub reason: String,
}

/// Output of [`build_qa_instances`], also the on-disk QA dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaDataset {
    pub seed: u64,
    pub n_incorrect: usize,
    pub instances: Vec<QaInstance>,
    pub skipped: Vec<SkippedTask>,
}

impl QaDataset {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn instance(&self, task_id: &str) -> Option<&QaInstance> {
        self.instances.iter().find(|q| q.task_id == task_id)
    }
}

/// Builds one MCQA instance per qualifying task.
///
/// The first CORRECT candidate is the correct choice. When a task has more
/// than `n_incorrect` INCORRECT candidates, `n_incorrect` of them are sampled.
/// Choice order is shuffled; each task draws from its own stream of `seed`.
pub fn build_qa_instances(dataset: &Dataset, n_incorrect: usize, seed: u64) -> QaDataset {
    let mut instances = Vec::new();
    let mut skipped = Vec::new();
    for (ti, task) in dataset.tasks.iter().enumerate() {
        let correct = task.candidates.iter().find(|c| c.label == Label::Correct);
        let mut incorrect: Vec<&str> = task
            .candidates
            .iter()
            .filter(|c| c.label == Label::Incorrect)
            .map(|c| c.candidate_id.as_str())
            .collect();
        let Some(correct) = correct else {
            skipped.push(SkippedTask {
                task_id: task.task_id.clone(),
                reason: "no CORRECT candidate".into(),
            });
            continue;
        };
        if incorrect.len() < n_incorrect {
            skipped.push(SkippedTask {
                task_id: task.task_id.clone(),
                reason: format!(
                    "{} INCORRECT candidates, {n_incorrect} required",
                    incorrect.len()
                ),
            });
            continue;
        }
        let mut rng = rng_from(seed, &[ti as u64]);
        if incorrect.len() > n_incorrect {
            incorrect.shuffle(&mut rng);
            incorrect.truncate(n_incorrect);
        }
        let mut choices: Vec<String> = std::iter::once(correct.candidate_id.as_str())
            .chain(incorrect)
            .map(str::to_owned)
            .collect();
        choices.shuffle(&mut rng);
        let correct_index = choices
            .iter()
            .position(|c| *c == correct.candidate_id)
            .expect("correct candidate is among the choices");
        instances.push(QaInstance {
            task_id: task.task_id.clone(),
            candidates: choices,
            correct_index,
        });
    }
    QaDataset {
        seed,
        n_incorrect,
        instances,
        skipped,
    }
}

/// Fit records of one task, split by kind.
struct FitGroup<'a> {
    correct: Vec<&'a ActivationRecord>,
    incorrect: Vec<&'a ActivationRecord>,
}

fn fit_groups(store: &ActivationStore) -> BTreeMap<&str, FitGroup<'_>> {
    let mut groups: BTreeMap<&str, FitGroup<'_>> = BTreeMap::new();
    for r in store.records() {
        let g = groups.entry(r.task_id.as_str()).or_insert_with(|| FitGroup {
            correct: Vec::new(),
            incorrect: Vec::new(),
        });
        match r.prompt_kind {
            PromptKind::FitCorrect => g.correct.push(r),
            PromptKind::FitIncorrect => g.incorrect.push(r),
            PromptKind::Eval => {}
        }
    }
    groups.retain(|_, g| !(g.correct.is_empty() && g.incorrect.is_empty()));
    groups
}

fn make_pair(task_id: &str, c: &ActivationRecord, w: &ActivationRecord) -> PairedActivations {
    PairedActivations {
        task_id: task_id.to_owned(),
        correct: c.hidden.clone(),
        incorrect: w.hidden.clone(),
    }
}

/// Pairs every task's correct and incorrect fit records (pairing key: task_id).
///
/// Tasks are returned in lexicographic task_id order.
pub fn pair_records(store: &ActivationStore) -> Result<Vec<PairedActivations>> {
    fit_groups(store)
        .into_iter()
        .map(|(task, g)| match (g.correct.as_slice(), g.incorrect.as_slice()) {
            ([c], [w]) => Ok(make_pair(task, c, w)),
            ([], _) | (_, []) => Err(Error::UnpairedRecord(task.to_owned())),
            _ => Err(Error::AmbiguousPairing(task.to_owned())),
        })
        .collect()
}

/// Pairs the fit records of the listed tasks, in the given order.
///
/// With `sampler`, a task with several incorrect fit records has one drawn
/// uniformly; without it such a task is [`Error::AmbiguousPairing`].
pub fn pair_tasks(
    store: &ActivationStore,
    task_ids: &[String],
    mut sampler: Option<&mut Rng>,
) -> Result<Vec<PairedActivations>> {
    let groups = fit_groups(store);
    task_ids
        .iter()
        .map(|task| {
            let g = groups
                .get(task.as_str())
                .ok_or_else(|| Error::MissingActivations(format!("no fit records for task {task}")))?;
            let c = match g.correct.as_slice() {
                [] => return Err(Error::UnpairedRecord(task.clone())),
                [c] => *c,
                _ => return Err(Error::AmbiguousPairing(task.clone())),
            };
            let w = match (g.incorrect.as_slice(), sampler.as_deref_mut()) {
                ([], _) => return Err(Error::UnpairedRecord(task.clone())),
                ([w], _) => *w,
                (many, Some(rng)) => many[rng.random_range(0..many.len())],
                (_, None) => return Err(Error::AmbiguousPairing(task.clone())),
            };
            Ok(make_pair(task, c, w))
        })
        .collect()
}
