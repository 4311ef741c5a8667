// SPDX-License-Identifier: MIT OR Apache-2.0

//! In-distribution and nested out-of-distribution MCQA protocols, and the
//! ranking harness.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::folds::{FoldPlan, InnerFold, OuterFold};
use super::metrics::{mean_std, pass_at_rank_k, pass_ceiling, rank_candidates, RankingInstance};
use super::report::{
    Column, ColumnSummary, EvaluationReport, FoldResult, FoldStatus, InnerResult, Protocol,
    Provenance, RankingCurve, RankingReport, STD_FORMULA,
};
use crate::baselines::{
    length_normalized_loglik, random_select, reflective_regular, reflective_tf, MetricKind,
    ReflectiveMode,
};
use crate::datamodel::{
    pair_tasks, ActivationRecord, ActivationStore, Dataset, Label, PairedActivations, PromptKind,
    QaDataset, QaInstance,
};
use crate::error::{Error, Result};
use crate::lat::{fit, layer_accuracy, select_layer, select_layer_oracle, ChoiceSet, LatReader, SelectionBasis, Validation};
use crate::linalg::argmax_first;
use crate::seed::{derive_seed, rng_from};

const PAIRING_STREAM: u64 = 0x0E01;
const RANDOM_STREAM: u64 = 0x0E02;
const OOD_PAIRING_STREAM: u64 = 0x0E03;
const RANK_RANDOM_STREAM: u64 = 0x0E04;

/// Which metrics to run and how.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSettings {
    pub metrics: Vec<MetricKind>,
    pub reflective_mode: ReflectiveMode,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            metrics: MetricKind::ALL.to_vec(),
            reflective_mode: ReflectiveMode::default(),
        }
    }
}

impl MetricSettings {
    fn columns(&self) -> Vec<Column> {
        let mut cols = Vec::new();
        for m in MetricKind::ALL {
            if self.metrics.contains(&m) {
                cols.extend_from_slice(Column::for_metric(m));
            }
        }
        cols
    }
}

/// Score of one candidate under a payload-based metric.
pub fn payload_score(record: &ActivationRecord, metric: MetricKind, mode: ReflectiveMode) -> Result<f64> {
    let missing = |what: &str| {
        Error::MissingPayload(format!("{} needs {what} on record {}", metric.name(), record.record_id))
    };
    match metric {
        MetricKind::IntrinsicLengthNorm => {
            let lp = record.token_logprobs.as_ref().ok_or_else(|| missing("token logprobs"))?;
            let lp: Vec<f64> = lp.iter().map(|&x| f64::from(x)).collect();
            length_normalized_loglik(&lp)
        }
        MetricKind::ReflectiveRegular => {
            let levels = record
                .confidence
                .as_ref()
                .and_then(|c| c.level_joint_probs)
                .ok_or_else(|| missing("level probabilities"))?;
            let levels: Vec<f64> = levels.iter().map(|&x| f64::from(x)).collect();
            reflective_regular(&levels, mode)
        }
        MetricKind::ReflectiveTf => {
            let p = record
                .confidence
                .as_ref()
                .and_then(|c| c.p_true)
                .ok_or_else(|| missing("p_true"))?;
            reflective_tf(f64::from(p))
        }
        MetricKind::Random | MetricKind::Lat => Err(Error::BadConfig(format!(
            "{} is not a payload metric",
            metric.name()
        ))),
    }
}

/// Test instances with their evaluation records resolved.
struct TestSet<'a> {
    instances: Vec<&'a QaInstance>,
    records: Vec<Vec<&'a ActivationRecord>>,
}

impl<'a> TestSet<'a> {
    fn resolve(store: &'a ActivationStore, qa: &'a QaDataset, task_ids: &[String]) -> Result<Self> {
        let mut instances = Vec::with_capacity(task_ids.len());
        let mut records = Vec::with_capacity(task_ids.len());
        for t in task_ids {
            let inst = qa
                .instance(t)
                .ok_or_else(|| Error::MissingActivations(format!("no QA instance for task {t}")))?;
            let recs = inst
                .candidates
                .iter()
                .map(|c| {
                    store.find(t, c, PromptKind::Eval).ok_or_else(|| {
                        Error::MissingActivations(format!("no EVAL record for task {t} candidate {c}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            instances.push(inst);
            records.push(recs);
        }
        if instances.is_empty() {
            return Err(Error::EmptyValidation);
        }
        Ok(Self { instances, records })
    }

    fn choice_sets(&self) -> Vec<ChoiceSet<'a>> {
        self.instances
            .iter()
            .zip(&self.records)
            .map(|(inst, recs)| ChoiceSet {
                candidates: recs.iter().map(|r| &r.hidden).collect(),
                correct_index: inst.correct_index,
            })
            .collect()
    }

    fn accuracy(&self, mut select: impl FnMut(usize, &[&ActivationRecord]) -> Result<usize>) -> Result<f64> {
        let mut hits = 0usize;
        for (i, (inst, recs)) in self.instances.iter().zip(&self.records).enumerate() {
            if select(i, recs)? == inst.correct_index {
                hits += 1;
            }
        }
        Ok(hits as f64 / self.instances.len() as f64)
    }
}

fn baseline_accuracy(test: &TestSet<'_>, metric: MetricKind, settings: &MetricSettings, seed: u64, fold: usize) -> Result<f64> {
    match metric {
        MetricKind::Random => {
            let stream = derive_seed(seed, &[RANDOM_STREAM, fold as u64]);
            test.accuracy(|i, recs| Ok(random_select(recs.len(), stream, i as u64)))
        }
        _ => test.accuracy(|_, recs| {
            let scores = recs
                .iter()
                .map(|r| payload_score(r, metric, settings.reflective_mode))
                .collect::<Result<Vec<f64>>>()?;
            Ok(argmax_first(&scores))
        }),
    }
}

/// Result of one fit → select → test cycle.
enum LatOutcome {
    Ok {
        val_layer: usize,
        best_layer: usize,
        val_acc: f64,
        best_acc: f64,
        val_layers: Vec<Option<f64>>,
    },
    Failed(String),
}

fn lat_cycle(fit_pairs: &[PairedActivations], val_pairs: &[PairedActivations], test: &TestSet<'_>) -> Result<LatOutcome> {
    let reader = match fit::<f64>(fit_pairs) {
        Ok(r) => r,
        Err(e @ (Error::FitFailed | Error::DegenerateFit(_))) => return Ok(LatOutcome::Failed(e.to_string())),
        Err(e) => return Err(e),
    };
    let validation = Validation::Pairs(val_pairs);
    let val_layers = crate::lat::layer_accuracies(&reader, validation)?;
    let chosen = select_layer(&reader, validation)?;
    let val_layer = chosen.chosen_layer().expect("select_layer sets a layer");
    let sets = test.choice_sets();
    let test_data = Validation::Choices(&sets);
    let best_layer = select_layer_oracle(&reader, test_data)?;
    Ok(LatOutcome::Ok {
        val_layer,
        best_layer,
        val_acc: layer_accuracy(&reader, val_layer, test_data)?,
        best_acc: layer_accuracy(&reader, best_layer, test_data)?,
        val_layers,
    })
}

fn check_dims(a: &ActivationStore, b: &ActivationStore) -> Result<()> {
    if a.n_layers() != b.n_layers() || a.hidden_dim() != b.hidden_dim() {
        return Err(Error::DimensionMismatch(format!(
            "stores are {}x{} and {}x{}",
            a.n_layers(),
            a.hidden_dim(),
            b.n_layers(),
            b.hidden_dim()
        )));
    }
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hashes of the run inputs.
pub fn provenance(store: &ActivationStore, dataset: &Dataset, qa: &QaDataset, ood: Option<&ActivationStore>) -> Provenance {
    Provenance {
        store_sha256: sha256_hex(&store.to_bytes()),
        dataset_sha256: sha256_hex(&serde_json::to_vec(dataset).expect("dataset serializes")),
        qa_sha256: sha256_hex(&serde_json::to_vec(qa).expect("qa serializes")),
        ood_store_sha256: ood.map(|s| sha256_hex(&s.to_bytes())),
    }
}

/// Inputs shared by both protocols.
#[derive(Debug, Clone, Copy)]
pub struct EvalInputs<'a> {
    pub store: &'a ActivationStore,
    pub dataset: &'a Dataset,
    pub qa: &'a QaDataset,
}

struct FoldOutput {
    result: FoldResult,
    values: Vec<(Column, Option<f64>)>,
}

fn baseline_values(test: &TestSet<'_>, settings: &MetricSettings, seed: u64, fold: usize) -> Result<Vec<(Column, Option<f64>)>> {
    let mut values = Vec::new();
    for m in MetricKind::ALL {
        if m == MetricKind::Lat || !settings.metrics.contains(&m) {
            continue;
        }
        let col = Column::for_metric(m)[0];
        values.push((col, Some(baseline_accuracy(test, m, settings, seed, fold)?)));
    }
    Ok(values)
}

fn id_fold(inputs: EvalInputs<'_>, seed: u64, index: usize, fold: &OuterFold, settings: &MetricSettings) -> Result<FoldOutput> {
    let test = TestSet::resolve(inputs.store, inputs.qa, &fold.test_task_ids)?;
    let mut values = baseline_values(&test, settings, seed, index)?;
    let mut result = FoldResult {
        index,
        n_fit: fold.fit_task_ids.len(),
        n_val: fold.val_task_ids.len(),
        n_test: fold.test_task_ids.len(),
        status: FoldStatus::Ok,
        failure: None,
        lat_val_layer: None,
        lat_best_layer: None,
        val_layer_accuracy: Vec::new(),
        lat_val_inner_std: None,
        lat_best_inner_std: None,
        inner: Vec::new(),
    };
    if settings.metrics.contains(&MetricKind::Lat) {
        let mut rng = rng_from(seed, &[PAIRING_STREAM, index as u64]);
        let fit_pairs = pair_tasks(inputs.store, &fold.fit_task_ids, Some(&mut rng))?;
        let val_pairs = pair_tasks(inputs.store, &fold.val_task_ids, Some(&mut rng))?;
        match lat_cycle(&fit_pairs, &val_pairs, &test)? {
            LatOutcome::Ok {
                val_layer,
                best_layer,
                val_acc,
                best_acc,
                val_layers,
            } => {
                result.lat_val_layer = Some(val_layer);
                result.lat_best_layer = Some(best_layer);
                result.val_layer_accuracy = val_layers;
                values.push((Column::LatVal, Some(val_acc)));
                values.push((Column::LatBest, Some(best_acc)));
            }
            LatOutcome::Failed(reason) => {
                result.status = FoldStatus::Failed;
                result.failure = Some(reason);
                values.push((Column::LatVal, None));
                values.push((Column::LatBest, None));
            }
        }
    }
    Ok(FoldOutput { result, values })
}

fn assemble(protocol: Protocol, plan: &FoldPlan, settings: &MetricSettings, provenance: Provenance, outputs: Vec<FoldOutput>) -> EvaluationReport {
    let columns = settings
        .columns()
        .into_iter()
        .map(|column| {
            let per_fold: Vec<Option<f64>> = outputs
                .iter()
                .map(|o| o.values.iter().find(|(c, _)| *c == column).and_then(|(_, v)| *v))
                .collect();
            let ok: Vec<f64> = per_fold.iter().flatten().copied().collect();
            let stats = mean_std(&ok);
            ColumnSummary {
                column,
                per_fold,
                mean: stats.map(|s| s.0),
                std: stats.map(|s| s.1),
            }
        })
        .collect();
    EvaluationReport {
        protocol,
        seed: plan.seed,
        n_folds: plan.outer_folds.len(),
        std_formula: STD_FORMULA.into(),
        reflective_mode: settings.reflective_mode,
        selection_basis: SelectionBasis::Pairs,
        provenance,
        columns,
        folds: outputs.into_iter().map(|o| o.result).collect(),
    }
}

/// In-distribution protocol: fit and validate on the fold's own fit/val tasks,
/// with one incorrect candidate sampled per task, then test on its test split.
pub fn run_id_protocol(inputs: EvalInputs<'_>, plan: &FoldPlan, settings: &MetricSettings) -> Result<EvaluationReport> {
    let outputs = plan
        .outer_folds
        .par_iter()
        .enumerate()
        .map(|(i, f)| id_fold(inputs, plan.seed, i, f, settings))
        .collect::<Result<Vec<_>>>()?;
    let prov = provenance(inputs.store, inputs.dataset, inputs.qa, None);
    Ok(assemble(Protocol::Id, plan, settings, prov, outputs))
}

/// Task ids that have fit records in `store`, sorted.
pub fn fit_task_ids(store: &ActivationStore) -> Vec<String> {
    store
        .records()
        .iter()
        .filter(|r| r.prompt_kind.is_fit())
        .map(|r| r.task_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn ood_fold(
    inputs: EvalInputs<'_>,
    ood: &ActivationStore,
    seed: u64,
    index: usize,
    fold: &OuterFold,
    inner_folds: &[InnerFold],
    settings: &MetricSettings,
) -> Result<FoldOutput> {
    let test = TestSet::resolve(inputs.store, inputs.qa, &fold.test_task_ids)?;
    let mut values = baseline_values(&test, settings, seed, index)?;
    let mut inner = Vec::with_capacity(inner_folds.len());
    if settings.metrics.contains(&MetricKind::Lat) {
        for (j, f) in inner_folds.iter().enumerate() {
            let mut rng = rng_from(seed, &[OOD_PAIRING_STREAM, index as u64, j as u64]);
            let fit_pairs = pair_tasks(ood, &f.fit_ids, Some(&mut rng))?;
            let val_pairs = pair_tasks(ood, &f.val_ids, Some(&mut rng))?;
            let mut r = InnerResult {
                index: j,
                n_fit: f.fit_ids.len(),
                n_val: f.val_ids.len(),
                status: FoldStatus::Ok,
                failure: None,
                lat_val_layer: None,
                lat_best_layer: None,
                lat_val: None,
                lat_best: None,
            };
            match lat_cycle(&fit_pairs, &val_pairs, &test)? {
                LatOutcome::Ok {
                    val_layer,
                    best_layer,
                    val_acc,
                    best_acc,
                    ..
                } => {
                    r.lat_val_layer = Some(val_layer);
                    r.lat_best_layer = Some(best_layer);
                    r.lat_val = Some(val_acc);
                    r.lat_best = Some(best_acc);
                }
                LatOutcome::Failed(reason) => {
                    r.status = FoldStatus::Failed;
                    r.failure = Some(reason);
                }
            }
            inner.push(r);
        }
    }
    let val: Vec<f64> = inner.iter().filter_map(|r| r.lat_val).collect();
    let best: Vec<f64> = inner.iter().filter_map(|r| r.lat_best).collect();
    let val_stats = mean_std(&val);
    let best_stats = mean_std(&best);
    let all_failed = !inner.is_empty() && val.is_empty();
    if settings.metrics.contains(&MetricKind::Lat) {
        values.push((Column::LatVal, val_stats.map(|s| s.0)));
        values.push((Column::LatBest, best_stats.map(|s| s.0)));
    }
    let result = FoldResult {
        index,
        n_fit: 0,
        n_val: 0,
        n_test: fold.test_task_ids.len(),
        status: if all_failed { FoldStatus::Failed } else { FoldStatus::Ok },
        failure: all_failed.then(|| "every inner fold failed".to_owned()),
        lat_val_layer: None,
        lat_best_layer: None,
        val_layer_accuracy: Vec::new(),
        lat_val_inner_std: val_stats.map(|s| s.1),
        lat_best_inner_std: best_stats.map(|s| s.1),
        inner,
    };
    Ok(FoldOutput { result, values })
}

/// Out-of-distribution protocol: the outer test splits of `plan`, with LAT
/// fitted and validated on external stimuli through each outer fold's inner
/// folds. Each outer entry is the mean over its inner folds.
pub fn run_ood_protocol(
    inputs: EvalInputs<'_>,
    ood_store: &ActivationStore,
    plan: &FoldPlan,
    settings: &MetricSettings,
) -> Result<EvaluationReport> {
    check_dims(inputs.store, ood_store)?;
    let inner = plan
        .inner_folds
        .as_ref()
        .ok_or_else(|| Error::BadConfig("OOD protocol needs inner folds in the plan".into()))?;
    if inner.len() != plan.outer_folds.len() {
        return Err(Error::BadConfig("one inner-fold list per outer fold required".into()));
    }
    let outputs = plan
        .outer_folds
        .par_iter()
        .zip(inner.par_iter())
        .enumerate()
        .map(|(i, (f, inner))| ood_fold(inputs, ood_store, plan.seed, i, f, inner, settings))
        .collect::<Result<Vec<_>>>()?;
    let prov = provenance(inputs.store, inputs.dataset, inputs.qa, Some(ood_store));
    Ok(assemble(Protocol::Ood, plan, settings, prov, outputs))
}

/// Ranking instances from a dataset manifest: every candidate of every task.
pub fn ranking_instances(dataset: &Dataset) -> Result<Vec<RankingInstance>> {
    dataset
        .tasks
        .iter()
        .map(|t| {
            if t.candidates.is_empty() {
                return Err(Error::InvalidDataset(format!("task {} has no candidates", t.task_id)));
            }
            let labels = t
                .candidates
                .iter()
                .map(|c| match c.label {
                    Label::Correct => Ok(true),
                    Label::Incorrect => Ok(false),
                    Label::Unknown => Err(Error::InvalidDataset(format!(
                        "task {} candidate {} has no test outcome",
                        t.task_id, c.candidate_id
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RankingInstance {
                task_id: t.task_id.clone(),
                candidate_ids: t.candidates.iter().map(|c| c.candidate_id.clone()).collect(),
                labels,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingSettings {
    pub metrics: Vec<MetricKind>,
    pub ks: Vec<usize>,
    pub seed: u64,
    pub reflective_mode: ReflectiveMode,
}

/// pass@rank-k of each metric's ranking over the candidate pools.
pub fn run_ranking(
    store: &ActivationStore,
    reader: Option<&LatReader<f64>>,
    instances: &[RankingInstance],
    pass_at_1_baseline: Option<f64>,
    settings: &RankingSettings,
) -> Result<RankingReport> {
    if instances.is_empty() {
        return Err(Error::BadK("no ranking instances".into()));
    }
    let min_n = instances.iter().map(|i| i.candidate_ids.len()).min().unwrap_or(0);
    if let Some(&k) = settings.ks.iter().find(|&&k| k == 0 || k > min_n) {
        return Err(Error::BadK(format!("k={k} outside 1..={min_n}")));
    }
    let lat_layer = match reader {
        Some(r) => Some(r.chosen_layer().ok_or(Error::NoUsableLayer)?),
        None => None,
    };

    let records: Vec<Vec<&ActivationRecord>> = instances
        .iter()
        .map(|inst| {
            inst.candidate_ids
                .iter()
                .map(|c| {
                    store.find(&inst.task_id, c, PromptKind::Eval).ok_or_else(|| {
                        Error::MissingActivations(format!(
                            "no EVAL record for task {} candidate {c}",
                            inst.task_id
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut curves = Vec::new();
    for metric in MetricKind::ALL {
        if !settings.metrics.contains(&metric) {
            continue;
        }
        let mut ranked = Vec::with_capacity(instances.len());
        for (i, (inst, recs)) in instances.iter().zip(&records).enumerate() {
            let order: Vec<usize> = match metric {
                MetricKind::Random => {
                    let mut order: Vec<usize> = (0..recs.len()).collect();
                    order.shuffle(&mut rng_from(settings.seed, &[RANK_RANDOM_STREAM, i as u64]));
                    order
                }
                MetricKind::Lat => {
                    let (r, layer) = match (reader, lat_layer) {
                        (Some(r), Some(l)) => (r, l),
                        _ => return Err(Error::BadConfig("LAT ranking needs a reader".into())),
                    };
                    let scores = recs
                        .iter()
                        .map(|rec| r.score(&rec.hidden, layer))
                        .collect::<Result<Vec<f64>>>()?;
                    rank_candidates(&scores)?
                }
                _ => {
                    let scores = recs
                        .iter()
                        .map(|rec| payload_score(rec, metric, settings.reflective_mode))
                        .collect::<Result<Vec<f64>>>()?;
                    rank_candidates(&scores)?
                }
            };
            ranked.push(order.iter().map(|&j| inst.labels[j]).collect::<Vec<bool>>());
        }
        let pass_at_rank = settings
            .ks
            .iter()
            .map(|&k| pass_at_rank_k(&ranked, k))
            .collect::<Result<Vec<_>>>()?;
        curves.push(RankingCurve { metric, pass_at_rank });
    }

    let labels: Vec<Vec<bool>> = instances.iter().map(|i| i.labels.clone()).collect();
    Ok(RankingReport {
        seed: settings.seed,
        ks: settings.ks.clone(),
        n_instances: instances.len(),
        min_candidates: min_n,
        lat_layer,
        pass_at_1_baseline,
        pass_ceiling: pass_ceiling(&labels),
        curves,
    })
}
