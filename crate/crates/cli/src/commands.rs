// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use corrlat::baselines::{random_select, MetricKind, ReflectiveMode};
use corrlat::config::{apply_override, ProtocolKind, RunConfig};
use corrlat::datamodel::{
    build_qa_instances, pair_tasks, ActivationRecord, ActivationStore, Dataset, PromptKind, QaDataset,
};
use corrlat::eval::{
    fit_task_ids, make_outer_folds, payload_score, ranking_instances, run_id_protocol, run_ood_protocol,
    run_ranking, AnyReport, EvalInputs, FoldPlan, MetricSettings, RankingSettings,
};
use corrlat::lat::{fit, layer_accuracies, select_layer, ChoiceSet, Validation};
use corrlat::linalg::argmax_first;
use corrlat::seed::{derive_seed, rng_from};
use corrlat::stimuli::{ConfidenceVariant, StimulusTemplate, TemplateSet};
use corrlat::synth::{generate, SynthConfig};
use corrlat::{Error, LatReader64};
use serde::Serialize;

use crate::{CmdResult, Command, Failure, Format, OutputArgs, ValidationArgs};

/// Like `println!`, but a closed stdout (e.g. piped into `head`) is not a panic.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

fn put(text: &str) {
    use std::io::Write as _;
    let _ = std::io::stdout().write_all(text.as_bytes());
}

const FIT_STREAM: u64 = 0xC1;
const SELECT_STREAM: u64 = 0xC2;
const CHOOSE_STREAM: u64 = 0xC3;

pub fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::ValidateStore { path } => validate_store(&path),
        Command::Fit {
            store,
            dataset,
            out,
            seed,
        } => cmd_fit(&store, &dataset, &out, seed),
        Command::SelectLayer {
            reader,
            store,
            validation,
            out,
        } => cmd_select_layer(&reader, &store, &validation, &out),
        Command::Score {
            reader,
            store,
            layer,
            records,
        } => cmd_score(&reader, &store, layer, &records),
        Command::Choose {
            store,
            qa,
            metric,
            reader,
            seed,
            reflective_mode,
        } => cmd_choose(&store, &qa, metric.into(), reader.as_deref(), seed, reflective_mode.into()),
        Command::Rank {
            store,
            dataset,
            reader,
            ks,
            metrics,
            seed,
            plan,
            fold,
            reflective_mode,
            output,
        } => {
            let metrics = metrics.map(|m| m.into_iter().map(MetricKind::from).collect());
            let args = RankArgs {
                store,
                dataset,
                reader,
                ks,
                metrics,
                seed,
                plan,
                fold,
                mode: reflective_mode.into(),
            };
            cmd_rank(&args, &output)
        }
        Command::Evaluate {
            config,
            overrides,
            write_plan,
            output,
        } => cmd_evaluate(&config, &overrides, write_plan.as_deref(), &output),
        Command::Synth {
            config,
            overrides,
            out_dir,
        } => cmd_synth(&config, &overrides, &out_dir),
        Command::MakeQa {
            dataset,
            seed,
            n_incorrect,
            out,
        } => cmd_make_qa(&dataset, seed, n_incorrect, &out),
        Command::Report { input, format } => {
            put(&render(&AnyReport::read(&input)?, format));
            Ok(())
        }
        Command::RenderPrompts { dataset, templates, out } => cmd_render_prompts(&dataset, templates.as_deref(), out.as_deref()),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Error> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn render(report: &AnyReport, format: Format) -> String {
    match format {
        Format::Text => report.to_text(),
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json(),
    }
}

fn emit(report: AnyReport, output: &OutputArgs) -> CmdResult {
    if let Some(out) = &output.out {
        write_file(out, report.to_json())?;
    }
    put(&render(&report, output.format));
    Ok(())
}

fn validate_store(path: &Path) -> CmdResult {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match ActivationStore::from_bytes(&bytes) {
        Ok(store) => {
            let s = store.summary(bytes.len());
            say!(
                "ok: {} records, {} layers x {} dims, {} bytes",
                s.record_count, s.n_layers, s.hidden_dim, s.bytes
            );
            Ok(())
        }
        Err(e) => {
            say!("{}: 1 violation", path.display());
            say!("  - {e}");
            Err(Failure::Violations)
        }
    }
}

fn task_ids(dataset: &Dataset) -> Vec<String> {
    dataset.tasks.iter().map(|t| t.task_id.clone()).collect()
}

fn cmd_fit(store: &Path, dataset: &Path, out: &Path, seed: u64) -> CmdResult {
    let store = ActivationStore::read(store)?;
    let ds = Dataset::read(dataset)?;
    let mut rng = rng_from(seed, &[FIT_STREAM]);
    let pairs = pair_tasks(&store, &task_ids(&ds), Some(&mut rng))?;
    let mut reader: LatReader64 = fit(&pairs)?;
    reader.fit_meta.seed = Some(seed);
    reader.fit_meta.source = dataset
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    reader.write(out)?;
    let usable = reader.usable_layers().count();
    say!("fitted {} layers ({usable} usable) on {} pairs", reader.n_layers(), pairs.len());
    Ok(())
}

fn eval_records<'a>(store: &'a ActivationStore, task_id: &str, candidates: &[String]) -> Result<Vec<&'a ActivationRecord>, Error> {
    candidates
        .iter()
        .map(|c| {
            store
                .find(task_id, c, PromptKind::Eval)
                .ok_or_else(|| Error::MissingActivations(format!("no EVAL record for task {task_id} candidate {c}")))
        })
        .collect()
}

fn cmd_select_layer(reader: &Path, store: &Path, validation: &ValidationArgs, out: &Path) -> CmdResult {
    let reader = LatReader64::read(reader)?;
    let store = ActivationStore::read(store)?;
    let (chosen, acc) = if let Some(ds) = &validation.dataset {
        let ds = Dataset::read(ds)?;
        let seed = reader.fit_meta.seed.unwrap_or(0);
        let mut rng = rng_from(seed, &[SELECT_STREAM]);
        let pairs = pair_tasks(&store, &task_ids(&ds), Some(&mut rng))?;
        let v = Validation::Pairs(&pairs);
        (select_layer(&reader, v)?, layer_accuracies(&reader, v)?)
    } else {
        let qa = QaDataset::read(validation.qa.as_ref().expect("clap enforces one source"))?;
        let records = qa
            .instances
            .iter()
            .map(|q| eval_records(&store, &q.task_id, &q.candidates))
            .collect::<Result<Vec<_>, _>>()?;
        let sets: Vec<ChoiceSet<'_>> = qa
            .instances
            .iter()
            .zip(&records)
            .map(|(q, recs)| ChoiceSet {
                candidates: recs.iter().map(|r| &r.hidden).collect(),
                correct_index: q.correct_index,
            })
            .collect();
        let v = Validation::Choices(&sets);
        (select_layer(&reader, v)?, layer_accuracies(&reader, v)?)
    };
    chosen.write(out)?;
    for (l, a) in acc.iter().enumerate() {
        match a {
            Some(a) => say!("layer {l:>3}  {a:.4}"),
            None => say!("layer {l:>3}  unusable"),
        }
    }
    say!("chosen layer: {}", chosen.chosen_layer().expect("select_layer sets it"));
    Ok(())
}

fn scoring_layer(reader: &LatReader64, layer: Option<usize>) -> Result<usize, Failure> {
    match layer.or(reader.chosen_layer()) {
        Some(l) => Ok(l),
        None => Err(Failure::Usage("reader has no chosen layer; pass --layer".into())),
    }
}

fn cmd_score(reader: &Path, store: &Path, layer: Option<usize>, ids: &[String]) -> CmdResult {
    let reader = LatReader64::read(reader)?;
    let store = ActivationStore::read(store)?;
    let layer = scoring_layer(&reader, layer)?;
    let records: Vec<&ActivationRecord> = if ids.is_empty() {
        store.records().iter().filter(|r| r.prompt_kind == PromptKind::Eval).collect()
    } else {
        ids.iter()
            .map(|id| {
                store
                    .get(id)
                    .ok_or_else(|| Error::MissingActivations(format!("no record {id}")))
            })
            .collect::<Result<_, _>>()?
    };
    let mut out = String::from("record_id,score\n");
    for r in records {
        let _ = writeln!(out, "{},{}", r.record_id, reader.score(&r.hidden, layer)?);
    }
    put(&out);
    Ok(())
}

fn cmd_choose(
    store: &Path,
    qa: &Path,
    metric: MetricKind,
    reader: Option<&Path>,
    seed: u64,
    mode: ReflectiveMode,
) -> CmdResult {
    let store = ActivationStore::read(store)?;
    let qa = QaDataset::read(qa)?;
    let reader = match (metric, reader) {
        (MetricKind::Lat, None) => return Err(Failure::Usage("--metric lat needs --reader".into())),
        (MetricKind::Lat, Some(p)) => Some(LatReader64::read(p)?),
        _ => None,
    };
    let layer = reader.as_ref().map(|r| scoring_layer(r, None)).transpose()?;
    let stream = derive_seed(seed, &[CHOOSE_STREAM]);
    let mut out = String::from("task_id,chosen,correct\n");
    let mut hits = 0usize;
    for (i, q) in qa.instances.iter().enumerate() {
        let recs = eval_records(&store, &q.task_id, &q.candidates)?;
        let pick = match (metric, &reader, layer) {
            (MetricKind::Random, _, _) => random_select(recs.len(), stream, i as u64),
            (MetricKind::Lat, Some(r), Some(l)) => {
                let s = recs.iter().map(|x| r.score(&x.hidden, l)).collect::<Result<Vec<f64>, _>>()?;
                argmax_first(&s)
            }
            _ => {
                let s = recs
                    .iter()
                    .map(|x| payload_score(x, metric, mode))
                    .collect::<Result<Vec<f64>, _>>()?;
                argmax_first(&s)
            }
        };
        let correct = pick == q.correct_index;
        hits += usize::from(correct);
        let _ = writeln!(out, "{},{},{}", q.task_id, q.candidates[pick], correct);
    }
    put(&out);
    if !qa.instances.is_empty() {
        eprintln!(
            "{} accuracy: {:.4} ({hits}/{})",
            metric.name(),
            hits as f64 / qa.instances.len() as f64,
            qa.instances.len()
        );
    }
    Ok(())
}

struct RankArgs {
    store: PathBuf,
    dataset: PathBuf,
    reader: Option<PathBuf>,
    ks: Vec<usize>,
    metrics: Option<Vec<MetricKind>>,
    seed: u64,
    plan: Option<PathBuf>,
    fold: usize,
    mode: ReflectiveMode,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_rank(args: &RankArgs, output: &OutputArgs) -> CmdResult {
    if args.ks.is_empty() || args.ks.contains(&0) {
        return Err(Failure::Usage("--k values must be positive".into()));
    }
    let metrics = match &args.metrics {
        Some(m) => {
            if m.contains(&MetricKind::Lat) && args.reader.is_none() {
                return Err(Failure::Usage("ranking by lat needs --reader".into()));
            }
            m.clone()
        }
        None => MetricKind::ALL
            .into_iter()
            .filter(|m| *m != MetricKind::Lat || args.reader.is_some())
            .collect(),
    };
    let store = ActivationStore::read(&args.store)?;
    let dataset = Dataset::read(&args.dataset)?;
    let reader = args.reader.as_deref().map(LatReader64::read).transpose()?;
    let mut instances = ranking_instances(&dataset)?;
    if let Some(p) = &args.plan {
        let plan: FoldPlan = read_json(p)?;
        let fold = plan
            .outer_folds
            .get(args.fold)
            .ok_or_else(|| Failure::Usage(format!("plan has {} folds, --fold {}", plan.outer_folds.len(), args.fold)))?;
        instances.retain(|i| fold.test_task_ids.contains(&i.task_id));
    }
    let baseline: Option<Vec<bool>> = instances
        .iter()
        .map(|i| dataset.task(&i.task_id).and_then(|t| t.baseline_correct))
        .collect();
    let pass_at_1 = baseline
        .filter(|b| !b.is_empty())
        .map(|b| b.iter().filter(|&&x| x).count() as f64 / b.len() as f64);
    let settings = RankingSettings {
        metrics,
        ks: args.ks.clone(),
        seed: args.seed,
        reflective_mode: args.mode,
    };
    let report = run_ranking(&store, reader.as_ref(), &instances, pass_at_1, &settings)?;
    emit(AnyReport::Ranking(report), output)
}

fn cmd_evaluate(config: &Path, overrides: &[String], write_plan: Option<&Path>, output: &OutputArgs) -> CmdResult {
    let cfg = RunConfig::load(config, overrides)?;
    let store = ActivationStore::read(&cfg.store)?;
    let dataset = Dataset::read(&cfg.dataset)?;
    let qa = QaDataset::read(&cfg.qa)?;
    let ood = cfg.ood_store.as_deref().map(ActivationStore::read).transpose()?;
    let ids: Vec<String> = qa.instances.iter().map(|q| q.task_id.clone()).collect();
    let mut plan = make_outer_folds(&ids, cfg.n_outer_folds, cfg.fractions.outer(), cfg.seed)?;
    let settings = MetricSettings {
        metrics: cfg.metrics.clone(),
        reflective_mode: cfg.reflective_mode,
    };
    let inputs = EvalInputs {
        store: &store,
        dataset: &dataset,
        qa: &qa,
    };
    let report = match (cfg.protocol, &ood) {
        (ProtocolKind::Ood, Some(ood)) => {
            plan = plan.with_inner_folds(&fit_task_ids(ood), cfg.n_inner_folds, cfg.inner_fractions.inner())?;
            run_ood_protocol(inputs, ood, &plan, &settings)?
        }
        _ => run_id_protocol(inputs, &plan, &settings)?,
    };
    if let Some(p) = write_plan {
        write_file(p, serde_json::to_string_pretty(&plan).map_err(Error::from)? + "\n")?;
    }
    let output = OutputArgs {
        out: output.out.clone().or(cfg.out.clone()),
        format: output.format,
    };
    emit(AnyReport::Evaluation(report), &output)
}

fn cmd_synth(config: &Path, overrides: &[String], out_dir: &Path) -> CmdResult {
    let text = std::fs::read_to_string(config).map_err(|e| Error::io(config, e))?;
    let mut doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::BadConfig(format!("{}: {e}", config.display())))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: SynthConfig = serde_json::from_value(doc).map_err(|e| Error::BadConfig(format!("synth config: {e}")))?;
    let out = generate(&cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let summary = out.store.write(out_dir.join("store.acts"))?;
    out.dataset.write(out_dir.join("dataset.json"))?;
    out.qa.write(out_dir.join("qa.json"))?;
    let truth = serde_json::to_string_pretty(&out.truth).map_err(Error::from)? + "\n";
    write_file(&out_dir.join("truth.json"), truth)?;
    say!(
        "wrote {} records ({} tasks, planted layer {}) to {}",
        summary.record_count,
        cfg.n_tasks,
        cfg.planted_layer,
        out_dir.display()
    );
    Ok(())
}

fn cmd_make_qa(dataset: &Path, seed: u64, n_incorrect: usize, out: &Path) -> CmdResult {
    if n_incorrect == 0 {
        return Err(Failure::Usage("--n-incorrect must be positive".into()));
    }
    let ds = Dataset::read(dataset)?;
    let qa = build_qa_instances(&ds, n_incorrect, seed);
    qa.write(out)?;
    say!("{} instances, {} tasks skipped", qa.instances.len(), qa.skipped.len());
    for s in &qa.skipped {
        say!("  skipped {}: {}", s.task_id, s.reason);
    }
    Ok(())
}

#[derive(Serialize)]
struct PromptLine<'a> {
    record_id: String,
    task_id: &'a str,
    candidate_id: &'a str,
    prompt_kind: PromptKind,
    prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    confidence_regular: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    confidence_tf: Option<String>,
}

fn cmd_render_prompts(dataset: &Path, templates: Option<&Path>, out: Option<&Path>) -> CmdResult {
    let ds = Dataset::read(dataset)?;
    let templates = match templates {
        Some(p) => TemplateSet::read(p)?,
        None => TemplateSet::default(),
    };
    let stimulus = StimulusTemplate::default();
    let mut text = String::new();
    let mut push = |line: PromptLine<'_>| -> Result<(), Error> {
        text.push_str(&serde_json::to_string(&line)?);
        text.push('\n');
        Ok(())
    };
    for task in &ds.tasks {
        let spec = task.spec();
        for c in &task.candidates {
            if let Some(kind) = PromptKind::for_label(c.label) {
                push(PromptLine {
                    record_id: format!("{}/{}/fit", task.task_id, c.candidate_id),
                    task_id: &task.task_id,
                    candidate_id: &c.candidate_id,
                    prompt_kind: kind,
                    prompt: templates.fit_prompt(&spec, &c.code)?,
                    confidence_regular: None,
                    confidence_tf: None,
                })?;
            }
            push(PromptLine {
                record_id: format!("{}/{}/eval", task.task_id, c.candidate_id),
                task_id: &task.task_id,
                candidate_id: &c.candidate_id,
                prompt_kind: PromptKind::Eval,
                prompt: templates.eval_prompt(&spec, &c.code, &stimulus)?,
                confidence_regular: Some(templates.confidence_prompt(&spec, &c.code, ConfidenceVariant::Regular)?),
                confidence_tf: Some(templates.confidence_prompt(&spec, &c.code, ConfidenceVariant::TrueFalse)?),
            })?;
        }
    }
    match out {
        Some(p) => write_file(p, text)?,
        None => put(&text),
    }
    Ok(())
}
