// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn corrlat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corrlat"))
        .args(args)
        .env_remove("CORRLAT_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SYNTH: &str = r#"{"n_layers":4,"hidden_dim":16,"n_tasks":60,"planted_layer":2,
  "planted_vector_seed":1,"offset":40.0,"offset_spread":0.5,"seed":5}"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(synth: &str, extra: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("synth.json");
        std::fs::write(&cfg, synth).unwrap();
        let out = dir.path().join("data");
        let mut args = vec!["synth", "--config", s(&cfg), "--out-dir", s(&out)];
        args.extend_from_slice(extra);
        let o = corrlat(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn data(&self, name: &str) -> PathBuf {
        self.dir.path().join("data").join(name)
    }

    fn fit(&self, out: &str, seed: &str) -> Output {
        corrlat(&[
            "fit",
            "--store",
            s(&self.data("store.acts")),
            "--dataset",
            s(&self.data("dataset.json")),
            "--out",
            s(&self.path(out)),
            "--seed",
            seed,
        ])
    }

    fn selected(&self) -> PathBuf {
        assert_eq!(code(&self.fit("r.latr", "1")), 0);
        let o = corrlat(&[
            "select-layer",
            "--reader",
            s(&self.path("r.latr")),
            "--store",
            s(&self.data("store.acts")),
            "--qa",
            s(&self.data("qa.json")),
            "--out",
            s(&self.path("sel.latr")),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("chosen layer: 2"), "{}", stdout(&o));
        self.path("sel.latr")
    }

    fn run_config(&self) -> PathBuf {
        let p = self.path("run.json");
        std::fs::write(&p, r#"{"store":"data/store.acts","dataset":"data/dataset.json","qa":"data/qa.json","seed":3}"#).unwrap();
        p
    }
}

#[test]
fn validate_store_exit_codes() {
    let f = Fixture::new(SYNTH, &[]);
    let store = f.data("store.acts");
    let o = corrlat(&["validate-store", s(&store)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("ok: 480 records"));

    let bytes = std::fs::read(&store).unwrap();
    let cut = f.path("cut.acts");
    std::fs::write(&cut, &bytes[..bytes.len() - 10]).unwrap();
    let o = corrlat(&["validate-store", s(&cut)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("TruncatedBlob"), "{}", stdout(&o));

    let o = corrlat(&["validate-store", s(&f.path("missing.acts"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn fit_select_recovers_planted_layer_and_is_reproducible() {
    let f = Fixture::new(SYNTH, &[]);
    let sel = f.selected();
    assert!(sel.exists());
    assert_eq!(code(&f.fit("again.latr", "1")), 0);
    assert_eq!(std::fs::read(f.path("r.latr")).unwrap(), std::fs::read(f.path("again.latr")).unwrap());

    // pair-based validation lands on the same layer
    let o = corrlat(&[
        "select-layer",
        "--reader",
        s(&f.path("r.latr")),
        "--store",
        s(&f.data("store.acts")),
        "--dataset",
        s(&f.data("dataset.json")),
        "--out",
        s(&f.path("pairs.latr")),
    ]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("chosen layer: 2"));
}

#[test]
fn fit_on_empty_dataset_is_a_domain_error() {
    let f = Fixture::new(SYNTH, &[]);
    let empty = f.path("empty.json");
    std::fs::write(&empty, "[]").unwrap();
    let o = corrlat(&["fit", "--store", s(&f.data("store.acts")), "--dataset", s(&empty), "--out", s(&f.path("x")), "--seed", "0"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn score_and_choose() {
    let f = Fixture::new(SYNTH, &[]);
    let sel = f.selected();
    let o = corrlat(&["score", "--reader", s(&sel), "--store", s(&f.data("store.acts")), "--record", "synth/0/c0/eval"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let line = out.lines().nth(1).unwrap();
    let score: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
    assert!(score > 0.0);

    let o = corrlat(&["choose", "--store", s(&f.data("store.acts")), "--qa", s(&f.data("qa.json")), "--reader", s(&sel)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 61);
    assert!(stdout(&o).lines().skip(1).all(|l| l.ends_with(",true")));

    let o = corrlat(&["choose", "--store", s(&f.data("store.acts")), "--qa", s(&f.data("qa.json"))]);
    assert_eq!(code(&o), 64);
    let o = corrlat(&["choose", "--store", s(&f.data("store.acts")), "--qa", s(&f.data("qa.json")), "--metric", "random"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn evaluate_reports_perfect_lat_and_is_deterministic() {
    let f = Fixture::new(SYNTH, &[]);
    let cfg = f.run_config();
    let run = |out: &str| {
        let o = corrlat(&["evaluate", "--config", s(&cfg), "--out", s(&f.path(out)), "--format", "json"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(f.path(out)).unwrap()
    };
    let a = run("a.json");
    assert_eq!(a, run("b.json"));
    let report: Value = serde_json::from_slice(&a).unwrap();
    let lat = report["columns"].as_array().unwrap().iter().find(|c| c["column"] == "LAT_VAL").unwrap();
    assert_eq!(lat["mean"], 1.0);
    assert_eq!(lat["std"], 0.0);

    let o = corrlat(&["evaluate", "--config", s(&cfg), "--set", "store=nope.acts"]);
    assert_eq!(code(&o), 2);
    let o = corrlat(&["evaluate", "--config", s(&f.path("no-config.json"))]);
    assert_eq!(code(&o), 2);
    let o = corrlat(&["evaluate", "--config", s(&cfg), "--set", "protocol=ood"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn evaluate_ood_from_config() {
    let f = Fixture::new(SYNTH, &[]);
    let ood_cfg = f.path("ood-synth.json");
    std::fs::write(&ood_cfg, SYNTH).unwrap();
    let o = corrlat(&[
        "synth",
        "--config",
        s(&ood_cfg),
        "--set",
        "task_prefix=ood",
        "--set",
        "seed=9",
        "--set",
        "n_tasks=20",
        "--out-dir",
        s(&f.path("ood")),
    ]);
    assert_eq!(code(&o), 0);
    let cfg = f.run_config();
    let o = corrlat(&[
        "evaluate",
        "--config",
        s(&cfg),
        "--set",
        "protocol=ood",
        "--set",
        "ood_store=ood/store.acts",
        "--format",
        "json",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["protocol"], "ood");
    assert_eq!(report["folds"][0]["inner"].as_array().unwrap().len(), 4);
    assert_eq!(report["folds"][0]["inner"][0]["n_fit"], 5);
}

#[test]
fn rank_curves_and_usage_errors() {
    let ten = SYNTH.replace("\"seed\":5", "\"seed\":5,\"n_candidates_per_task\":10");
    let f = Fixture::new(&ten, &[]);
    let sel = f.selected();
    let (store, dataset) = (f.data("store.acts"), f.data("dataset.json"));
    let base = ["rank", "--store", s(&store), "--dataset", s(&dataset), "--seed", "4"];
    let mut args = base.to_vec();
    args.extend(["--reader", s(&sel), "--k", "1,5,10", "--format", "json"]);
    let o = corrlat(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    for c in r["curves"].as_array().unwrap() {
        assert_eq!(c["pass_at_rank"][2], r["pass_ceiling"]);
        if c["metric"] == "LAT" {
            assert_eq!(c["pass_at_rank"][0], 1.0);
        }
    }

    let mut args = base.to_vec();
    args.extend(["--k", "0"]);
    assert_eq!(code(&corrlat(&args)), 64);
    let mut args = base.to_vec();
    args.extend(["--k", "11"]);
    assert_eq!(code(&corrlat(&args)), 1);
    let mut args = base.to_vec();
    args.extend(["--metrics", "lat"]);
    assert_eq!(code(&corrlat(&args)), 64);

    // restricted to one fold's test split
    let cfg = f.run_config();
    let plan = f.path("plan.json");
    assert_eq!(code(&corrlat(&["evaluate", "--config", s(&cfg), "--write-plan", s(&plan)])), 0);
    let mut args = base.to_vec();
    args.extend(["--plan", s(&plan), "--fold", "0", "--format", "json"]);
    let o = corrlat(&args);
    assert_eq!(code(&o), 0);
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["n_instances"], 48);
    let mut args = base.to_vec();
    args.extend(["--plan", s(&plan), "--fold", "10"]);
    assert_eq!(code(&corrlat(&args)), 64);
}

#[test]
fn synth_is_deterministic_and_guarded() {
    let a = Fixture::new(SYNTH, &[]);
    let b = Fixture::new(SYNTH, &[]);
    for name in ["store.acts", "dataset.json", "qa.json", "truth.json"] {
        assert_eq!(std::fs::read(a.data(name)).unwrap(), std::fs::read(b.data(name)).unwrap(), "{name}");
    }
    let truth: Value = serde_json::from_slice(&std::fs::read(a.data("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["planted_layer"], 2);

    let cfg = a.path("synth.json");
    let o = corrlat(&["synth", "--config", s(&cfg), "--set", "planted_layer=9", "--out-dir", s(&a.path("x"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("BadConfig"));
    let o = corrlat(&["synth", "--config", s(&a.path("none.json")), "--out-dir", s(&a.path("x"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn make_qa_happy_deterministic_guarded() {
    let f = Fixture::new(SYNTH, &[]);
    let ds = f.data("dataset.json");
    let run = |out: &str, seed: &str| corrlat(&["make-qa", "--dataset", s(&ds), "--seed", seed, "--out", s(&f.path(out))]);
    assert_eq!(code(&run("q1.json", "3")), 0);
    assert_eq!(code(&run("q2.json", "3")), 0);
    assert_eq!(std::fs::read(f.path("q1.json")).unwrap(), std::fs::read(f.path("q2.json")).unwrap());
    let qa: Value = serde_json::from_slice(&std::fs::read(f.path("q1.json")).unwrap()).unwrap();
    assert_eq!(qa["instances"].as_array().unwrap().len(), 60);

    let o = corrlat(&["make-qa", "--dataset", s(&ds), "--seed", "1", "--n-incorrect", "5", "--out", s(&f.path("q3.json"))]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("0 instances, 60 tasks skipped"));
    let o = corrlat(&["make-qa", "--dataset", s(&ds), "--seed", "1", "--n-incorrect", "0", "--out", s(&f.path("q4.json"))]);
    assert_eq!(code(&o), 64);
    let o = corrlat(&["make-qa", "--dataset", s(&f.path("none.json")), "--seed", "1", "--out", s(&f.path("q5.json"))]);
    assert_eq!(code(&o), 2);
    let o = corrlat(&["make-qa", "--dataset", s(&ds), "--out", s(&f.path("q6.json"))]);
    assert_eq!(code(&o), 64, "seed is mandatory");
}

#[test]
fn report_formats() {
    let f = Fixture::new(SYNTH, &[]);
    let cfg = f.run_config();
    let rep = f.path("rep.json");
    assert_eq!(code(&corrlat(&["evaluate", "--config", s(&cfg), "--out", s(&rep)])), 0);
    let text = stdout(&corrlat(&["report", s(&rep)]));
    assert!(text.contains("LAT_VAL") && text.contains("1.0000"));
    let csv = stdout(&corrlat(&["report", s(&rep), "--format", "csv"]));
    assert!(csv.starts_with("metric,fold,accuracy\n"));
    assert_eq!(csv.lines().count(), 1 + 6 * 10);
    let json = stdout(&corrlat(&["report", s(&rep), "--format", "json"]));
    assert_eq!(json.as_bytes(), std::fs::read(&rep).unwrap().as_slice());
    assert_eq!(code(&corrlat(&["report", s(&f.path("nope.json"))])), 2);
}

#[test]
fn render_prompts_with_template_file() {
    let f = Fixture::new(SYNTH, &[]);
    let ds = f.data("dataset.json");
    let o = corrlat(&["render-prompts", "--dataset", s(&ds)]);
    assert_eq!(code(&o), 0);
    let lines: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 60 * 4 * 2);
    assert_eq!(lines[0]["prompt_kind"], "FIT_CORRECT");
    assert_eq!(lines[1]["prompt_kind"], "EVAL");
    assert!(lines[1]["prompt"].as_str().unwrap().ends_with("The amount of correctness is "));
    assert!(lines[1]["confidence_tf"].as_str().unwrap().ends_with("Answer (True/False):"));

    let t = f.path("templates.json");
    std::fs::write(&t, r#"{"fit": "T: {task}\n{code}"}"#).unwrap();
    let o = corrlat(&["render-prompts", "--dataset", s(&ds), "--templates", s(&t)]);
    assert_eq!(code(&o), 0);
    let first: Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert!(first["prompt"].as_str().unwrap().starts_with("T: Synthetic task 0.\ndef solve()"));

    std::fs::write(&t, r#"{"fit": "no code here"}"#).unwrap();
    let o = corrlat(&["render-prompts", "--dataset", s(&ds), "--templates", s(&t)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("InvalidTemplate"));
}

#[test]
fn thread_cap_from_flag_and_env() {
    let f = Fixture::new(SYNTH, &["--threads", "2"]);
    let o = Command::new(env!("CARGO_BIN_EXE_corrlat"))
        .args(["validate-store", s(&f.data("store.acts"))])
        .env("CORRLAT_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 64);
    let o = Command::new(env!("CARGO_BIN_EXE_corrlat"))
        .args(["validate-store", s(&f.data("store.acts"))])
        .env("CORRLAT_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(code(&corrlat(&["no-such-command"])), 64);
}
