use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DVector;
use wordfactors::analogy::write_questions;
use wordfactors::dict_learn::{init_dictionary, Checkpoint};
use wordfactors::embeddings::write_text_embeddings;
use wordfactors::sparse_code::{column_objectives, fista_infer};
use wordfactors::synthetic::{planted_dictionary, toy_analogy};
use wordfactors::{Dictionary, EmbeddingSet, SparseCodes};

fn wordfactors(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wordfactors")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = wordfactors(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    emb: PathBuf,
    truth: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let planted = planted_dictionary(8, 12, 200, 2, (1.0, 3.0), 5).unwrap();
    let emb = dir.path().join("emb.txt");
    write_text_embeddings(&planted.embeddings, &emb).unwrap();
    let truth = dir.path().join("truth.wfdl");
    let ckpt = Checkpoint { dict: Dictionary::new(planted.truth, 0.5).unwrap(), accumulator: DVector::zeros(12) };
    ckpt.save(&truth).unwrap();
    Fixture { dir, emb, truth }
}

impl Fixture {
    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, steps: &str) -> PathBuf {
        let out = self.out(out);
        ok(&[
            "train", "--embeddings", s(&self.emb), "--dim", "12", "--steps", steps, "--fista-steps", "50",
            "--checkpoint-every", "20", "--seed", "3", "--threads", "1", "--out", s(&out),
        ]);
        out
    }

    fn infer(&self, dict: &Path, out: &str) -> PathBuf {
        let out = self.out(out);
        ok(&[
            "infer", "--embeddings", s(&self.emb), "--dictionary", s(dict), "--fista-steps", "200", "--batch", "64",
            "--out", s(&out),
        ]);
        out
    }
}

#[test]
fn zero_steps_writes_the_initial_dictionary() {
    let f = fixture();
    let out = f.train("t0", "0");
    let ckpt = Checkpoint::load(out.join("dictionary.wfdl")).unwrap();
    let init = init_dictionary(8, 12, 3).unwrap();
    let rounded = init.atoms().map(|v| v as f32 as f64);
    assert_eq!(ckpt.dict.atoms(), &rounded);
    assert_eq!(ckpt.dict.steps, 0);
}

#[test]
fn training_is_deterministic_and_logged() {
    let f = fixture();
    let a = f.train("ta", "60");
    let b = f.train("tb", "60");
    let bytes = |d: &Path| std::fs::read(d.join("dictionary.wfdl")).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert!(a.join("checkpoint-00000020.wfdl").exists());
    let log = std::fs::read_to_string(a.join("probe.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 4, "{log}");

    let c = f.out("tc");
    ok(&[
        "train", "--embeddings", s(&f.emb), "--dim", "12", "--steps", "10", "--fista-steps", "20", "--truth",
        s(&f.truth), "--out", s(&c),
    ]);
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(c.join("train_summary.json")).unwrap()).unwrap();
    assert!(summary["recovery_min_cosine"].is_f64());
    let log = std::fs::read_to_string(c.join("probe.csv")).unwrap();
    assert!(log.lines().nth(1).unwrap().split(',').nth(3).is_some_and(|v| !v.is_empty()));
}

#[test]
fn infer_objectives_match_single_word_runs() {
    let f = fixture();
    let out = f.infer(&f.truth, "inf");
    let es = wordfactors::embeddings::load_text_embeddings(&f.emb, None).unwrap();
    let codes = SparseCodes::load(out.join("codes.wfsc")).unwrap();
    assert_eq!(codes.len(), 200);

    let mut saved = Vec::new();
    let mut reader = csv::Reader::from_path(out.join("objectives.csv")).unwrap();
    for rec in reader.records() {
        saved.push(rec.unwrap()[1].parse::<f64>().unwrap());
    }
    let dict = Checkpoint::load(&f.truth).unwrap().dict;
    let (mut ours, mut theirs) = (0.0, 0.0);
    for w in (0..200).step_by(20) {
        let x = es.gather(&[w]);
        let alpha = fista_infer(&dict, &x, 200, 0.0).unwrap();
        theirs += column_objectives(&dict, &x, &alpha)[0];
        ours += saved[w];
    }
    assert!((ours / 10.0 - theirs / 10.0).abs() <= 1e-5, "{ours} vs {theirs}");

    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("infer_summary.json")).unwrap()).unwrap();
    assert!(summary["mean_l0"].as_f64().unwrap() > 0.0);

    // save → load → save is byte-stable
    let again = f.out("codes-again.wfsc");
    codes.save(&again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(out.join("codes.wfsc")).unwrap());
}

#[test]
fn zero_vectors_get_empty_codes() {
    let f = fixture();
    let words: Vec<String> = (0..5).map(|i| format!("z{i}")).collect();
    let cols = vec![DVector::zeros(8); 5];
    let es = EmbeddingSet::from_columns(words, &cols, "zeros").unwrap();
    let emb = f.out("zeros.txt");
    write_text_embeddings(&es, &emb).unwrap();
    let out = f.out("zinf");
    ok(&["infer", "--embeddings", s(&emb), "--dictionary", s(&f.truth), "--out", s(&out)]);
    let codes = SparseCodes::load(out.join("codes.wfsc")).unwrap();
    assert_eq!(codes.nnz(), 0);
}

#[test]
fn dimension_mismatch_is_a_user_error() {
    let f = fixture();
    let other = f.out("d4.wfdl");
    Checkpoint { dict: init_dictionary(4, 6, 0).unwrap(), accumulator: DVector::zeros(6) }.save(&other).unwrap();
    let out = wordfactors(&["infer", "--embeddings", s(&f.emb), "--dictionary", s(&other), "--out", s(&f.out("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}

#[test]
fn missing_artifact_is_named() {
    let f = fixture();
    let missing = f.out("nope.wfsc");
    let out = wordfactors(&["group", "--embeddings", s(&f.emb), "--codes", s(&missing), "--out", s(&f.out("g"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.wfsc"));
}

#[test]
fn grouping_is_reproducible_and_manifested() {
    let f = fixture();
    let inf = f.infer(&f.truth, "inf");
    let codes = inf.join("codes.wfsc");
    let run = |name: &str| {
        let out = f.out(name);
        ok(&[
            "group", "--embeddings", s(&f.emb), "--codes", s(&codes), "--k-nn", "3", "--k-clusters", "4", "--seed",
            "9", "--out", s(&out),
        ]);
        out
    };
    let (a, b) = (run("ga"), run("gb"));
    let read = |d: &Path| std::fs::read_to_string(d.join("groups.tsv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&a).lines().count(), 12);

    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "group");
    assert_eq!(manifest["seed"], 9);
    let inputs = manifest["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 2);
    let digest = wordfactors::cli::digest_file(&f.emb).unwrap();
    assert_eq!(inputs[0]["sha256"], digest.sha256.as_str());
    let manifests = std::fs::read_dir(&a).unwrap().filter(|e| e.as_ref().unwrap().file_name() == "manifest.json").count();
    assert_eq!(manifests, 1);
}

#[test]
fn analysis_commands_write_their_outputs() {
    let f = fixture();
    let inf = f.infer(&f.truth, "inf");
    let codes = inf.join("codes.wfsc");
    let gdir = f.out("g");
    ok(&["group", "--embeddings", s(&f.emb), "--codes", s(&codes), "--k-nn", "3", "--k-clusters", "3", "--out", s(&gdir)]);
    let groups = gdir.join("groups.tsv");

    let out = f.out("insp");
    ok(&[
        "inspect-factor", "--embeddings", s(&f.emb), "--codes", s(&codes), "--factor", "2", "--tokens", "w0,w1,zzz",
        "--groups", s(&groups), "--group", "0", "--out", s(&out),
    ]);
    for name in ["profiles.csv", "bars-factor-2.svg", "bars-group-0.csv", "heatmap-group-0.svg", "unknown_tokens.json"] {
        assert!(out.join(name).exists(), "{name}");
    }

    let out = f.out("dec");
    let res = ok(&[
        "decompose", "--embeddings", s(&f.emb), "--codes", s(&codes), "--token", "w3,w4,w5", "--pca", "--out", s(&out),
    ]);
    assert!(String::from_utf8_lossy(&res.stdout).starts_with("w3 = "));
    assert!(out.join("pca.svg").exists());

    let out = f.out("man");
    let res = ok(&[
        "manipulate", "--embeddings", s(&f.emb), "--dictionary", s(&f.truth), "--token", "w7", "--edit", "1:-2",
        "--metric", "euclidean", "--out", s(&out),
    ]);
    assert_eq!(String::from_utf8_lossy(&res.stdout).lines().count(), 10);

    let out = f.out("rep");
    ok(&["report", "--embeddings", s(&f.emb), "--codes", s(&codes), "--groups", s(&groups), "--words", "w1,w2", "--out", s(&out)]);
    assert!(std::fs::read_to_string(out.join("decompositions.txt")).unwrap().contains("others"));
}

#[test]
fn unknown_token_exits_with_user_error() {
    let f = fixture();
    let inf = f.infer(&f.truth, "inf");
    let out = wordfactors(&[
        "decompose", "--embeddings", s(&f.emb), "--codes", s(&inf.join("codes.wfsc")), "--token", "unicorn", "--out",
        s(&f.out("d")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unicorn"));
}

#[test]
fn toy_analogy_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let (es, tasks) = toy_analogy().unwrap();
    let emb = dir.path().join("toy.txt");
    write_text_embeddings(&es, &emb).unwrap();
    let q = dir.path().join("q.txt");
    write_questions(&tasks, &q).unwrap();
    let out = dir.path().join("an");
    ok(&["analogy", "--embeddings", s(&emb), "--questions", s(&q), "--out", s(&out)]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["arithmetic"]["total"]["accuracy"], 1.0);
    assert!(std::fs::read_to_string(out.join("report.txt")).unwrap().contains("100.00"));
}

#[test]
fn bad_flags_exit_with_two() {
    assert_eq!(wordfactors(&["train"]).status.code(), Some(2));
    assert_eq!(wordfactors(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(wordfactors(&["--help"]).status.code(), Some(0));
}
