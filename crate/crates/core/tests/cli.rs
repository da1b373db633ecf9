use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use maskwise::data::write_examples;
use maskwise::eval::{to_jsonl, ClsItem};
use maskwise::manifest::RunManifest;
use maskwise::synth::{self, FAMILIES, HELDOUT_FAMILY};

const EPOCH: &str = "1700000000";

fn maskwise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskwise"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", EPOCH)
        .env_remove("MASKWISE_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = maskwise(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "maskwise {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Inputs {
    corpus: PathBuf,
    instructions: PathBuf,
    mc: PathBuf,
    cls: PathBuf,
}

fn inputs(dir: &Path) -> Inputs {
    let corpus = dir.join("corpus.txt");
    let mut text: Vec<String> = synth::vocab_corpus();
    text.extend(synth::corpus(synth::CorpusKind::Diverse, 40, 3));
    std::fs::write(&corpus, text.join("\n") + "\n").unwrap();
    let instructions = dir.join("instructions.jsonl");
    write_examples(&instructions, &synth::instruct_mix(HELDOUT_FAMILY, 4, 1)).unwrap();
    let mc = dir.join("heldout.jsonl");
    std::fs::write(&mc, to_jsonl(&synth::mc_items(&FAMILIES[HELDOUT_FAMILY], 12, 4, 5))).unwrap();
    let cls = dir.join("topics.jsonl");
    let items: Vec<ClsItem> = synth::topic_items(&[1, 2], 10, 2);
    std::fs::write(&cls, to_jsonl(&items)).unwrap();
    Inputs {
        corpus,
        instructions,
        mc,
        cls,
    }
}

const TINY: &[&str] = &[
    "--hidden-dim",
    "16",
    "--num-layers",
    "1",
    "--num-heads",
    "2",
    "--ffn-dim",
    "32",
    "--max-seq-len",
    "200",
];

/// Runs every artifact command into `root` and returns the run directories.
fn pipeline(inp: &Inputs, root: &Path) -> Vec<PathBuf> {
    let d = |n: &str| root.join(n);
    let vocab = d("vocab").join("vocab.mwvocab");
    ok(&["build-vocab", "--corpus", s(&inp.corpus), "--size", "300", "--out", s(&d("vocab"))]);
    ok(&["prepare", "--in", s(&inp.instructions), "--vocab", s(&vocab), "--seed", "4", "--out", s(&d("prep"))]);
    let mut pre = vec!["pretrain", "--vocab", s(&vocab), "--corpus", s(&inp.corpus), "--epochs", "1"];
    pre.extend_from_slice(TINY);
    let pre_dir = d("pre");
    pre.extend_from_slice(&["--out", s(&pre_dir)]);
    ok(&pre);
    let base = d("pre").join("model.mwckpt");
    let shard = d("prep").join("train.mwshard");
    ok(&[
        "instruct", "--ckpt", s(&base), "--vocab", s(&vocab), "--shard", s(&shard), "--epochs", "1",
        "--batch-size", "8", "--out", s(&d("inst")),
    ]);
    let tuned = d("inst").join("model.mwckpt");
    ok(&[
        "eval", "--ckpt", s(&tuned), "--vocab", s(&vocab), "--task", s(&inp.mc), "--format", "mc",
        "--instructions", "Pick the right option.", "--out", s(&d("eval_mc")),
    ]);
    ok(&[
        "eval", "--ckpt", s(&tuned), "--vocab", s(&vocab), "--task", s(&inp.cls), "--format", "cls", "--out",
        s(&d("eval_cls")),
    ]);
    ok(&[
        "finetune", "--ckpt", s(&tuned), "--vocab", s(&vocab), "--head", "cls", "--task", s(&inp.cls), "--epochs",
        "1", "--out", s(&d("ft")),
    ]);
    ok(&["report", "--runs", s(&d("eval_mc")), s(&d("eval_cls")), "--out", s(&d("report"))]);
    ["vocab", "prep", "pre", "inst", "eval_mc", "eval_cls", "ft", "report"].iter().map(|n| d(n)).collect()
}

#[test]
fn full_pipeline_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let inp = inputs(tmp.path());
    let root = tmp.path().join("run");
    let first = tmp.path().join("first");
    let a = pipeline(&inp, &root);
    std::fs::rename(&root, &first).unwrap();
    let b = pipeline(&inp, &root);
    assert_eq!(a, b);
    for db in &b {
        let da = first.join(db.file_name().unwrap());
        let ma = RunManifest::read(&da).unwrap();
        assert!(!ma.outputs.is_empty(), "{} lists no outputs", da.display());
        for name in ma.outputs.iter().chain(std::iter::once(&"manifest.json".to_string())) {
            let x = std::fs::read(da.join(name)).unwrap();
            let y = std::fs::read(db.join(name)).unwrap();
            assert!(x == y, "{name} differs between reruns in {}", da.display());
        }
        assert_eq!(ma.timestamp, EPOCH.parse::<u64>().unwrap());
    }
    let report = std::fs::read_to_string(first.join("report/tables.txt")).unwrap();
    assert!(report.contains("eval_mc") && report.contains("eval_cls") && report.contains("mean"));
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(first.join("prep/prepare_stats.json")).unwrap()).unwrap();
    assert_eq!(stats["manifest"], 32);
}

#[test]
fn predict_prints_a_distribution_over_the_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let inp = inputs(tmp.path());
    let vocab_dir = tmp.path().join("v");
    ok(&["build-vocab", "--corpus", s(&inp.corpus), "--size", "300", "--out", s(&vocab_dir)]);
    let vocab = vocab_dir.join("vocab.mwvocab");
    let mut pre = vec!["pretrain", "--vocab", s(&vocab), "--corpus", s(&inp.corpus), "--learning-rate", "0"];
    pre.extend_from_slice(TINY);
    let pre_dir = tmp.path().join("p");
    pre.extend_from_slice(&["--out", s(&pre_dir)]);
    ok(&pre);
    let prompt = tmp.path().join("prompt.txt");
    std::fs::write(&prompt, "Which is a fruit ?\n- A: apple\n- B: dog\nAnswer: [ANS] [MASK]").unwrap();
    let out = ok(&[
        "predict", "--ckpt", s(&pre_dir.join("model.mwckpt")), "--vocab", s(&vocab), "--prompt-file", s(&prompt),
        "--labels", "A,B",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let dist = v["distribution"].as_array().unwrap();
    assert_eq!(dist.len(), 2);
    let total: f64 = dist.iter().map(|e| e[1].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(["A", "B"].contains(&v["label"].as_str().unwrap()));
}

#[test]
fn help_and_version_exit_zero() {
    for args in [&["--help"][..], &["--version"], &["eval", "--help"], &["ablate", "--help"]] {
        let out = maskwise(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn usage_and_config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(maskwise(&[]).status.code(), Some(1));
    assert_eq!(maskwise(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(maskwise(&["eval", "--epochs", "3"]).status.code(), Some(1));
    let out = maskwise(&["build-vocab", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--corpus"));

    let bad = tmp.path().join("bad.ini");
    std::fs::write(&bad, "[pretrain]\nepochs = 2\nthis line is broken\n").unwrap();
    let out = maskwise(&["--config", s(&bad), "pretrain", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let typed = tmp.path().join("typed.ini");
    std::fs::write(&typed, "[build-vocab]\ncorpus = x.txt\nsize = many\n").unwrap();
    let out = maskwise(&["--config", s(&typed), "build-vocab", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("size"));
}

#[test]
fn runtime_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.txt");
    let out = maskwise(&["build-vocab", "--corpus", s(&missing), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.txt"));
}

#[test]
fn flags_override_the_config_file_and_seed_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let inp = inputs(tmp.path());
    let ini = tmp.path().join("run.ini");
    std::fs::write(&ini, format!("[build-vocab]\ncorpus = {}\nsize = 280\nscheme = whitespace\n", s(&inp.corpus))).unwrap();

    let from_file = tmp.path().join("f");
    ok(&["--config", s(&ini), "build-vocab", "--out", s(&from_file)]);
    let m = RunManifest::read(&from_file).unwrap();
    assert_eq!(m.config["build-vocab.size"], "280");
    assert_eq!(m.seed, 0);

    let flagged = tmp.path().join("g");
    let out = Command::new(env!("CARGO_BIN_EXE_maskwise"))
        .args(["--config", s(&ini), "build-vocab", "--size", "320", "--out", s(&flagged)])
        .env("SOURCE_DATE_EPOCH", EPOCH)
        .env("MASKWISE_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let m = RunManifest::read(&flagged).unwrap();
    assert_eq!(m.config["build-vocab.size"], "320");
    assert_eq!(m.seed, 99);
    assert_eq!(m.inputs.keys().collect::<Vec<_>>(), vec![s(&inp.corpus)]);
}
