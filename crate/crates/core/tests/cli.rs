use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::Command;

use rsel::cli::run_with_io;
use rsel::textpipe::{read_jsonl, write_jsonl, DialoguePair, Origin};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run_stdin(args: &[&str], stdin: &str) -> Run {
    let mut input = Cursor::new(stdin.as_bytes().to_vec());
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("rsel").chain(args.iter().copied());
    let code = run_with_io(argv, &mut input, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn run(args: &[&str]) -> Run {
    run_stdin(args, "")
}

fn ok(args: &[&str]) -> Run {
    let r = run(args);
    assert_eq!(r.code, 0, "{args:?} failed: {}", r.stderr);
    r
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

const TINY_MODEL: &[&str] = &[
    "--embedding-dim", "8", "--hidden-layers", "1", "--hidden-width", "8", "--output-dim", "8",
    "--attn-dim", "4", "--max-positions", "32", "--batch-size", "8", "--max-steps", "20",
    "--eval-every", "10", "--valid-n", "10",
];

#[test]
fn gen_synthetic_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (p(dir.path(), "a.jsonl"), p(dir.path(), "b.jsonl"));
    for out in [&a, &b] {
        ok(&["gen-synthetic", "--seed", "7", "--n-topics", "5", "--pairs-per-topic", "20", "--out", out]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(read_jsonl(&a).unwrap().len(), 100);
    let echo = std::fs::read_to_string(format!("{a}.config")).unwrap();
    assert!(echo.contains("seed = 7"));
    assert!(!echo.contains(&a));
}

#[test]
fn bm25_report_on_toy_corpus_matches_keyword_scores() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(dir.path(), "toy.jsonl");
    let pairs = [
        ("the cat sat", "the cat sat on the mat"),
        ("a dog", "the dog sat down"),
        ("the park", "a cat and a dog played in the park today"),
    ]
    .map(|(i, r)| DialoguePair::new(i, r, Origin::Source));
    write_jsonl(&data, &pairs).unwrap();
    let scores = p(dir.path(), "scores.tsv");
    let report = p(dir.path(), "report.json");
    ok(&[
        "evaluate", "--data", &data, "--ranker", "bm25", "--n-candidates", "3", "--filter-pairs", "false",
        "--scores", &scores, "--report", &report, "--per-query-ranks", "true",
    ]);
    // BM25 of "the cat sat" over the three responses, from the keyword oracle.
    let golden = [1.1690213668985103, 0.7216179609318306, 0.5010479426847427];
    let text = std::fs::read_to_string(&scores).unwrap();
    let mut seen = 0;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f[0] == "0" {
            let cand: usize = f[2].parse().unwrap();
            let score: f64 = f[3].parse().unwrap();
            assert!((score - golden[cand]).abs() < 1e-9, "candidate {cand}: {score}");
            seen += 1;
        }
    }
    assert_eq!(seen, 3);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report["ranker"], "bm25");
    assert_eq!(report["N"], 3);
    assert_eq!(report["distractor_pool"], "test-set");
    assert_eq!(report["per_query_ranks"][0], 1);
    assert_eq!(report["config"]["bm25_k1"], "1.2");
}

fn sha(path: &str) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (train, valid, vocab) = (p(d, "train.jsonl"), p(d, "valid.jsonl"), p(d, "vocab.tsv"));
    ok(&["gen-synthetic", "--n-topics", "4", "--pairs-per-topic", "50", "--out", &train]);
    ok(&["gen-synthetic", "--n-topics", "4", "--pairs-per-topic", "10", "--seed", "1", "--out", &valid]);
    ok(&["build-vocab", "--data", &train, "--out", &vocab, "--min-count", "2", "--oov-buckets", "64"]);
    let inputs_before = (sha(&train), sha(&vocab));

    let ck1 = p(d, "a.ckpt");
    let ck2 = p(d, "b.ckpt");
    let log = p(d, "log.jsonl");
    for ck in [&ck1, &ck2] {
        let mut args = vec![
            "pretrain", "--train", &train, "--valid", &valid, "--vocab", &vocab, "--out", ck,
            "--log", &log, "--shared-towers", "true",
        ];
        args.extend_from_slice(TINY_MODEL);
        ok(&args);
    }
    assert_eq!(sha(&ck1), sha(&ck2), "same-seed checkpoints differ");
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 2);
    assert_eq!((sha(&train), sha(&vocab)), inputs_before);

    let ft = p(d, "ft.ckpt");
    let mut args = vec![
        "finetune", "--checkpoint", &ck1, "--vocab", &vocab, "--train", &train, "--valid", &valid,
        "--strategy", "direct", "--out", &ft, "--batch-size", "8", "--max-steps", "20", "--eval-every", "10",
        "--valid-n", "10",
    ];
    ok(&args);
    let pos = args.iter().position(|a| *a == "direct").unwrap();
    args[pos] = "mixed";
    let r = run(&args);
    assert_eq!(r.code, 1, "mixed without a source must be rejected");

    let report = ok(&[
        "evaluate", "--data", &valid, "--ranker", "encoder", "--checkpoint", &ft, "--vocab", &vocab,
        "--n-candidates", "10",
    ]);
    let report: serde_json::Value = serde_json::from_str(&report.stdout).unwrap();
    assert_eq!(report["n_queries"], 40);
    for ranker in ["sim", "random", "tfidf"] {
        ok(&[
            "evaluate", "--data", &valid, "--ranker", ranker, "--checkpoint", &ft, "--vocab", &vocab,
            "--n-candidates", "10",
        ]);
    }
    ok(&[
        "evaluate", "--data", &valid, "--ranker", "map", "--checkpoint", &ft, "--vocab", &vocab,
        "--n-candidates", "10", "--map-train", &train, "--map-out", &p(d, "map.ckpt"),
    ]);

    let index = p(d, "responses.idx");
    ok(&["index", "--data", &train, "--checkpoint", &ck1, "--vocab", &vocab, "--out", &index]);
    let response = read_jsonl(&train).unwrap()[3].response.clone();
    for ef in ["0", "64"] {
        let r = run_stdin(
            &["query", "--checkpoint", &ck1, "--vocab", &vocab, "--index", &index, "--k", "3", "--ef-search", ef],
            &format!("{response}\n"),
        );
        assert_eq!(r.code, 0, "{}", r.stderr);
        let first = r.stdout.lines().next().unwrap();
        assert_eq!(first.split('\t').nth(2), Some(response.as_str()), "{}", r.stdout);
        assert_eq!(r.stdout.lines().filter(|l| !l.is_empty()).count(), 3);
    }
    let other = p(d, "other.ckpt");
    let mut args = vec!["pretrain", "--train", &train, "--vocab", &vocab, "--out", &other, "--seed", "1"];
    args.extend_from_slice(TINY_MODEL);
    ok(&args);
    let r = run(&["query", "--checkpoint", &other, "--vocab", &vocab, "--index", &index]);
    assert_eq!(r.code, 1, "index built from another checkpoint must be rejected");

    let emb = p(d, "emb.tsv");
    ok(&["export-embeddings", "--checkpoint", &ck1, "--vocab", &vocab, "--data", &valid, "--out", &emb]);
    let rows = std::fs::read_to_string(&emb).unwrap();
    assert_eq!(rows.lines().count(), 40);
    assert!(rows.lines().all(|l| l.split('\t').count() == 2 + 8));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = p(d, "run.conf");
    std::fs::write(&cfg, "out = x.jsonl\nlearning_rate = 3\n").unwrap();
    let r = run(&["gen-synthetic", "--config", &cfg]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("unknown key learning_rate"), "{}", r.stderr);
    assert_eq!(run(&["build-vocab", "--out", &p(d, "v.tsv")]).code, 1);
    assert_eq!(run(&["evaluate", "--data", &p(d, "missing.jsonl")]).code, 1);
    assert_eq!(run(&["frobnicate"]).code, 1);

    let bad = p(d, "bad.jsonl");
    std::fs::write(&bad, "{not json\n").unwrap();
    assert_eq!(run(&["build-vocab", "--data", &bad, "--out", &p(d, "v.tsv")]).code, 2);

    // A vocabulary from different data no longer matches the checkpoint.
    let (a, b) = (p(d, "a.jsonl"), p(d, "b.jsonl"));
    ok(&["gen-synthetic", "--n-topics", "3", "--pairs-per-topic", "20", "--out", &a]);
    ok(&["gen-synthetic", "--n-topics", "3", "--pairs-per-topic", "20", "--world-seed", "5", "--out", &b]);
    let (va, vb) = (p(d, "va.tsv"), p(d, "vb.tsv"));
    ok(&["build-vocab", "--data", &a, "--out", &va, "--min-count", "1", "--oov-buckets", "16"]);
    ok(&["build-vocab", "--data", &b, "--out", &vb, "--min-count", "1", "--oov-buckets", "16"]);
    let ck = p(d, "m.ckpt");
    let mut args = vec!["pretrain", "--train", &a, "--vocab", &va, "--out", &ck];
    args.extend_from_slice(TINY_MODEL);
    ok(&args);
    let r = run(&["export-embeddings", "--checkpoint", &ck, "--vocab", &vb, "--data", &a, "--out", &p(d, "e.tsv")]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("fingerprint mismatch"), "{}", r.stderr);
    assert!(!Path::new(&p(d, "e.tsv")).exists(), "no output before the fingerprint check");
}

fn binary() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_rsel"))
}

#[test]
fn binary_help_documents_flags() {
    let out = Command::new(binary()).args(["pretrain", "--help"]).output().unwrap();
    assert!(out.status.success());
    let help = String::from_utf8(out.stdout).unwrap();
    for flag in ["--config", "--threads", "--batch-size", "--use-bigrams", "--smoothing-mass"] {
        assert!(help.contains(flag), "missing {flag}");
    }
    let out = Command::new(binary()).arg("evaluate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn threads_fall_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "s.jsonl");
    let status = Command::new(binary())
        .args(["gen-synthetic", "--n-topics", "2", "--pairs-per-topic", "3", "--out", &out])
        .env("RSEL_THREADS", "2")
        .status()
        .unwrap();
    assert!(status.success());
    let status = Command::new(binary())
        .args(["gen-synthetic", "--out", &out])
        .env("RSEL_THREADS", "many")
        .stderr(std::process::Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}
