//! The `cloneval` binary: exit codes, projections and written files.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::*;

fn cloneval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cloneval"))
        .args(args)
        .env_remove("CLONEVAL_ALIAS_TABLE")
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_model() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/models/tiny_encoder.onnx")
}

struct Corpus {
    reference: tempfile::TempDir,
    generated: tempfile::TempDir,
    out: tempfile::TempDir,
    stems: Vec<String>,
}

fn corpus(n: usize) -> Corpus {
    let c = Corpus {
        reference: tempfile::tempdir().unwrap(),
        generated: tempfile::tempdir().unwrap(),
        out: tempfile::tempdir().unwrap(),
        stems: Vec::new(),
    };
    let stems = write_pair_corpus(c.reference.path(), c.generated.path(), n);
    Corpus { stems, ..c }
}

#[test]
fn feature_projection_and_columns() {
    let c = corpus(3);
    let o = cloneval(&[
        "evaluate",
        "--reference-dir",
        p(c.reference.path()),
        "--generated-dir",
        p(c.generated.path()),
        "--output-dir",
        p(c.out.path()),
        "--no-embedding",
        "--features",
        "rms,mel_spectrogram",
        "--workers",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(c.out.path().join("details.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "pair_id,reference_file,generated_file,emotion,mel_spectrogram,rms,flags"
    );
    assert_eq!(csv.lines().count(), 4);
    let out = stdout(&o);
    assert!(out.contains("evaluated 3 pairs"), "{out}");
    assert!(out.contains("rms") && !out.contains("embedding"), "{out}");
}

#[test]
fn identity_with_precomputed_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let mut entries = BTreeMap::new();
    for (stem, x) in identity_signals().into_iter().take(4) {
        write_wav(&dir.path().join(format!("{stem}.wav")), x, RATE);
        entries.insert(stem.clone(), fake_embedding(&stem, 16));
    }
    let manifest = out.path().join("emb.json");
    write_embeddings(&manifest, &entries);
    let o = cloneval(&[
        "evaluate",
        "--reference-dir",
        p(dir.path()),
        "--generated-dir",
        p(dir.path()),
        "--output-dir",
        p(out.path()),
        "--embeddings-ref",
        p(&manifest),
        "--embeddings-gen",
        p(&manifest),
        "--expected-dim",
        "16",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(
        text.lines()
            .any(|l| l.starts_with("embedding") && l.ends_with(" 1.000000")),
        "{text}"
    );

    let o = cloneval(&[
        "evaluate",
        "--reference-dir",
        p(dir.path()),
        "--generated-dir",
        p(dir.path()),
        "--output-dir",
        p(out.path()),
        "--embeddings-ref",
        p(&manifest),
        "--embeddings-gen",
        p(&manifest),
        "--expected-dim",
        "512",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("dimension"), "{}", stderr(&o));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let c = corpus(1);
    let (r, g, out) = (
        p(c.reference.path()),
        p(c.generated.path()),
        p(c.out.path()),
    );
    let m = tiny_model();
    let cases: Vec<Vec<&str>> = vec![
        vec![
            "evaluate",
            "--reference-dir",
            r,
            "--generated-dir",
            g,
            "--output-dir",
            out,
        ],
        vec![
            "evaluate",
            "--reference-dir",
            r,
            "--generated-dir",
            g,
            "--output-dir",
            out,
            "--no-embedding",
            "--embedding-model",
            p(&m),
        ],
        vec![
            "evaluate",
            "--reference-dir",
            r,
            "--generated-dir",
            g,
            "--output-dir",
            out,
            "--embeddings-gen",
            "x.json",
        ],
        vec![
            "evaluate",
            "--reference-dir",
            r,
            "--generated-dir",
            g,
            "--output-dir",
            out,
            "--no-embedding",
            "--features",
            "mfcc",
        ],
        vec![
            "evaluate",
            "--reference-dir",
            r,
            "--generated-dir",
            g,
            "--output-dir",
            out,
            "--no-embedding",
            "--features",
            "none",
        ],
        vec![
            "evaluate",
            "--reference-dir",
            r,
            "--generated-dir",
            g,
            "--output-dir",
            out,
            "--no-embedding",
            "--emotions",
            "maybe",
        ],
        vec![
            "evaluate",
            "--reference-dir",
            "/nonexistent/ref",
            "--generated-dir",
            g,
            "--output-dir",
            out,
            "--no-embedding",
        ],
        vec!["prompts", "--manifest", "m.tsv", "--out", "o.tsv"],
    ];
    for args in cases {
        let o = cloneval(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn alias_table_from_environment() {
    let c = corpus(7);
    let table = c.out.path().join("aliases.json");
    std::fs::write(&table, r#"{"aliases": {"plain": "neutral"}}"#).unwrap();
    let run = |env: Option<&Path>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_cloneval"));
        cmd.args([
            "evaluate",
            "--reference-dir",
            p(c.reference.path()),
            "--generated-dir",
            p(c.generated.path()),
            "--output-dir",
            p(c.out.path()),
            "--no-embedding",
            "--features",
            "rms",
        ]);
        cmd.env_remove("CLONEVAL_ALIAS_TABLE");
        if let Some(t) = env {
            cmd.env("CLONEVAL_ALIAS_TABLE", t);
        }
        cmd.output().unwrap()
    };
    let summary = || -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(c.out.path().join("summary.json")).unwrap())
            .unwrap()
    };
    assert_eq!(code(&run(None)), 0);
    assert_eq!(summary()["counts"]["unknown"], 1);
    assert_eq!(code(&run(Some(&table))), 0);
    assert_eq!(summary()["counts"]["neutral"], 2);
    assert!(summary()["counts"].get("unknown").is_none());

    std::fs::write(&table, r#"{"aliasses": {}}"#).unwrap();
    let o = run(Some(&table));
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn run_failures_exit_1() {
    let c = corpus(1);
    let empty = tempfile::tempdir().unwrap();
    let o = cloneval(&[
        "evaluate",
        "--reference-dir",
        p(c.reference.path()),
        "--generated-dir",
        p(empty.path()),
        "--output-dir",
        p(c.out.path()),
        "--no-embedding",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no file stems match"), "{}", stderr(&o));

    let bogus = c.out.path().join("bogus.onnx");
    std::fs::write(&bogus, b"definitely not protobuf").unwrap();
    let o = cloneval(&[
        "evaluate",
        "--reference-dir",
        p(c.reference.path()),
        "--generated-dir",
        p(c.generated.path()),
        "--output-dir",
        p(c.out.path()),
        "--embedding-model",
        p(&bogus),
    ]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));

    std::fs::write(
        c.generated.path().join(format!("{}.wav", c.stems[0])),
        b"junk",
    )
    .unwrap();
    let o = cloneval(&[
        "evaluate",
        "--reference-dir",
        p(c.reference.path()),
        "--generated-dir",
        p(c.generated.path()),
        "--output-dir",
        p(c.out.path()),
        "--no-embedding",
    ]);
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).contains("all 1 pairs failed") || stderr(&o).contains("failed"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn embed_then_evaluate_with_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    for (stem, x) in identity_signals().into_iter().take(3) {
        write_wav(&dir.path().join(format!("{stem}.wav")), x, RATE);
    }
    let model = tiny_model();
    let json = out.path().join("emb.json");
    let o = cloneval(&[
        "embed",
        "--input-dir",
        p(dir.path()),
        "--model",
        p(&model),
        "--out",
        p(&json),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let first = std::fs::read(&json).unwrap();
    let parsed: BTreeMap<String, Vec<f64>> = serde_json::from_slice(&first).unwrap();
    assert_eq!(parsed.len(), 3);
    assert!(parsed.values().all(|v| v.len() == 6));
    let o = cloneval(&[
        "embed",
        "--input-dir",
        p(dir.path()),
        "--model",
        p(&model),
        "--out",
        p(&json),
        "--workers",
        "3",
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(&json).unwrap(), first);

    let o = cloneval(&[
        "evaluate",
        "--reference-dir",
        p(dir.path()),
        "--generated-dir",
        p(dir.path()),
        "--output-dir",
        p(out.path()),
        "--embedding-model",
        p(&model),
        "--features",
        "pitch",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(
        summary["config"]["embedding_backend"],
        "model:tiny_encoder.onnx"
    );
    assert_eq!(summary["config"]["embedding_dim"], 6);
    assert_eq!(summary["overall"]["embedding"], 1.0);

    let empty = tempfile::tempdir().unwrap();
    let o = cloneval(&[
        "embed",
        "--input-dir",
        p(empty.path()),
        "--model",
        p(&model),
        "--out",
        p(&json),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no audio files"), "{}", stderr(&o));
}

#[test]
fn prompts_command() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.tsv");
    std::fs::write(
        &manifest,
        "a\tFirst line.\nb\tSecond line.\nc\tThird line.\n",
    )
    .unwrap();
    let out = dir.path().join("assigned.tsv");
    let o = cloneval(&[
        "prompts",
        "--manifest",
        p(&manifest),
        "--seed",
        "9",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let first = std::fs::read_to_string(&out).unwrap();
    assert_eq!(first.lines().count(), 3);
    for line in first.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_ne!(cols[0], cols[1]);
    }
    cloneval(&[
        "prompts",
        "--manifest",
        p(&manifest),
        "--seed",
        "9",
        "--out",
        p(&out),
    ]);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), first);

    std::fs::write(&manifest, "only\tOne sample.\n").unwrap();
    let o = cloneval(&[
        "prompts",
        "--manifest",
        p(&manifest),
        "--seed",
        "9",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 1);
}
