//! End-to-end tests of the `pagtn` binary: exit codes, output formats,
//! checkpoint/eval agreement, and the attention-mask dump.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pagtn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn tmpdir() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_regression_csv(dir: &Path, count: usize, seed: u64) -> PathBuf {
    let csv = dir.join(format!("reg{count}_{seed}.csv"));
    let out = run(&[
        "gen-data",
        "--kind",
        "regression",
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        path_str(&csv),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    csv
}

#[test]
fn usage_error_exits_one() {
    let out = run(&["train", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn missing_file_exits_two() {
    let out = run(&[
        "train",
        "--input",
        "/nonexistent/file.csv",
        "--target-col",
        "y",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn featurize_round_trip_and_empty_input() {
    let dir = tmpdir();
    let csv = gen_regression_csv(dir.path(), 12, 3);
    let container = dir.path().join("features.pgtn");
    let out = run(&[
        "featurize",
        "--input",
        path_str(&csv),
        "--out",
        path_str(&container),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let feats = pagtn_core::checkpoint::read_features(&container).unwrap();
    assert_eq!(feats.len(), 12);
    for f in &feats {
        assert_eq!(f.node.rows as u32, f.n);
        assert_eq!(f.path.rows as u32, f.n * f.n);
    }

    // empty CSV (header only) must exit nonzero
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "smiles\n").unwrap();
    let out = run(&[
        "featurize",
        "--input",
        path_str(&empty),
        "--out",
        path_str(&dir.path().join("nope.pgtn")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // partial failure is reported per row but still succeeds
    let mixed = dir.path().join("mixed.csv");
    std::fs::write(&mixed, "smiles\nCC\nnot_a_molecule\nCCO\n").unwrap();
    let partial = dir.path().join("partial.pgtn");
    let out = run(&[
        "featurize",
        "--input",
        path_str(&mixed),
        "--out",
        path_str(&partial),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("row 1"));
    let feats = pagtn_core::checkpoint::read_features(&partial).unwrap();
    assert_eq!(feats.len(), 2);

    // all rows failing is an error
    let allbad = dir.path().join("allbad.csv");
    std::fs::write(&allbad, "smiles\nnope\nalso_nope\n").unwrap();
    let out = run(&[
        "featurize",
        "--input",
        path_str(&allbad),
        "--out",
        path_str(&dir.path().join("x.pgtn")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn small_train_args<'a>(csv: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "train",
        "--input",
        csv,
        "--target-col",
        "target",
        "--layers",
        "1",
        "--dim",
        "8",
        "--epochs",
        "4",
        "--seed",
        "7",
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn train_is_deterministic_and_metric_row_parses() {
    let dir = tmpdir();
    let csv = gen_regression_csv(dir.path(), 30, 5);
    let a = run(&small_train_args(path_str(&csv), &[]));
    let b = run(&small_train_args(path_str(&csv), &[]));
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b), "same seed must reproduce exactly");

    // metric row: "<name>  <metric>  <mean> ± <std>"
    let row = stdout(&a);
    let row = row.trim();
    let parts: Vec<&str> = row.split("  ").collect();
    assert_eq!(parts.len(), 3, "row was: {row}");
    assert_eq!(parts[1], "rmse");
    let mean_std: Vec<&str> = parts[2].split(" ± ").collect();
    assert_eq!(mean_std.len(), 2, "row was: {row}");
    for v in mean_std {
        let parsed: f64 = v.parse().expect("numeric field");
        assert!(parsed.is_finite());
        assert_eq!(v.split('.').nth(1).map(|f| f.len()), Some(3));
    }
}

#[test]
fn eval_reproduces_training_test_metric_exactly() {
    let dir = tmpdir();
    let csv = gen_regression_csv(dir.path(), 40, 11);
    let ckpt = dir.path().join("model.pgtn");
    let out = run(&small_train_args(
        path_str(&csv),
        &["--checkpoint-out", path_str(&ckpt)],
    ));
    assert!(out.status.success(), "{}", stderr(&out));

    // pull the reported fold test metric from stderr
    let err = stderr(&out);
    let test_line = err
        .lines()
        .find(|l| l.contains("test_rmse="))
        .expect("test metric line");
    let reported: f64 = test_line
        .split("test_rmse=")
        .nth(1)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();

    // rebuild the fold's test rows in order and evaluate the checkpoint
    let dataset = pagtn_core::training::load_csv(&csv, "smiles", &["target".to_string()]).unwrap();
    let fold = pagtn_core::training::make_folds(dataset.len(), 1, 7)
        .unwrap()
        .remove(0);
    let test_csv = dir.path().join("test_rows.csv");
    let mut content = String::from("smiles,target\n");
    for &i in &fold.test {
        let s = &dataset.samples[i];
        content.push_str(&format!("{},{}\n", s.smiles, s.targets[0]));
    }
    std::fs::write(&test_csv, content).unwrap();

    let out = run(&[
        "eval",
        "--checkpoint",
        path_str(&ckpt),
        "--input",
        path_str(&test_csv),
        "--target-col",
        "target",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let line = stdout(&out);
    let evaluated: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(
        (evaluated - reported).abs() < 5e-7,
        "eval {evaluated} vs training {reported}"
    );
}

#[test]
fn eval_rejects_garbage_and_wrong_layout() {
    let dir = tmpdir();
    let garbage = dir.path().join("bad.pgtn");
    std::fs::write(&garbage, b"PGTNxxxxyyyy").unwrap();
    let csv = gen_regression_csv(dir.path(), 12, 2);
    let out = run(&[
        "eval",
        "--checkpoint",
        path_str(&garbage),
        "--input",
        path_str(&csv),
        "--target-col",
        "target",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn attention_dump_distinguishes_local_from_global() {
    let dir = tmpdir();
    let chains = dir.path().join("chains.csv");
    let out = run(&[
        "gen-data",
        "--kind",
        "chains",
        "--count",
        "30",
        "--seed",
        "4",
        "--out",
        path_str(&chains),
    ]);
    assert!(out.status.success());
    // chains have no target column; train on a regression csv of chains
    let content = std::fs::read_to_string(&chains).unwrap();
    let labeled = dir.path().join("chains_labeled.csv");
    let mut rows = String::from("smiles,target\n");
    for line in content.lines().skip(1) {
        rows.push_str(&format!("{},{}\n", line, line.len()));
    }
    std::fs::write(&labeled, rows).unwrap();

    let dump_global = dir.path().join("alpha_global.txt");
    let dump_local = dir.path().join("alpha_local.txt");
    for (model, dump) in [("pagtn", &dump_global), ("pagtn-local", &dump_local)] {
        let out = run(&small_train_args(
            path_str(&labeled),
            &["--model", model, "--debug-attention", path_str(dump)],
        ));
        assert!(out.status.success(), "{}", stderr(&out));
    }

    let parse_dump = |path: &Path| -> (usize, Vec<Vec<f64>>) {
        let text = std::fs::read_to_string(path).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        let n: usize = header.split_whitespace().last().unwrap().parse().unwrap();
        let mut rows = Vec::new();
        for line in lines {
            if line.starts_with("layer") {
                continue;
            }
            rows.push(
                line.split_whitespace()
                    .map(|v| v.parse::<f64>().unwrap())
                    .collect(),
            );
        }
        (n, rows)
    };

    let (n_g, alpha_g) = parse_dump(&dump_global);
    let (n_l, alpha_l) = parse_dump(&dump_local);
    assert_eq!(n_g, n_l);
    // the dumped molecule is a chain, so distance(i, j) = |i - j|: the
    // local mask must zero pairs farther than d=3 while global attends
    let first_g = &alpha_g[..n_g];
    let first_l = &alpha_l[..n_l];
    let mut saw_far_pair = false;
    for i in 0..n_g {
        for j in 0..n_g {
            if (i as i64 - j as i64).abs() > 3 {
                saw_far_pair = true;
                assert_eq!(first_l[i][j], 0.0, "local must mask ({i},{j})");
                assert!(first_g[i][j] > 0.0, "global must attend ({i},{j})");
            }
        }
    }
    assert!(saw_far_pair, "chain too short to exercise the mask");
}

#[test]
fn ringtask_runs_and_rejects_single_ring_data() {
    let dir = tmpdir();
    let rings = dir.path().join("rings.csv");
    let out = run(&[
        "gen-data",
        "--kind",
        "ring",
        "--count",
        "30",
        "--seed",
        "6",
        "--out",
        path_str(&rings),
    ]);
    assert!(out.status.success());
    let pairs = dir.path().join("pairs.csv");
    let out = run(&[
        "ringtask",
        "--input",
        path_str(&rings),
        "--model",
        "pagtn",
        "--seed",
        "3",
        "--epochs",
        "2",
        "--layers",
        "1",
        "--dim",
        "8",
        "--pairs-out",
        path_str(&pairs),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let line = stdout(&out);
    assert!(line.starts_with("ringtask  pagtn  accuracy "), "{line}");
    let pairs_text = std::fs::read_to_string(&pairs).unwrap();
    assert!(pairs_text.starts_with("molecule_index,i,j,label\n"));
    assert!(pairs_text.lines().count() > 1);

    // single-ring molecules only: data error
    let single = dir.path().join("single.csv");
    std::fs::write(&single, "smiles\nc1ccccc1\nC1CC1\n").unwrap();
    let out = run(&["ringtask", "--input", path_str(&single), "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_exits_zero_and_prints_max_error() {
    let out = run(&["gradcheck", "--seed", "11"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("pagtn_end_to_end"));
    assert!(text.contains("max rel err overall"));
    for line in text.lines() {
        assert!(!line.contains("FAIL"), "{line}");
    }
}
