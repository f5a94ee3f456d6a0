//! The `viddiff` binary on the synthetic benchmark.

use std::path::Path;
use std::process::{Command, Output};

fn viddiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viddiff")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn ingest_differ_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ingest = viddiff(&["--data", p(&data), "--out", p(&dir.path().join("ingest")), "ingest", "--synthetic"]);
    assert!(ingest.status.success(), "{ingest:?}");
    assert!(stdout(&ingest).contains("manifest is valid"));

    let run = dir.path().join("run");
    let differ = viddiff(&["--data", p(&data), "--out", p(&run), "--splits", "easy,hard", "differ", "--n-frames", "3"]);
    assert!(differ.status.success(), "{differ:?}");
    let out = stdout(&differ);
    assert!(out.contains("| easy |") && out.contains("| hard |") && !out.contains("| medium |"), "{out}");

    let eval = viddiff(&[
        "--out",
        p(&dir.path().join("eval")),
        "eval",
        "--preds",
        p(&run.join("predictions.jsonl")),
        "--gt",
        p(&data.join("manifest.jsonl")),
        "--splits",
        "easy,hard",
    ]);
    assert!(eval.status.success(), "{eval:?}");
    assert!(stdout(&eval).contains("| difference | n |"));

    let report = viddiff(&["report", p(&run), p(&dir.path().join("eval"))]);
    assert!(report.status.success(), "{report:?}");
    assert!(stdout(&report).contains("| overall |"));
}

#[test]
fn ablate_orders_frame_sources() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(viddiff(&["--data", p(&data), "--out", p(&dir.path().join("i")), "ingest", "--synthetic"]).status.success());
    let root = dir.path().join("ablate");
    let o = viddiff(&["--data", p(&data), "--out", p(&root), "ablate"]);
    assert!(o.status.success(), "{o:?}");
    assert!(root.join("ablation.md").exists());
    let acc = |mode: &str| {
        let r = viddiff::report::EvalReport::load(root.join(mode)).unwrap();
        r.cell(None).value.unwrap()
    };
    assert!(acc("oracle") >= acc("viterbi"));
    assert!(acc("viterbi") > acc("random"));
}

#[test]
fn hard_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = viddiff(&["--data", p(&dir.path().join("nothing")), "--out", p(dir.path()), "differ"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));

    let bad_provider = viddiff(&["--data", p(dir.path()), "baseline", "--provider", "nope"]);
    assert!(!bad_provider.status.success());
}

#[test]
fn partial_failures_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(viddiff(&["--data", p(&data), "--out", p(&dir.path().join("i")), "ingest", "--synthetic"]).status.success());
    std::fs::remove_dir_all(data.join("synth_1/synth_1_p0_b")).unwrap();
    let o = viddiff(&["--data", p(&data), "--out", p(&dir.path().join("run")), "differ"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("failed synth_1_p0"), "{}", stdout(&o));
}
