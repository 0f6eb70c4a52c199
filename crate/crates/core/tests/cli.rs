mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{tiny_model_config, tiny_train_config};

fn cornerstr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cornerstr")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    stdout(&cornerstr(&["synth", "--count", "6", "--seed", "1", "--out", p(&data)]));
    let manifest = data.join("manifest.tsv");
    assert_eq!(fs::read_to_string(&manifest).unwrap().lines().count(), 6);

    let list = stdout(&cornerstr(&["corners", "--image", p(&data.join("000000.png")), "--map", p(&d.join("c.pgm"))]));
    assert!(list.lines().all(|l| l.split_whitespace().count() == 3));
    assert!(fs::read(d.join("c.pgm")).unwrap().starts_with(b"P5"));

    fs::write(d.join("model.json"), tiny_model_config().to_json()).unwrap();
    fs::write(d.join("train.json"), tiny_train_config(2).to_json()).unwrap();
    let run = d.join("run");
    let ckpt = stdout(&cornerstr(&[
        "train",
        "--model-config",
        p(&d.join("model.json")),
        "--train-config",
        p(&d.join("train.json")),
        "--data",
        "synth:count=8,seed=2",
        "--out",
        p(&run),
        "--fusion-mode",
        "corner_kv",
    ]));
    assert!(run.join("metrics.tsv").exists());

    let kv = stdout(&cornerstr(&[
        "eval",
        "--checkpoint",
        ckpt.trim(),
        "--data",
        p(&manifest),
        "--kv",
        "--predictions",
        p(&d.join("preds.tsv")),
    ]));
    assert!(kv.contains("n_samples=6"), "{kv}");
    assert_eq!(fs::read_to_string(d.join("preds.tsv")).unwrap().lines().count(), 6);
}

#[test]
fn failures_use_distinct_exit_codes() {
    let o = cornerstr(&["eval", "--checkpoint", "/nonexistent.ckpt", "--data", "synth:count=1,seed=0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    assert_eq!(cornerstr(&["synth", "--count", "1"]).status.code(), Some(2));
}
