use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn avse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avse"))
        .args(args)
        .env("AVSE_THREADS", "1")
        .output()
        .expect("spawn avse")
}

fn ok(args: &[&str]) -> Output {
    let out = avse(args);
    assert!(
        out.status.success(),
        "avse {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn r1(report: &Value) -> f64 {
    report["report"]["text_retrieval"]["r1"].as_f64().unwrap()
}

#[test]
fn no_arguments_prints_usage_and_exits_one() {
    let out = avse(&[]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage"));
}

#[test]
fn unknown_subcommand_and_flag_exit_one() {
    assert_eq!(avse(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(avse(&["sample", "--seed", "1", "--nope"]).status.code(), Some(1));
}

#[test]
fn synth_train_embed_eval_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--images", "200", "--caps", "5", "--seed", "7", "--out", &p(d, "data.bin")]);
    assert!(d.join("data.gt.json").exists());
    ok(&[
        "train", "--data", &p(d, "data.bin"), "--out", &p(d, "ckpt.bin"), "--log", &p(d, "losses.csv"), "--seed", "7",
    ]);
    let log = std::fs::read_to_string(d.join("losses.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("step,l_m,l_reg,total,lr"));
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(f[1] + f[2], f[3]);
    }
    ok(&[
        "embed", "--ckpt", &p(d, "ckpt.bin"), "--data", &p(d, "data.bin"),
        "--images-out", &p(d, "imgs.bin"), "--texts-out", &p(d, "txts.bin"), "--seed", "3",
    ]);
    for method in ["aeom", "cosine"] {
        ok(&[
            "eval", "--index", &p(d, "imgs.bin"), "--queries", &p(d, "txts.bin"), "--gt", &p(d, "data.gt.json"),
            "--protocol", "full", "--method", method, "--out", &p(d, &format!("{method}.json")),
        ]);
    }
    let aeom: Value = serde_json::from_slice(&std::fs::read(d.join("aeom.json")).unwrap()).unwrap();
    let cosine: Value = serde_json::from_slice(&std::fs::read(d.join("cosine.json")).unwrap()).unwrap();
    assert_eq!(aeom["method"], "aeom");
    assert_eq!(cosine["method"], "cosine");
    assert_eq!(aeom["images"], cosine["images"]);
    assert_eq!(aeom["queries"], 1000);
    for report in [&aeom, &cosine] {
        let t = &report["report"]["text_retrieval"];
        assert!(t["r1"].as_f64().unwrap() <= t["r5"].as_f64().unwrap());
        assert!(t["r5"].as_f64().unwrap() <= t["r10"].as_f64().unwrap());
    }
    assert!(r1(&aeom) > 20.0, "trained model should beat chance by far: {}", r1(&aeom));

    ok(&[
        "eval", "--index", &p(d, "imgs.bin"), "--queries", &p(d, "txts.bin"), "--gt", &p(d, "data.gt.json"),
        "--protocol", "5fold", "--method", "aeom", "--out", &p(d, "fold.json"),
    ]);
    let fold: Value = serde_json::from_slice(&std::fs::read(d.join("fold.json")).unwrap()).unwrap();
    assert_eq!(fold["protocol"], "five_fold_1k");
}

#[test]
fn corrupted_index_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--images", "20", "--caps", "2", "--seed", "1", "--out", &p(d, "data.bin")]);
    ok(&["train", "--data", &p(d, "data.bin"), "--out", &p(d, "ckpt.bin"), "--seed", "1"]);
    ok(&[
        "embed", "--ckpt", &p(d, "ckpt.bin"), "--data", &p(d, "data.bin"),
        "--images-out", &p(d, "imgs.bin"), "--texts-out", &p(d, "txts.bin"), "--seed", "1",
    ]);
    let mut bytes = std::fs::read(d.join("imgs.bin")).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    std::fs::write(d.join("imgs.bin"), bytes).unwrap();
    let out = avse(&[
        "eval", "--index", &p(d, "imgs.bin"), "--queries", &p(d, "txts.bin"), "--gt", &p(d, "data.gt.json"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("imgs.bin"));
}

#[test]
fn sample_writes_plan_and_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let plan = p(dir.path(), "plan.json");
    ok(&["sample", "--grid", "6x6", "--alpha", "0.5", "--groups", "2", "--group-size", "9", "--seed", "4", "--out", &plan]);
    let doc: Value = serde_json::from_slice(&std::fs::read(&plan).unwrap()).unwrap();
    assert_eq!(doc["groups"].as_array().unwrap().len(), 2);
    assert_eq!(doc["groups"][0].as_array().unwrap().len(), 9);
    let out = avse(&["sample", "--grid", "2x2", "--group-size", "9", "--seed", "4"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_and_bench_report() {
    let out = ok(&["gradcheck", "--seed", "2", "--batch", "4", "--dims", "3,4,2,2", "--h", "1e-4"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("max relative error"));
    assert!(text.contains("flagged"));

    let dir = tempfile::tempdir().unwrap();
    let csv = p(dir.path(), "bench.csv");
    ok(&[
        "bench", "--counts", "10,100", "--methods", "aeom,cosine,xattn", "--reps", "1", "--seed", "0",
        "--d1", "16", "--d2", "8", "--regions", "4", "--words", "3", "--out", &csv,
    ]);
    let body = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(body.lines().next(), Some("method,count,median_ms,ops"));
    assert_eq!(body.lines().count(), 7);
    assert!(body.contains("aeom,100,"));
}
