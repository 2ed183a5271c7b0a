use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdanet::data::synthetic;
use sdanet::inference::decode_density;

fn sdanet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdanet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Tiny dataset plus a short run configuration next to it.
fn fixture(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let train: Vec<_> = (0..2)
        .map(|_| synthetic::dot_crowd(&mut rng, 24, 3..=6))
        .collect();
    let test: Vec<_> = (0..1)
        .map(|_| synthetic::dot_crowd(&mut rng, 24, 3..=6))
        .collect();
    synthetic::write_dataset(&dir.join("data"), &train, &test).unwrap();
    let cfg = serde_json::json!({
        "data": "data/index.json",
        "steps": 3,
        "seed": 5,
        "model": {
            "lfe_branch_channels": 1,
            "feature_channels": 4,
            "hfe_layer_channels": 4,
            "amg_hidden_channels": 4,
            "fine_hidden_channels": 4
        }
    });
    std::fs::write(dir.join("run.json"), cfg.to_string()).unwrap();
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_eval_predict_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path());
    let out = tmp.path().join("run");
    let cfg = tmp.path().join("run.json");
    let t = sdanet(&["train", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(code(&t), 0, "{}", String::from_utf8_lossy(&t.stderr));
    assert!(stdout(&t).contains("train MAE"));
    let ckpt = out.join("final.ckpt");
    assert!(ckpt.exists());
    assert!(out.join("train_log.ndjson").exists());
    assert!(out.join("config.json").exists());

    let report = tmp.path().join("report.json");
    let index = tmp.path().join("data/index.json");
    let e = sdanet(&[
        "eval",
        "--checkpoint",
        path(&ckpt),
        "--data",
        path(&index),
        "--report",
        path(&report),
        "--split",
        "train",
    ]);
    assert_eq!(code(&e), 0, "{}", String::from_utf8_lossy(&e.stderr));
    let summary: serde_json::Value = serde_json::from_str(stdout(&e).trim()).unwrap();
    assert_eq!(summary["total"], 2);
    let full: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(full["rows"].as_array().unwrap().len(), 2);
    assert_eq!(full["metrics"]["mae"], summary["mae"]);

    let heat = tmp.path().join("heat.png");
    let raw = tmp.path().join("density.bin");
    let p = sdanet(&[
        "predict",
        "--checkpoint",
        path(&ckpt),
        "--image",
        path(&tmp.path().join("data/train_000.png")),
        "--heatmap",
        path(&heat),
        "--density-out",
        path(&raw),
    ]);
    assert_eq!(code(&p), 0, "{}", String::from_utf8_lossy(&p.stderr));
    let count: f64 = stdout(&p).trim().parse().unwrap();
    let density = decode_density(&std::fs::read(&raw).unwrap()).unwrap();
    assert_eq!((density.height(), density.width()), (24, 24));
    assert!((density.count() - count).abs() < 1e-3);
    let img = image::open(&heat).unwrap();
    assert_eq!((img.width(), img.height()), (24, 24));
}

#[test]
fn ablation_flags_train() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path());
    let cfg = tmp.path().join("run.json");
    for flag in ["--no-amg", "--no-dense", "--no-refine"] {
        let out = tmp.path().join(flag.trim_start_matches('-'));
        let t = sdanet(&[
            "train",
            "--config",
            path(&cfg),
            "--out",
            path(&out),
            "--seed",
            "9",
            flag,
        ]);
        assert_eq!(
            code(&t),
            0,
            "{flag}: {}",
            String::from_utf8_lossy(&t.stderr)
        );
        let written: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap())
                .unwrap();
        assert_eq!(written["seed"], 9);
        let key = match flag {
            "--no-amg" => "use_amg",
            "--no-dense" => "use_dense",
            _ => "use_refine",
        };
        assert_eq!(written["model"][key], false);
        let e = sdanet(&[
            "eval",
            "--checkpoint",
            path(&out.join("final.ckpt")),
            "--data",
            path(&tmp.path().join("data/index.json")),
        ]);
        assert_eq!(
            code(&e),
            0,
            "{flag}: {}",
            String::from_utf8_lossy(&e.stderr)
        );
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path());
    assert_eq!(code(&sdanet(&[])), 1);
    assert_eq!(code(&sdanet(&["train"])), 1);
    assert_eq!(code(&sdanet(&["frobnicate"])), 1);
    assert_eq!(code(&sdanet(&["--help"])), 0);

    let bad_cfg = tmp.path().join("bad.json");
    std::fs::write(&bad_cfg, r#"{"data": "data/index.json", "steps": 0}"#).unwrap();
    assert_eq!(code(&sdanet(&["train", "--config", path(&bad_cfg)])), 1);

    let missing_data = tmp.path().join("missing.json");
    std::fs::write(
        &missing_data,
        r#"{"data": "nowhere/index.json", "steps": 2}"#,
    )
    .unwrap();
    assert_eq!(
        code(&sdanet(&["train", "--config", path(&missing_data)])),
        2
    );

    let junk = tmp.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let p = sdanet(&[
        "predict",
        "--checkpoint",
        path(&junk),
        "--image",
        path(&tmp.path().join("data/train_000.png")),
    ]);
    assert_eq!(code(&p), 2);

    let nan_cfg = tmp.path().join("nan.json");
    std::fs::write(
        &nan_cfg,
        r#"{"data": "data/index.json", "steps": 2, "lr": 1e308, "loss": {"m_norm": 1e-308},
            "model": {"lfe_branch_channels": 1, "feature_channels": 4, "hfe_layer_channels": 4,
                      "amg_hidden_channels": 4, "fine_hidden_channels": 4}}"#,
    )
    .unwrap();
    let t = sdanet(&[
        "train",
        "--config",
        path(&nan_cfg),
        "--out",
        path(&tmp.path().join("nan")),
    ]);
    assert_eq!(code(&t), 3, "{}", String::from_utf8_lossy(&t.stderr));
}
