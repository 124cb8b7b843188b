use std::path::{Path, PathBuf};
use std::process::Command;

fn micro(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/micro").join(name)
}

fn run(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_seldkit")).args(args).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Runs every stage of the micro pipeline under `root`; returns the evaluate scores path.
fn pipeline(root: &Path) -> PathBuf {
    let p = |s: &str| root.join(s).to_str().unwrap().to_string();
    let cfg = |s: &str| micro(s).to_str().unwrap().to_string();
    let manifest = p("data/manifest.toml");
    run(&["synth-scenes", "--config", &cfg("scenes.toml"), "--out", &p("data")]);
    run(&["train-ei", "--config", &cfg("train_ei.toml"), "--dataset", &manifest, "--out", &p("ei")]);
    run(&["meta-train", "--config", &cfg("meta_train.toml"), "--dataset", &manifest, "--checkpoint", &p("ei/model.ckpt"), "--out", &p("meta")]);
    let ck = p("meta/model.ckpt");
    run(&["adapt", "--config", &cfg("adapt.toml"), "--dataset", &manifest, "--checkpoint", &ck, "--out", &p("adapt")]);
    run(&["evaluate", "--config", &cfg("evaluate.toml"), "--dataset", &manifest, "--checkpoint", &ck, "--out", &p("eval")]);
    run(&["analyze", "--config", &cfg("analyze.toml"), "--dataset", &manifest, "--checkpoint", &ck, "--out", &p("analyze")]);
    root.join("eval/scores.csv")
}

#[test]
fn micro_pipeline_is_complete_and_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = pipeline(a.path());
    let text = std::fs::read_to_string(&sa).unwrap();
    assert!(text.starts_with("room,class,er20,f20,le_cd_deg,lr_cd,e_seld\n"));
    assert!(text.contains("\nmacro,all,"));
    for f in ["data/provenance.toml", "ei/model.ckpt", "meta/meta_log.csv", "adapt/adapt_log.csv", "analyze/similarity.csv"] {
        assert!(a.path().join(f).exists(), "{f}");
    }
    let prov = std::fs::read_to_string(a.path().join("meta/provenance.toml")).unwrap();
    assert!(prov.contains("seed = 7") && prov.contains("init = "));

    let sb = pipeline(b.path());
    assert_eq!(std::fs::read(&sa).unwrap(), std::fs::read(&sb).unwrap());
    for f in ["ei/model.ckpt", "meta/model.ckpt", "meta/meta_log.csv", "adapt/adapted.ckpt", "data/room1/room1_0003.wav"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }

    // predictions identical to the references score perfectly
    let cfg = a.path().join("perfect.toml");
    std::fs::write(&cfg, "predictions = \"data\"\n[dataset]\nmanifest = \"data/manifest.toml\"\n").unwrap();
    let out = a.path().join("perfect");
    run(&["evaluate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let scores = std::fs::read_to_string(out.join("scores.csv")).unwrap();
    let last = scores.lines().last().unwrap();
    assert_eq!(last, "macro,all,0.000000,1.000000,0.000000,1.000000,0.000000");
}

#[test]
fn errors_map_to_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\nunknown_field = 3\n").unwrap();
    let code = |args: &[&str]| Command::new(env!("CARGO_BIN_EXE_seldkit")).args(args).output().unwrap().status.code();
    let out = d.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(code(&["train-ei", "--config", bad.to_str().unwrap(), "--out", out]), Some(2));
    let cfg = micro("adapt.toml");
    let missing = d.path().join("none.toml");
    assert_eq!(
        code(&["adapt", "--config", cfg.to_str().unwrap(), "--dataset", missing.to_str().unwrap(), "--out", out]),
        Some(3)
    );
}
