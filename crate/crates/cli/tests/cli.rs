use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny")
}

fn hazeforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hazeforge"))
        .args(args)
        .env_remove("HAZEFORGE_SEED")
        .env_remove("HAZEFORGE_ENDPOINT")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_args<'a>(image: &'a str, depth: &'a str, out: &'a str) -> Vec<&'a str> {
    vec!["synth", "--image", image, "--depth", depth, "--out", out]
}

#[test]
fn beta_zero_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture();
    let (img, depth, out) = (fx.join("images/frame_0.png"), fx.join("depth/frame_0.pfm"), dir.path().join("o.png"));
    let mut args = synth_args(s(&img), s(&depth), s(&out));
    args.extend(["--beta", "0"]);
    let o = hazeforge(&args);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("β > 0"), "{err}");
    assert!(!out.exists());
}

#[test]
fn unknown_flag_exits_2_with_usage() {
    let o = hazeforge(&["batch", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn synth_is_deterministic_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture();
    let img = fx.join("images/frame_1.png");
    let depth = fx.join("depth/frame_1.pfm");
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let mut args = synth_args(s(&img), s(&depth), s(&out));
        args.extend(["--seed", seed]);
        let o = hazeforge(&args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out).unwrap()
    };
    let a = run("a.png", "11");
    let b = run("b.png", "11");
    let c = run("c.png", "12");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn seed_flag_beats_env_beats_config() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture();
    let img = fx.join("images/frame_2.png");
    let depth = fx.join("depth/frame_2.f32");
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 5}"#).unwrap();
    let params = |extra: &[&str], env: Option<&str>| {
        let out = dir.path().join("p.png");
        let mut args = synth_args(s(&img), s(&depth), s(&out));
        args.extend_from_slice(extra);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_hazeforge"));
        cmd.args(&args).env_remove("HAZEFORGE_SEED");
        if let Some(v) = env {
            cmd.env("HAZEFORGE_SEED", v);
        }
        let o = cmd.output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        v["applied_params"].clone()
    };
    let c = s(&cfg);
    let seed5 = params(&["--seed", "5"], None);
    let seed6 = params(&["--seed", "6"], None);
    let seed7 = params(&["--seed", "7"], None);
    assert_ne!(seed5, seed6);
    assert_eq!(params(&["--config", c], None), seed5);
    assert_eq!(params(&["--config", c], Some("6")), seed6);
    assert_eq!(params(&["--config", c, "--seed", "7"], Some("6")), seed7);
}

#[test]
fn explicit_params_override_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture();
    let out = dir.path().join("o.png");
    let img = fx.join("images/frame_3.png");
    let depth = fx.join("depth/frame_3.png");
    let mut args = synth_args(s(&img), s(&depth), s(&out));
    args.extend(["--beta", "2.5", "--airlight", "180"]);
    let o = hazeforge(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["applied_params"]["beta"], 2.5);
    assert_eq!(v["applied_params"]["airlight"], 180.0);
    assert_eq!(v["mode"], "depth_based");
}

#[test]
fn batch_on_bundled_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture();
    let out = dir.path().join("out");
    let o = hazeforge(&[
        "batch",
        "--images",
        s(&fx.join("images")),
        "--depth-dir",
        s(&fx.join("depth")),
        "--labels",
        s(&fx.join("labels")),
        "--out",
        s(&out),
        "--seed",
        "3",
        "--workers",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let pngs: Vec<_> = ["clean", "hazy"]
        .iter()
        .flat_map(|d| fs::read_dir(out.join(d)).unwrap())
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    assert_eq!(pngs.len(), 8);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["records"].as_array().unwrap().len(), 8);
    assert!(!out.join("skipped.txt").exists());
}

#[test]
fn batch_bad_mix_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture();
    let o = hazeforge(&[
        "batch",
        "--images",
        s(&fx.join("images")),
        "--depth-dir",
        s(&fx.join("depth")),
        "--out",
        s(dir.path()),
        "--mix",
        "ratio=1.5",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn batch_with_broken_depth_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture();
    let depth = dir.path().join("depth");
    fs::create_dir_all(&depth).unwrap();
    for e in fs::read_dir(fx.join("depth")).unwrap() {
        let p = e.unwrap().path();
        fs::copy(&p, depth.join(p.file_name().unwrap())).unwrap();
    }
    fs::write(depth.join("frame_2.f32"), b"DPT1 truncated").unwrap();
    let out = dir.path().join("out");
    let o = hazeforge(&[
        "batch",
        "--images",
        s(&fx.join("images")),
        "--depth-dir",
        s(&depth),
        "--out",
        s(&out),
        "--mix",
        "hazy-only",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("frame_2"));
    assert_eq!(fs::read_dir(out.join("hazy")).unwrap().count(), 3);
}

#[test]
fn eval_writes_json_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let truths = dir.path().join("truths.txt");
    let dets = dir.path().join("dets.txt");
    fs::write(&truths, "a 0 0 0 10 10\na 1 20 20 30 30\n").unwrap();
    fs::write(&dets, "a 0 0 0 10 10 0.9\na 1 50 50 60 60 0.8\n").unwrap();
    let out = dir.path().join("report.json");
    let o = hazeforge(&["eval", "--detections", s(&dets), "--truths", s(&truths), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(report["map"], 0.5);
    assert_eq!(report["precision"], 0.5);
    assert_eq!(report["recall"], 0.5);
    assert!(!o.stdout.is_empty());

    let bad = hazeforge(&["eval", "--detections", s(&dets), "--truths", s(&truths), "--iou-threshold", "0"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn every_subcommand_documents_defaults() {
    for sub in ["synth", "batch", "serve", "eval"] {
        let o = hazeforge(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0));
        let help = String::from_utf8_lossy(&o.stdout);
        for line in help.lines().filter(|l| l.trim_start().starts_with("--") && !l.contains("--help")) {
            let required = ["--image ", "--depth ", "--out ", "--images ", "--depth-dir ", "--detections ", "--truths ", "--config "];
            if required.iter().any(|r| line.trim_start().starts_with(r)) {
                continue;
            }
            assert!(line.contains("[default:"), "{sub}: {line}");
        }
    }
}
