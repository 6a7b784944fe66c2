use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn desco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_desco")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = desco(args);
    assert!(
        out.status.success(),
        "desco {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 8] = ["--dims", "16,16,16", "--n-train", "3", "--n-annotated", "1", "--n-test", "1"];

fn synth(out: &Path, seed: &str) {
    let mut args = vec!["synth", "--seed", seed, "--out", s(out)];
    args.extend(SMALL);
    ok(&args);
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth(&a, "7");
    synth(&b, "7");
    synth(&c, "8");
    let (ta, tb, tc) = (tree(&a), tree(&b), tree(&c));
    assert!(ta.len() > 4);
    assert_eq!(ta, tb);
    assert_ne!(ta, tc);
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("synth.json");
    fs::write(&cfg, r#"{"dims": [16, 16, 16], "n_train": 2, "n_annotated": 1, "n_test": 1, "seed": 3, "noise_sigma": 0.1}"#).unwrap();
    let out = tmp.path().join("out");
    ok(&["synth", "--config", s(&cfg), "--seed", "5", "--n-test", "2", "--out", s(&out)]);
    let echoed: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("synth.config.json")).unwrap()).unwrap();
    let c = &echoed["config"];
    assert_eq!(c["seed"], 5);
    assert_eq!(c["n_test"], 2);
    assert_eq!(c["n_train"], 2);
    assert_eq!(c["noise_sigma"], 0.1);
    // Untouched keys fall back to defaults.
    assert_eq!(c["n_blobs"], 1);
    assert_eq!(echoed["provenance"]["seed"], 5);
    assert_eq!(echoed["provenance"]["command"], "synth");
}

#[test]
fn errors_are_one_machine_readable_line() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let out = desco(&["propagate", "--manifest", s(&missing), "--out", s(&tmp.path().join("o"))]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: kind=io msg=\""), "{err}");

    let out = desco(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: kind=usage msg="), "{err}");

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"n_train\": \"three\"}").unwrap();
    let out = desco(&["synth", "--config", s(&bad), "--out", s(&tmp.path().join("o2"))]);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: kind=format msg="), "{err}");
}

fn tiny_train_config(dir: &Path) -> PathBuf {
    let path = dir.join("train.json");
    let cfg = serde_json::json!({
        "train": {
            "schedule": {"total_iters": 12, "alpha_update_every": 4},
            "patch": [8, 8, 8],
            "channels": [2, 4, 4],
            "mc_passes": 2,
            "eval_every": 6,
            "inference": {"patch": [8, 8, 8], "strides": [8, 8, 8], "ensemble": true}
        }
    });
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn full_pipeline_runs_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = tiny_train_config(root);
    let run = |tag: &str| {
        let base = root.join(tag);
        let data = base.join("data");
        synth(&data, "7");
        let train_manifest = data.join("train.json");
        let test_manifest = data.join("test.json");
        let pseudo = base.join("pseudo");
        ok(&["propagate", "--manifest", s(&train_manifest), "--out", s(&pseudo)]);
        let train = base.join("train");
        ok(&[
            "train",
            "--config",
            s(&cfg),
            "--manifest",
            s(&train_manifest),
            "--val-manifest",
            s(&test_manifest),
            "--pseudo",
            s(&pseudo),
            "--out",
            s(&train),
        ]);
        let eval = base.join("eval");
        ok(&["eval", "--checkpoints", s(&train), "--manifest", s(&test_manifest), "--out", s(&eval)]);
        let analyze = base.join("analyze");
        ok(&["analyze", "--manifest", s(&test_manifest), "--pairs", "5", "--out", s(&analyze)]);
        let plots = base.join("plots");
        ok(&[
            "plot",
            "--history",
            s(&train.join("history.csv")),
            "--report",
            s(&eval.join("report.json")),
            "--out",
            s(&plots),
        ]);
        base
    };
    let a = run("a");

    let quality = fs::read_to_string(a.join("pseudo/quality.csv")).unwrap();
    assert!(quality.starts_with("volume,plane,slice,d,fg_area\n"));
    assert_eq!(quality.lines().count(), 1 + 2 * 16);
    let history = fs::read_to_string(a.join("train/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 13);
    for f in ["train/model_a.bin", "train/model_b.json", "train/config.json", "eval/report.csv", "analyze/hsic.csv"] {
        assert!(a.join(f).exists(), "{f}");
    }
    for f in ["validation.svg", "losses.svg", "schedules.svg", "overlap.svg", "distance.svg"] {
        assert!(fs::read_to_string(a.join("plots").join(f)).unwrap().contains("<svg"), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["provenance"]["command"], "eval");

    // Deleting intermediates and re-running reproduces them bit-exactly.
    let b = run("b");
    for f in ["pseudo/pseudo/case_000_img_a.raw", "pseudo/quality.csv", "train/history.csv", "train/model_a.bin", "eval/report.csv", "analyze/hsic_pairs.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn zero_cross_weight_matches_supervised_only_data() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = tiny_train_config(root);
    let data = root.join("data");
    synth(&data, "9");
    // Same manifest without the unlabelled volumes.
    let full: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("train.json")).unwrap()).unwrap();
    let labeled: Vec<serde_json::Value> = full["entries"].as_array().unwrap().iter().filter(|e| e["annotated"] == true).cloned().collect();
    let sup_manifest = data.join("labeled_only.json");
    fs::write(&sup_manifest, serde_json::json!({ "entries": labeled }).to_string()).unwrap();
    let train = |manifest: &Path, out: &Path| {
        ok(&["train", "--config", s(&cfg), "--lambda-oc", "0", "--manifest", s(manifest), "--out", s(out)]);
        fs::read(out.join("history.csv")).unwrap()
    };
    let with_unlabeled = train(&data.join("train.json"), &root.join("t1"));
    let supervised = train(&sup_manifest, &root.join("t2"));
    assert_eq!(with_unlabeled, supervised);
}
