use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn shufa<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shufa"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok<S: AsRef<std::ffi::OsStr> + std::fmt::Debug>(args: &[S]) -> String {
    let out = shufa(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TINY: &str = r#"{
  "synthesis": { "n_writers": 16, "chars_per_writer": 24, "image_size": 32 },
  "split": { "query_ways": 6 },
  "network": { "backbone": { "input_size": 32, "stage_widths": [4, 8], "tap_stages": [0, 1], "embed_dim": 16 },
               "attention": { "stage_widths": [4, 4] } },
  "ccnet": { "input_size": 32, "stage_widths": [4, 8], "tap_stages": [0, 1], "embed_dim": 16 },
  "ccnet_training": { "epochs": 2 },
  "train": { "total_batches": 6, "batch_triplets": 4, "checkpoint_every": 3 },
  "episodes": { "ways": 5, "shots": [5, 10], "n_episodes": 2, "probe_epochs": 3 },
  "baseline": { "epochs": 2 }
}"#;

fn write_config(dir: &Path) -> String {
    let mut v: serde_json::Value = serde_json::from_str(TINY).unwrap();
    v["output_dir"] = serde_json::Value::String(dir.join("out").to_string_lossy().into_owned());
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(shufa::<&str>(&[]).status.code(), Some(1));
    assert_eq!(shufa(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(shufa(&["baseline", "--arch", "alexnet"]).status.code(), Some(1));
    assert_eq!(shufa(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"train": {"batch_triplet": 3}}"#).unwrap();
    let out = shufa(&["split", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.batch_triplet"), "{err}");
}

#[test]
fn missing_inputs_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nothing");
    let code = shufa(&["split", "--output-dir", out.to_str().unwrap()]).status.code();
    assert_eq!(code, Some(2));
}

#[test]
fn emitted_config_reloads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&[
        "gen-data",
        "--config",
        &cfg,
        "--seed",
        "5",
        "--emit-config",
        a.to_str().unwrap(),
    ]);
    ok(&[
        "gen-data",
        "--config",
        a.to_str().unwrap(),
        "--emit-config",
        b.to_str().unwrap(),
    ]);
    assert_eq!(fs::read_to_string(&a).unwrap(), fs::read_to_string(&b).unwrap());
    assert!(fs::read_to_string(&a).unwrap().contains("\"seed\": 5"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    let c = ["--config", cfg.as_str()];
    let with = |sub: &[&str]| -> Vec<String> { sub.iter().chain(&c).map(|s| s.to_string()).collect() };

    ok(&with(&["gen-data"]));
    assert!(out.join("corpus/manifest.jsonl").is_file());
    ok(&with(&["split"]));
    for part in ["s1", "s2", "s_query"] {
        assert!(out.join(format!("split/{part}.jsonl")).is_file());
    }
    ok(&with(&["train-ccnet"]));
    let confusion = fs::read_to_string(out.join("ccnet/confusion.csv")).unwrap();
    assert!(confusion.starts_with("true,regular,official,seal,running,cursive"));
    ok(&with(&["train", "--sa"]));
    ok(&with(&["train", "--no-sa"]));
    let steps = fs::read_to_string(out.join("shufanet-sa/steps.csv")).unwrap();
    assert!(steps.starts_with("step,lr,loss_total,loss_style,loss_triplet\n"));
    assert_eq!(steps.lines().count(), 7);
    assert!(out.join("shufanet-sa/checkpoints/ckpt_000003.bin").is_file());

    ok(&with(&["eval", "--shots", "5,10"]));
    ok(&with(&["eval", "--no-sa", "--shots", "5,10"]));
    let summary = fs::read_to_string(out.join("eval/shufanet-sa/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.starts_with("model,shots,mean,std\n"));

    ok(&with(&["baseline", "--arch", "resnet_small_A"]));
    assert_eq!(
        fs::read_to_string(out.join("baseline/resnet_small_A/curves.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let table = ok(&with(&["report"]));
    assert!(table.contains("shufanet-sa") && table.contains("shufanet-nosa"));
    let comparison = fs::read_to_string(out.join("report/comparison.csv")).unwrap();
    assert_eq!(comparison.lines().count(), 3);
    for png in [
        "shots.png",
        "loss_shufanet-sa.png",
        "curves_ccnet_loss.png",
        "confusion_ccnet.png",
    ] {
        assert!(out.join("report").join(png).is_file(), "{png}");
    }

    let manifest = fs::read_to_string(out.join("split/s_query.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(manifest.lines().next().unwrap()).unwrap();
    let image = first["image_path"].as_str().unwrap().to_string();
    let image = if Path::new(&image).is_absolute() {
        image
    } else {
        out.join("split").join(image).to_string_lossy().into_owned()
    };
    let ccnet = out.join("ccnet/model.bin");
    ok(&with(&[
        "cam",
        "--image",
        &image,
        "--checkpoint",
        ccnet.to_str().unwrap(),
        "--class",
        "1",
        "--colormap",
        "hot",
    ]));
    let net = out.join("shufanet-sa/model.bin");
    let printed = ok(&with(&[
        "cam",
        "--image",
        &image,
        "--checkpoint",
        net.to_str().unwrap(),
        "--class",
        "3",
        "--shots",
        "5",
    ]));
    let overlay = printed.trim();
    assert!(Path::new(overlay).is_file());
    assert_eq!(image::image_dimensions(overlay).unwrap(), (32, 32));
    let bad = shufa(&with(&[
        "cam",
        "--image",
        &image,
        "--checkpoint",
        ccnet.to_str().unwrap(),
        "--class",
        "7",
    ]));
    assert_eq!(bad.status.code(), Some(2));

    for entry in walk(dir.path()) {
        assert!(
            entry.starts_with(&out) || entry.parent() == Some(dir.path()),
            "{}",
            entry.display()
        );
    }
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = vec![];
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
