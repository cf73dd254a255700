use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const SMALL: &str = r#"
seed = 11
out_dir = "run"
[cohort]
n_patients = 1500
[skipgram]
epochs = 1
[encoder]
epochs = 2
hidden = 8
[gan]
epochs = 1
batch_size = 64
[dnn]
epochs = 3
[logistic]
epochs = 3
"#;

fn raregan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raregan"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn raregan")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn err(out: &Output) -> String {
    assert!(!out.status.success(), "command unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn digest(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

fn setup(config: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.toml"), config).unwrap();
    let run = dir.path().join("run");
    (dir, run)
}

#[test]
fn stage_without_prerequisite_names_the_command() {
    let (dir, _) = setup(SMALL);
    let e = err(&raregan(dir.path(), &["--config", "cfg.toml", "train-embedding"]));
    assert!(e.contains("raregan gen-data"), "{e}");

    ok(&raregan(dir.path(), &["--config", "cfg.toml", "gen-data"]));
    let e = err(&raregan(dir.path(), &["--config", "cfg.toml", "train-embedding"]));
    assert!(e.contains("raregan build-vocab"), "{e}");
    let e = err(&raregan(dir.path(), &["--config", "cfg.toml", "evaluate"]));
    assert!(e.contains("raregan encode-features"), "{e}");
}

#[test]
fn stages_chain_and_reruns_reproduce_artifacts() {
    let (dir, run) = setup(SMALL);
    let c = ["--config", "cfg.toml"];
    let step = |args: &[&str]| ok(&raregan(dir.path(), &[&c[..], args].concat()));
    step(&["gen-data"]);
    step(&["build-vocab"]);
    step(&["train-embedding"]);
    step(&["train-encoder"]);
    step(&["encode-features"]);
    step(&["train-gan"]);
    step(&["train-baseline", "--variant", "lr"]);
    step(&["train-baseline", "--variant", "dnn"]);
    let printed = step(&["evaluate"]);
    for m in ["sgan", "dnn", "lr", "prevalence"] {
        assert!(printed.contains(m), "{printed}");
    }
    step(&["export-pr"]);

    let files = [
        "train.jsonl",
        "vocab.json",
        "embedding.csv",
        "encoder.json",
        "features_train.csv",
        "features_test.csv",
        "gan.json",
        "gan_history.csv",
        "baseline_lr.json",
        "baseline_dnn.json",
        "metrics.csv",
        "pr_sgan.csv",
    ];
    let before: Vec<String> = files.iter().map(|f| digest(&run.join(f))).collect();

    let head = fs::read_to_string(run.join("features_test.csv")).unwrap();
    assert!(head.starts_with("patient_id,label,f_0,"), "{}", &head[..40]);
    assert!(head.lines().next().unwrap().ends_with(",f_9"), "hidden 8 + age + gender");
    let manifest = fs::read_to_string(run.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 8);
    for line in manifest.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["stage", "config_hash", "seed", "wall_time_s"] {
            assert!(v.get(key).is_some(), "{line}");
        }
    }
    let gan: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("gan.json")).unwrap()).unwrap();
    assert_eq!(gan["seed"], 11);
    assert_eq!(gan["config_hash"].as_str().unwrap().len(), 64);

    // Rerunning everything from scratch in a second directory gives the
    // same bytes.
    let (dir2, run2) = setup(SMALL);
    ok(&raregan(dir2.path(), &["--config", "cfg.toml", "run-all"]));
    for (f, h) in files.iter().zip(&before) {
        assert_eq!(&digest(&run2.join(f)), h, "{f} differs between runs");
    }
}

#[test]
fn config_change_makes_downstream_stale_and_evaluate_writes_nothing() {
    let (dir, run) = setup(SMALL);
    ok(&raregan(dir.path(), &["--config", "cfg.toml", "run-all"]));
    let inputs: Vec<(PathBuf, String)> = ["train.jsonl", "test.jsonl", "vocab.json", "embedding.csv"]
        .iter()
        .map(|f| (run.join(f), digest(&run.join(f))))
        .collect();

    // Re-encode at a different feature dimension without retraining models.
    fs::write(dir.path().join("cfg.toml"), SMALL.replace("hidden = 8", "hidden = 6")).unwrap();
    ok(&raregan(dir.path(), &["--config", "cfg.toml", "train-encoder"]));
    ok(&raregan(dir.path(), &["--config", "cfg.toml", "encode-features"]));
    fs::remove_file(run.join("metrics.csv")).unwrap();
    let e = err(&raregan(dir.path(), &["--config", "cfg.toml", "evaluate"]));
    assert!(e.contains("stale") && e.contains("train-gan"), "{e}");
    assert!(!run.join("metrics.csv").exists());

    // Even with a forged stamp the dimension check refuses.
    let stamp_path = run.join("gan.stamp.json");
    let mut stamp: serde_json::Value = serde_json::from_str(&fs::read_to_string(&stamp_path).unwrap()).unwrap();
    let show = ok(&raregan(dir.path(), &["--config", "cfg.toml", "show-config"]));
    let cfg: raregan::config::PipelineConfig = toml::from_str(&show).unwrap();
    stamp["config_hash"] = cfg.stage_hash(raregan::config::Stage::Gan).into();
    fs::write(&stamp_path, stamp.to_string()).unwrap();
    let e = err(&raregan(dir.path(), &["--config", "cfg.toml", "evaluate"]));
    assert!(e.contains("10-dimensional") && e.contains("have 8"), "{e}");
    assert!(!run.join("metrics.csv").exists());

    for (p, h) in inputs {
        assert_eq!(digest(&p), h, "{} was modified", p.display());
    }
}

#[test]
fn seed_and_out_flags_override_config() {
    let (dir, run) = setup(SMALL);
    ok(&raregan(dir.path(), &["--config", "cfg.toml", "gen-data"]));
    ok(&raregan(dir.path(), &["--config", "cfg.toml", "--seed", "12", "--out", "other", "gen-data"]));
    let other = dir.path().join("other");
    assert_ne!(digest(&run.join("train.jsonl")), digest(&other.join("train.jsonl")));
    let stamp = fs::read_to_string(other.join("data.stamp.json")).unwrap();
    assert!(stamp.contains("\"seed\": 12"), "{stamp}");

    // A different seed makes the first directory stale for the new config.
    let e = err(&raregan(dir.path(), &["--config", "cfg.toml", "--seed", "12", "build-vocab"]));
    assert!(e.contains("stale") && e.contains("gen-data"), "{e}");
}

#[test]
fn bad_config_is_rejected() {
    let (dir, _) = setup("[gan]\nepochz = 3\n");
    let e = err(&raregan(dir.path(), &["--config", "cfg.toml", "gen-data"]));
    assert!(e.contains("epochz"), "{e}");
    let (dir, _) = setup("[gan]\nbatch_size = 0\n");
    err(&raregan(dir.path(), &["--config", "cfg.toml", "gen-data"]));
    let e = err(&raregan(dir.path(), &["--config", "missing.toml", "gen-data"]));
    assert!(e.contains("missing.toml"), "{e}");
}
