use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
task=reverse
vocab=8
min_len=2
max_len=4
n_train=12
n_test=6
n_unlabeled=4
d_model=16
n_heads=2
n_layers=1
d_ff=32
max_source_len=8
max_target_len=8
agents=6
teacher_epochs=2
xe_epochs=2
batch_size=4
cmal_steps=3
cmal_batch_size=2
samples_per_input=2
bucket_edges=2,3,4
bench_lengths=2,4,6
";

fn nag(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_nag"))
        .args(args)
        .arg("--config")
        .arg(dir.join("run.config"))
        .arg("--out-dir")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// CSV contents without the named columns.
fn csv_without(path: &Path, drop: &[&str]) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let keep: Vec<usize> = (0..header.len())
        .filter(|&i| !drop.contains(&header[i]))
        .collect();
    lines
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            keep.iter().map(|&i| cols[i].to_string()).collect()
        })
        .collect()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.config"), TINY).unwrap();
    let out = dir.path().join("out");

    nag(dir.path(), &["gen-data"]);
    nag(dir.path(), &["train-teacher"]);
    nag(dir.path(), &["distill"]);
    nag(dir.path(), &["pretrain-xe", "--init-from-teacher", "true"]);
    nag(dir.path(), &["train-cmal", "--baseline", "cf+ca:2:0.5"]);
    let xe = out.join("xe.ckpt");
    let cmal = out.join("cmal.ckpt");
    let teacher = out.join("teacher.ckpt");
    let stdout = nag(
        dir.path(),
        &[
            "evaluate",
            "--ckpt",
            cmal.to_str().unwrap(),
            "--tag",
            "cmal",
        ],
    )
    .stdout;
    assert!(String::from_utf8_lossy(&stdout).contains("gleu="));
    nag(
        dir.path(),
        &[
            "evaluate",
            "--ckpt",
            teacher.to_str().unwrap(),
            "--mode",
            "ar:2",
            "--tag",
            "teacher",
        ],
    );
    nag(dir.path(), &["bench-latency"]);
    nag(dir.path(), &["ablate-topk", "--ks", "1,2"]);
    nag(
        dir.path(),
        &[
            "ablate-baselines",
            "--baselines",
            "none,sc",
            "--replicates",
            "1",
        ],
    );
    nag(dir.path(), &["ablate-unlabeled", "--ratios", "0,1"]);

    let manifest = fs::read_to_string(out.join("manifest.tsv")).unwrap();
    for artifact in [
        "train.txt",
        "test.txt",
        "teacher.ckpt",
        "teacher_log.csv",
        "distilled.txt",
        "unlabeled.txt",
        "xe.ckpt",
        "xe_log.csv",
        "cmal.ckpt",
        "cmal_log.csv",
        "eval_cmal.csv",
        "eval_teacher.csv",
        "latency.csv",
        "ablate_topk.csv",
        "topk_curves.csv",
        "ablate_baselines.csv",
        "baseline_curves.csv",
        "ablate_unlabeled.csv",
        "pretrain-xe.config",
    ] {
        assert!(out.join(artifact).exists(), "{artifact}");
        let line = manifest
            .lines()
            .find(|l| l.starts_with(&format!("{artifact}\t")))
            .unwrap_or_else(|| panic!("{artifact} missing from manifest"));
        assert_eq!(line.split('\t').nth(2).unwrap().len(), 64);
    }
    let xe_cfg = fs::read_to_string(out.join("pretrain-xe.config")).unwrap();
    assert!(xe_cfg.contains("init_from_teacher=true"));
    assert!(xe_cfg.contains("stage=xe"));
    assert_eq!(
        fs::read_to_string(out.join("unlabeled.txt"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    assert_eq!(csv_without(&out.join("latency.csv"), &[]).len(), 3);
    assert_eq!(csv_without(&out.join("cmal_log.csv"), &[]).len(), 3);

    // reruns reproduce everything except wall-clock columns
    let before = csv_without(&out.join("eval_cmal.csv"), &["latency_ms"]);
    let log_before = csv_without(&out.join("cmal_log.csv"), &["wall_ms"]);
    let ckpt_before = fs::read(&cmal).unwrap();
    nag(dir.path(), &["train-cmal", "--baseline", "cf+ca:2:0.5"]);
    nag(
        dir.path(),
        &[
            "evaluate",
            "--ckpt",
            cmal.to_str().unwrap(),
            "--tag",
            "cmal",
        ],
    );
    assert_eq!(
        csv_without(&out.join("eval_cmal.csv"), &["latency_ms"]),
        before
    );
    assert_eq!(
        csv_without(&out.join("cmal_log.csv"), &["wall_ms"]),
        log_before
    );
    assert_eq!(fs::read(&cmal).unwrap(), ckpt_before);
    assert!(xe.exists());
}

#[test]
fn missing_inputs_and_bad_flags_fail() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.config"), TINY).unwrap();
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_nag"))
            .args(args)
            .arg("--config")
            .arg(dir.path().join("run.config"))
            .arg("--out-dir")
            .arg(dir.path().join("out"))
            .output()
            .unwrap()
    };
    let o = run(&["train-teacher"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.txt"));
    assert!(!run(&["gen-data", "--vocab", "x"]).status.success());
    assert!(!run(&["gen-data", "--no-such-key", "1"]).status.success());
    assert!(!run(&["gen-data", "--baseline", "cf:0"]).status.success());
    assert!(run(&["gen-data", "--seed", "5"]).status.success());
    let cfg = fs::read_to_string(dir.path().join("out/gen-data.config")).unwrap();
    assert!(cfg.contains("seed=5"));
}
