use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn adr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    let text = format!(
        "[dataset]\ntrain_per_class = 15\nval_per_class = 10\n\n[run]\nepochs = 4\nseeds = [0, 1]\n{body}"
    );
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn gradcheck_passes_and_reports_published_backward() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc");
    let o = adr(&["gradcheck", "--samples", "18", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read(out.join("gradcheck.txt"));
    assert!(report.contains("exact vs published ADR backward"));
    assert!(report.contains("exact gradients: PASS"));
}

#[test]
fn gradcheck_negative_control_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc");
    let o = adr(&[
        "gradcheck",
        "--samples",
        "9",
        "--perturb-adr",
        "0.01",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("worst"));
}

#[test]
fn curves_cardinality_determinism_and_gate_exit() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let oa = adr(&["curves", "--out", a.to_str().unwrap()]);
    let ob = adr(&["curves", "--out", b.to_str().unwrap()]);
    let csv = read(a.join("curves.csv"));
    assert_eq!(csv.lines().next(), Some("family,c,tau,t,p,value,derivative"));
    assert_eq!(csv.lines().count(), 1 + 6 * 200);
    assert_eq!(csv, read(b.join("curves.csv")));
    let stdout = String::from_utf8_lossy(&oa.stdout);
    let any_fail = stdout.contains("[FAIL]");
    assert_eq!(oa.status.code(), Some(if any_fail { 1 } else { 0 }));
    assert_eq!(oa.status.code(), ob.status.code());
}

#[test]
fn train_writes_records_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = adr(&["train", "--config", &cfg, "--loss", "ce+adr", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("val_acc_top1"));
    }
    for seed in [0, 1] {
        let rel = format!("seed-{seed}");
        let a = dir.path().join("a").join(&rel);
        let b = dir.path().join("b").join(&rel);
        let metrics = read(a.join("metrics.csv"));
        assert_eq!(metrics.lines().count(), 5);
        assert_eq!(metrics, read(b.join("metrics.csv")));
        assert_eq!(fs::read(a.join("checkpoint.bin")).unwrap(), fs::read(b.join("checkpoint.bin")).unwrap());
        assert!(read(a.join("config.json")).contains("\"ce+adr\""));
    }
    assert_eq!(read(dir.path().join("a/summary.csv")), read(dir.path().join("b/summary.csv")));
}

#[test]
fn zero_weight_adr_matches_ce() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let ce = dir.path().join("ce");
    let adr0 = dir.path().join("adr0");
    assert!(adr(&["train", "--config", &cfg, "--loss", "ce", "--out", ce.to_str().unwrap()]).status.success());
    assert!(adr(&[
        "train", "--config", &cfg, "--loss", "ce+adr", "--gamma", "0", "--out", adr0.to_str().unwrap()
    ])
    .status
    .success());
    for seed in [0, 1] {
        let rel = format!("seed-{seed}/metrics.csv");
        assert_eq!(read(ce.join(&rel)), read(adr0.join(&rel)));
    }
}

#[test]
fn seeds_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("o");
    let o = adr(&["train", "--config", &cfg, "--seeds", "5..7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(out.join("seed-5/metrics.csv").is_file());
    assert!(out.join("seed-6/metrics.csv").is_file());
    assert!(!out.join("seed-0").exists());
}

#[test]
fn missing_idx_path_fails_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("idx.toml");
    fs::write(
        &cfg,
        "[dataset]\nkind = \"idx\"\ntrain_images = \"/nonexistent/images\"\ntrain_labels = \"/nonexistent/labels\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = adr(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train_images"));
    assert!(!out.exists());
}

#[test]
fn unknown_config_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "\n[optim]\nlearning_rate = 0.1\n");
    let o = adr(&["train", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}

#[test]
fn one_cell_sweep_equals_train() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let sweep = dir.path().join("sweep");
    let train = dir.path().join("train");
    let o = adr(&[
        "sweep", "--config", &cfg, "--gammas", "0.1", "--taus", "2", "--out", sweep.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(sweep.join("sweep.csv"));
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("gamma,tau,mean_val_top1,std_val_top1,ce_baseline_mean,within_soft_band\n"));
    assert!(adr(&[
        "train", "--config", &cfg, "--loss", "ce+adr", "--gamma", "0.1", "--tau", "2", "--out",
        train.to_str().unwrap(),
    ])
    .status
    .success());
    for seed in [0, 1] {
        assert_eq!(
            read(sweep.join(format!("gamma-0.1_tau-2/seed-{seed}/metrics.csv"))),
            read(train.join(format!("seed-{seed}/metrics.csv")))
        );
    }
}

#[test]
fn zero_noise_reproduces_train() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let noise = dir.path().join("noise");
    let train = dir.path().join("train");
    assert!(adr(&["noise", "--config", &cfg, "--rates", "0", "--out", noise.to_str().unwrap()]).status.success());
    assert!(adr(&["train", "--config", &cfg, "--loss", "ce", "--out", train.to_str().unwrap()]).status.success());
    assert_eq!(
        read(noise.join("rate-0/ce/seed-0/metrics.csv")),
        read(train.join("seed-0/metrics.csv"))
    );
    let table = read(noise.join("noise_table.csv"));
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn noise_logs_corrupted_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("noise");
    let o = adr(&["noise", "--config", &cfg, "--rates", "0.2", "--seeds", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    // 15 samples × 10 classes, ⌊0.2 · 150⌋ = 30.
    let snapshot = read(out.join("rate-0.2/ce/seed-0/config.json"));
    assert!(snapshot.contains("\"corrupted_labels\": 30"), "{snapshot}");
    let curves = read(out.join("noise.csv"));
    assert!(curves.lines().skip(1).all(|l| l.split(',').nth(4) == Some("30")));
}
