use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use ct3vae::data::{read_labels, read_tensor, write_labels, write_tensor, DatasetManifest};
use ct3vae::experiment::median;

const SMALL: &[&str] = &[
    "--set",
    "synth_k=3",
    "--set",
    "synth_n=6",
    "--set",
    "synth_per_class=60",
    "--set",
    "synth_test_per_class=30",
    "--set",
    "latent_dim=2",
    "--set",
    "hidden=16",
];

fn ct3vae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ct3vae"))
        .args(args)
        .output()
        .unwrap()
}

fn small(dir: &Path, args: &[&str]) -> Output {
    let out = dir.display().to_string();
    let mut all: Vec<&str> = vec![args[0], "--out-dir", &out];
    all.extend_from_slice(SMALL);
    all.extend_from_slice(&args[1..]);
    ct3vae(&all)
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn trained(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train"];
    args.extend_from_slice(extra);
    if !extra.contains(&"--epochs") {
        args.extend_from_slice(&["--epochs", "3"]);
    }
    ok(small(dir, &args));
    dir.join("checkpoint")
}

#[test]
fn usage_and_config_errors_exit_1() {
    assert_eq!(ct3vae(&["--help"]).status.code(), Some(0));
    assert_eq!(ct3vae(&["bogus"]).status.code(), Some(1));
    assert_eq!(ct3vae(&["train", "--unknown-flag"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let out = small(dir.path(), &["train", "--family", "nope"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("checkpoint").exists());
    assert_eq!(
        small(
            dir.path(),
            &["train", "--dataset", "/nonexistent/manifest.txt"]
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        small(dir.path(), &["train", "--set", "no_such_key=1"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        small(dir.path(), &["sweep", "--param", "beta", "--grid", ""])
            .status
            .code(),
        Some(1)
    );
    let missing = ct3vae(&["sample", "--checkpoint", "/nonexistent"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/checkpoint.txt"));
}

#[test]
fn diverging_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        small(dir.path(), &["train", "--epochs", "5", "--set", "lr=1e8"])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn unconditional_family_trains_and_rejects_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained(dir.path(), &["--family", "vae"]);
    assert_eq!(csv_rows(&dir.path().join("train_log.csv")).len(), 3);
    assert!(dir.path().join("train_loss.svg").exists());
    let ck = ck.display().to_string();
    ok(small(
        dir.path(),
        &["sample", "--checkpoint", &ck, "--count", "10"],
    ));
    assert!(!dir.path().join("labels.htvt").exists());
    assert_eq!(
        small(
            dir.path(),
            &["sample", "--checkpoint", &ck, "--alpha", "1,1,1"]
        )
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "# small run\nepochs = 2\nfamily = cvae\n").unwrap();
    let cfg = cfg.display().to_string();
    ok(small(dir.path(), &["train", "--config", &cfg]));
    assert_eq!(csv_rows(&dir.path().join("train_log.csv")).len(), 2);
    let manifest = std::fs::read_to_string(dir.path().join("checkpoint/checkpoint.txt")).unwrap();
    assert!(manifest.contains("family = cvae"));
    ok(small(
        dir.path(),
        &["train", "--config", &cfg, "--epochs", "4"],
    ));
    assert_eq!(csv_rows(&dir.path().join("train_log.csv")).len(), 4);
}

#[test]
fn resume_continues_the_loss_log_exactly() {
    let full = tempfile::tempdir().unwrap();
    ok(small(full.path(), &["train", "--epochs", "4"]));
    let part = tempfile::tempdir().unwrap();
    let ck = trained(part.path(), &["--epochs", "2"])
        .display()
        .to_string();
    ok(small(
        part.path(),
        &["train", "--epochs", "4", "--resume", &ck],
    ));
    assert_eq!(
        std::fs::read(full.path().join("train_log.csv")).unwrap(),
        std::fs::read(part.path().join("train_log.csv")).unwrap()
    );
}

#[test]
fn ct3vae_loss_falls_on_the_fixture() {
    let mut first_over_last = Vec::new();
    for seed in 0..5 {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().display().to_string();
        let s = seed.to_string();
        ok(ct3vae(&[
            "train",
            "--epochs",
            "50",
            "--seed",
            &s,
            "--out-dir",
            &out,
        ]));
        let rows = csv_rows(&dir.path().join("train_log.csv"));
        assert_eq!(rows.len(), 50);
        let total = |r: &Vec<String>| r[1].parse::<f64>().unwrap();
        first_over_last.push(total(&rows[0]) - total(&rows[49]));
    }
    assert!(median(&first_over_last) > 0.0, "{first_over_last:?}");
}

#[test]
fn empty_sample_request_writes_valid_files() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained(dir.path(), &[]).display().to_string();
    ok(small(
        dir.path(),
        &["sample", "--checkpoint", &ck, "--count", "0"],
    ));
    let x = read_tensor(&dir.path().join("samples.htvt")).unwrap();
    assert_eq!(x.shape(), &[0, 6]);
    assert!(read_labels(&dir.path().join("labels.htvt"))
        .unwrap()
        .is_empty());
}

#[test]
fn uniform_alpha_balances_classes_and_seed_fixes_bits() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained(dir.path(), &["--set", "synth_k=5"])
        .display()
        .to_string();
    let args = [
        "sample",
        "--checkpoint",
        &ck,
        "--count",
        "100000",
        "--alpha",
        "1,1,1,1,1",
        "--seed",
        "9",
        "--set",
        "synth_k=5",
    ];
    ok(small(dir.path(), &args));
    let labels = read_labels(&dir.path().join("labels.htvt")).unwrap();
    let mut counts = [0usize; 5];
    labels.iter().for_each(|&y| counts[y] += 1);
    let band = 3.0 * (1e5f64 * 0.2 * 0.8).sqrt();
    assert!(
        counts.iter().all(|&c| (c as f64 - 2e4).abs() <= band),
        "{counts:?}"
    );

    let first = std::fs::read(dir.path().join("samples.htvt")).unwrap();
    ok(small(dir.path(), &args));
    assert_eq!(
        first,
        std::fs::read(dir.path().join("samples.htvt")).unwrap()
    );
}

#[test]
fn verify_quick_passes_fast() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = ok(small(dir.path(), &["verify", "--level", "quick"]));
    assert!(start.elapsed().as_secs() < 60);
    assert!(out.contains("verify: PASS"));
    let rows = csv_rows(&dir.path().join("verify.csv"));
    assert!(rows.iter().any(|r| r[0] == "gamma_cross_entropy"));
}

#[test]
fn tau_sweep_reuses_one_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained(dir.path(), &[]).display().to_string();
    let out = ok(small(
        dir.path(),
        &[
            "sweep",
            "--param",
            "tau",
            "--grid",
            "0.25,0.5,1,2",
            "--checkpoint",
            &ck,
        ],
    ));
    assert!(out.contains("4 rows, 4 sampler runs"), "{out}");
    assert_eq!(csv_rows(&dir.path().join("sweep_tau.csv")).len(), 4);
    assert!(dir.path().join("sweep_tau.svg").exists());
}

#[test]
fn beta_sweep_trains_once_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(small(
        dir.path(),
        &[
            "sweep",
            "--param",
            "beta",
            "--grid",
            "0.05,0.1,0.4,1",
            "--epochs",
            "2",
        ],
    ));
    assert!(out.contains("4 rows"), "{out}");
    let rows = csv_rows(&dir.path().join("sweep_beta.csv"));
    let betas: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(betas, ["0.05", "0.1", "0.4", "1"]);
}

#[test]
fn rho_sweep_emits_seven_rows_per_family() {
    let dir = tempfile::tempdir().unwrap();
    ok(small(
        dir.path(),
        &[
            "sweep",
            "--param",
            "rho",
            "--grid",
            "1,2,3,5,10,30,100",
            "--families",
            "ct3vae,cvae",
            "--epochs",
            "2",
        ],
    ));
    let rows = csv_rows(&dir.path().join("sweep_rho.csv"));
    for family in ["ct3vae", "cvae"] {
        assert_eq!(rows.iter().filter(|r| r[0] == family).count(), 7);
    }
}

fn synth_test_split(dir: &Path) -> (PathBuf, DatasetManifest) {
    ok(small(dir, &["synth"]));
    let manifest = dir.join("manifest.txt");
    let m = DatasetManifest::read(&manifest).unwrap();
    (manifest, m)
}

#[test]
fn real_against_real_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, m) = synth_test_split(dir.path());
    let test = m.load_test().unwrap().unwrap();
    let (x, y) = (
        dir.path().join("real_x.htvt"),
        dir.path().join("real_y.htvt"),
    );
    write_tensor(&x, &test.samples).unwrap();
    write_labels(&y, &test.labels).unwrap();
    let (x, y, manifest) = (
        x.display().to_string(),
        y.display().to_string(),
        manifest.display().to_string(),
    );
    ok(small(
        dir.path(),
        &["eval", "--samples", &x, "--labels", &y, "--test", &manifest],
    ));
    let rows = csv_rows(&dir.path().join("eval.csv"));
    assert_eq!(rows.len(), 4);
    for r in &rows[..3] {
        assert_eq!(r[3].parse::<f64>().unwrap(), 1.0, "{r:?}");
        assert!(r[4].parse::<f64>().unwrap().abs() < 1e-8, "{r:?}");
    }
}

#[test]
fn collapsed_sampler_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, m) = synth_test_split(dir.path());
    let test = m.load_test().unwrap().unwrap();
    let zeros = test.class_samples(0);
    let (x, y) = (
        dir.path().join("mono_x.htvt"),
        dir.path().join("mono_y.htvt"),
    );
    write_tensor(&x, &zeros).unwrap();
    write_labels(&y, &vec![0; zeros.rows()]).unwrap();
    let (x, y, manifest) = (
        x.display().to_string(),
        y.display().to_string(),
        manifest.display().to_string(),
    );
    let out = ok(small(
        dir.path(),
        &[
            "eval",
            "--samples",
            &x,
            "--labels",
            &y,
            "--test",
            &manifest,
            "--svg",
        ],
    ));
    assert!(out.contains("collapsed=[1,2]"), "{out}");
    let rows = csv_rows(&dir.path().join("eval.csv"));
    assert_eq!(rows.len(), 3 + 1);
    assert_eq!(rows[..3].iter().filter(|r| r[7] == "true").count(), 2);
    assert_eq!(rows[3][0], "macro");
    assert!(rows[3][3].parse::<f64>().unwrap() <= 1.0 / 3.0 + 1e-12);
    assert!(dir.path().join("eval_f1.svg").exists());
}

#[test]
fn missing_test_class_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, m) = synth_test_split(dir.path());
    let test = m.load_test().unwrap().unwrap();
    let keep: Vec<usize> = (0..test.len()).filter(|&i| test.labels[i] != 2).collect();
    let partial = test.subset(&keep).unwrap();
    let train = m.load_train().unwrap();
    let sub = dir.path().join("partial");
    let manifest = DatasetManifest::write_dataset(&sub, &train, Some(&partial), 1.0)
        .unwrap()
        .display()
        .to_string();
    let x = dir.path().join("x.htvt");
    write_tensor(&x, &partial.samples).unwrap();
    let x = x.display().to_string();
    assert_eq!(
        small(dir.path(), &["eval", "--samples", &x, "--test", &manifest])
            .status
            .code(),
        Some(1)
    );
}
