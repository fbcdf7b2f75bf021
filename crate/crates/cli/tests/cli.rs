use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn roomgeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roomgeo")).args(args).output().expect("spawn roomgeo")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small train/val sets and a one-epoch model shared by the tests.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let f = Fixture { dir };
        for (name, rooms, seed) in [("train.rird", "13", "3"), ("val.rird", "3", "4")] {
            let out = roomgeo(&["gen", "--rooms", rooms, "--rirs-per-room", "4", "--seed", seed, "--out", p(&f.path(name))]);
            assert!(out.status.success(), "{}", stderr(&out));
        }
        let out = roomgeo(&[
            "train",
            "--train",
            p(&f.path("train.rird")),
            "--val",
            p(&f.path("val.rird")),
            "--epochs",
            "1",
            "--out",
            p(&f.path("model.rgwt")),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        f
    })
}

#[test]
fn help_and_version_exit_zero() {
    for args in [&["--help"][..], &["--version"], &["gen", "--help"]] {
        let out = roomgeo(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
    }
}

#[test]
fn subcommand_help_documents_flags() {
    let expected: [(&str, &[&str]); 6] = [
        ("gen", &["--rooms", "--rirs-per-room", "--mode", "--seed", "--out", "--preset", "--split"]),
        ("train", &["--train", "--val", "--epochs", "--patience", "--out", "--batch-size", "--lr"]),
        ("eval", &["--model", "--data", "--group-size", "--report"]),
        ("estimate", &["--model", "--rir"]),
        ("bench", &["--model", "--iters"]),
        ("repro-desk", &["--work", "--epochs", "--seed"]),
    ];
    for (cmd, flags) in expected {
        let out = roomgeo(&[cmd, "--help"]);
        assert!(out.status.success());
        let text = stdout(&out);
        for flag in flags {
            assert!(text.contains(flag), "{cmd} help lacks {flag}");
        }
        assert!(text.contains("--config"), "{cmd} help lacks --config");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(roomgeo(&["gen", "--bogus"]).status.code(), Some(1));
    assert_eq!(roomgeo(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(roomgeo(&[]).status.code(), Some(1));
    assert_eq!(roomgeo(&["gen", "--mode", "sideways", "--out", "x"]).status.code(), Some(1));
}

#[test]
fn gen_counts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.rird");
    let b = dir.path().join("b.rird");
    for path in [&a, &b] {
        let out = roomgeo(&["gen", "--rooms", "2", "--rirs-per-room", "3", "--mode", "fixed", "--seed", "9", "--out", p(path)]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(stdout(&out).contains("wrote 6 records"));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let manifest = |path: &Path| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(path.with_extension("rird.json")).unwrap()).unwrap()
    };
    assert_eq!(manifest(&a)["sha256"], manifest(&b)["sha256"]);
    assert_eq!(manifest(&a)["record_count"], 6);
}

#[test]
fn gen_rejects_infeasible_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = roomgeo(&["gen", "--rooms", "0", "--out", p(&dir.path().join("x.rird"))]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("error"));
}

#[test]
fn train_missing_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.rird");
    let out = roomgeo(&["train", "--train", p(&missing), "--val", p(&missing), "--out", p(&dir.path().join("m.rgwt"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.rird"));
}

#[test]
fn train_honours_config_with_flag_override() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[train]\nepochs = 3\nbatch_size = 13\npatience = 5\n").unwrap();
    let model = dir.path().join("m.rgwt");
    let args = |extra: &[&str]| {
        let mut v = vec![
            "--config".to_string(),
            p(&cfg).to_string(),
            "train".into(),
            "--train".into(),
            p(&f.path("train.rird")).into(),
            "--val".into(),
            p(&f.path("val.rird")).into(),
            "--out".into(),
            p(&model).into(),
        ];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let run = |extra: &[&str]| {
        let a = args(extra);
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        let out = roomgeo(&refs);
        assert!(out.status.success(), "{}", stderr(&out));
        fs::read_to_string(dir.path().join("loss_history.csv")).unwrap().lines().count() - 1
    };
    assert_eq!(run(&[]), 3);
    assert_eq!(run(&["--epochs", "1"]), 1);
    assert!(model.exists());
}

#[test]
fn bad_config_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nepoch = 3\n").unwrap();
    let out = roomgeo(&["--config", p(&cfg), "bench", "--model", "m.rgwt"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_writes_reports() {
    let f = fixture();
    let report = tempfile::tempdir().unwrap();
    let out = roomgeo(&["eval", "--model", p(&f.path("model.rgwt")), "--data", p(&f.path("val.rird")), "--report", p(report.path())]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("N = 4"));
    for name in ["report_mse.csv", "report_hist.csv", "report_rooms.csv"] {
        assert!(report.path().join(name).exists(), "{name}");
    }
    let mse = fs::read_to_string(report.path().join("report_mse.csv")).unwrap();
    // Header plus raw and sorted rows for three dimensions at N = 1 and 4.
    assert_eq!(mse.lines().count(), 1 + 2 * 2 * 3);
}

#[test]
fn eval_rejects_unavailable_group_size() {
    let f = fixture();
    let report = tempfile::tempdir().unwrap();
    let out = roomgeo(&[
        "eval",
        "--model",
        p(&f.path("model.rgwt")),
        "--data",
        p(&f.path("val.rird")),
        "--group-size",
        "16",
        "--report",
        p(report.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("valid sizes: [1, 4]"), "{}", stderr(&out));
    assert_eq!(roomgeo(&["eval", "--model", "m", "--data", "d", "--group-size", "3", "--report", "r"]).status.code(), Some(1));
}

#[test]
fn estimate_reads_dataset_and_raw_input() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let single = dir.path().join("one.rird");
    let out = roomgeo(&["gen", "--rooms", "1", "--rirs-per-room", "1", "--seed", "5", "--out", p(&single)]);
    assert!(out.status.success());

    let est = roomgeo(&["estimate", "--model", p(&f.path("model.rgwt")), "--rir", p(&single)]);
    assert!(est.status.success(), "{}", stderr(&est));
    let first = stdout(&est).lines().next().unwrap().to_string();
    let values: Vec<f64> = first.split_whitespace().map(|v| v.parse().unwrap()).collect();
    assert_eq!(values.len(), 3);

    let data = roomgeo::dataset::DatasetFile::load(&single).unwrap();
    let raw: Vec<u8> = data.records[0].samples.iter().flat_map(|v| v.to_le_bytes()).collect();
    let raw_path = dir.path().join("one.f32");
    fs::write(&raw_path, raw).unwrap();
    let est_raw = roomgeo(&["estimate", "--model", p(&f.path("model.rgwt")), "--rir", p(&raw_path)]);
    assert!(est_raw.status.success());
    assert_eq!(stdout(&est_raw), stdout(&est));

    fs::write(&raw_path, [0u8; 12]).unwrap();
    let bad = roomgeo(&["estimate", "--model", p(&f.path("model.rgwt")), "--rir", p(&raw_path)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn bench_prints_latency() {
    let f = fixture();
    let out = roomgeo(&["bench", "--model", p(&f.path("model.rgwt")), "--iters", "20"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("20 iterations") && text.contains("p99"), "{text}");
}
