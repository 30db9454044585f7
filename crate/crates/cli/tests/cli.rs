use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ckdyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ckdyn"))
        .args(args)
        .env_remove("CK_DATA_DIR")
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-10k")
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn help_lists_flags() {
    let o = ckdyn(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["verify", "train-toy", "depth-sweep", "compare", "param-count"] {
        assert!(text(&o).contains(sub), "{sub}");
    }
    let o = ckdyn(&["depth-sweep", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    let help = text(&o);
    for flag in ["--depth", "--width", "--dl", "--seed", "--epochs", "--data-dir", "CK_DATA_DIR", "--out", "--jobs"] {
        assert!(help.contains(flag), "{flag} missing from\n{help}");
    }
    let help = text(&ckdyn(&["verify", "--help"]));
    for flag in ["--order", "--width", "--depth", "--tolerance", "--seed"] {
        assert!(help.contains(flag), "{flag}");
    }
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = ckdyn(&["verify", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("Usage"));
    assert_eq!(ckdyn(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn param_count_prints_ratio() {
    let o = ckdyn(&["param-count", "--k", "2", "--d", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "9 vs 36 (ratio 0.25)");
    let o = ckdyn(&["param-count", "-k", "3", "-d", "4", "-L", "2"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "32 vs 288 (ratio 0.1111111111111111)");
    assert_eq!(ckdyn(&["param-count", "--k", "0", "--d", "3"]).status.code(), Some(2));
}

#[test]
fn verify_defaults_pass() {
    let o = ckdyn(&["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let out = text(&o);
    assert!(out.contains("PASS"));
    assert!(!out.contains("FAIL"));
}

#[test]
fn injected_sign_flip_names_dense_equivalence() {
    let o = ckdyn(&["verify", "--inject-dense-sign-flip", "--seeds", "3"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("dense equivalence"), "{err}");
    assert!(err.contains("seed"), "{err}");
}

#[test]
fn zero_tolerance_fails() {
    let o = ckdyn(&["verify", "--tolerance", "0", "--seeds", "3"]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
}

#[test]
fn empty_verify_range_is_usage_error() {
    assert_eq!(ckdyn(&["verify", "--seeds", "0"]).status.code(), Some(2));
    assert_eq!(ckdyn(&["verify", "-k", "4..1"]).status.code(), Some(2));
}

#[test]
fn sweep_needs_three_depths() {
    let o = ckdyn(&["depth-sweep", "-L", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("at least 3"));
}

#[test]
fn missing_data_is_io_error() {
    let o = ckdyn(&["compare", "--data-dir", "/nonexistent/mnist"]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("/nonexistent/mnist") && err.contains("train-images-idx3-ubyte"), "{err}");
    assert!(err.contains("CK_DATA_DIR"), "{err}");

    let o = Command::new(env!("CARGO_BIN_EXE_ckdyn"))
        .args(["depth-sweep", "-L", "2,4,6"])
        .env("CK_DATA_DIR", "/also/missing")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/also/missing"));
}

#[test]
fn toy_run_writes_perfect_second_order_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = ckdyn(&["train-toy", "--k", "2", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let csv = fs::read_to_string(dir.path().join("toy.csv")).unwrap();
    assert!(csv.starts_with("# seed: 0\nseed,k,accuracy\n"));
    assert!(csv.lines().skip(2).any(|l| l.ends_with(",2,1")), "{csv}");
    assert!(dir.path().join("trajectory.csv").is_file());
    assert!(fs::read_to_string(dir.path().join("trajectory.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn reruns_are_byte_identical() {
    let data = data_dir();
    let data = data.to_str().unwrap();
    let runs: [&[&str]; 3] = [
        &["train-toy", "--runs", "2", "--epochs", "50"],
        &["depth-sweep", "--data-dir", data, "--samples", "400", "--epochs", "1", "-d", "8", "-L", "1,2,3"],
        &["compare", "--data-dir", data, "--samples", "400", "--epochs", "1", "-d", "8", "-k", "1,2", "--dense", "2"],
    ];
    for args in runs {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            let mut full = args.to_vec();
            full.extend(["--seed", "3", "--out", d.path().to_str().unwrap()]);
            let o = ckdyn(&full);
            assert_eq!(o.status.code(), Some(0), "{args:?}: {}", text(&o));
        }
        let (a, b) = (read_all(dirs[0].path()), read_all(dirs[1].path()));
        assert!(!a.is_empty());
        assert_eq!(a, b, "{args:?}");
        for (name, bytes) in &a {
            if name.ends_with(".csv") {
                assert!(bytes.starts_with(b"# seed: 3\n"), "{name}");
            }
        }
    }
}

#[test]
fn compare_writes_one_row_per_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let data = data_dir();
    let o = ckdyn(&[
        "compare",
        "--data-dir",
        data.to_str().unwrap(),
        "--samples",
        "300",
        "--epochs",
        "1",
        "-d",
        "4",
        "-k",
        "1,3",
        "--dense",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let csv = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("C1,1,") && rows[1].starts_with("C3,3,") && rows[2].starts_with("add-dense2,2,"));
}
