use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn cbo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbo"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn small_simulate(extra: &[&str]) -> Vec<String> {
    let mut args: Vec<String> = ["simulate", "--config"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    args.push(config("optimize.toml").display().to_string());
    for o in [
        "kind=\"simulate\"",
        "replicates=3",
        "j_ladder=[8]",
        "params.horizon=0.5",
    ] {
        args.push("--override".into());
        args.push(o.into());
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

#[test]
fn constants_prints_report_and_summary() {
    let out = cbo(&[
        "constants",
        "--config",
        config("constants.toml").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("sigma_tilde = 0.177974"), "{text}");
    assert!(text.contains("\"kind\": \"constants\""));
}

#[test]
fn config_errors_exit_with_one() {
    let path = config("constants.toml");
    let path = path.to_str().unwrap();
    let typo = cbo(&[
        "constants",
        "--config",
        path,
        "--override",
        "params.sigmaa=0.1",
    ]);
    assert_eq!(typo.status.code(), Some(1));
    let mismatch = cbo(&["moments", "--config", path]);
    assert_eq!(mismatch.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("constants"));
    let missing = cbo(&["constants", "--config", "/no/such/file.toml"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn supercritical_guard_exits_with_one_unless_allowed() {
    let path = config("mfl.toml");
    let base = [
        "mfl",
        "--config",
        path.to_str().unwrap(),
        "--override",
        "allow_supercritical=false",
        "--override",
        "replicates=1",
        "--override",
        "j_ladder=[4, 8]",
        "--override",
        "oversample=2",
        "--override",
        "params.horizon=0.1",
    ];
    let refused = cbo(&base);
    assert_eq!(refused.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--allow-supercritical"));
    let mut allowed = base.to_vec();
    allowed.push("--allow-supercritical");
    assert_eq!(cbo(&allowed).status.code(), Some(0));
}

#[test]
fn numeric_blowup_exits_with_two() {
    let args = small_simulate(&[
        "--override",
        "params.sigma=1e300",
        "--override",
        "params.alpha=0.0",
    ]);
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    let out = cbo(&refs);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("replicate") && err.contains("step"), "{err}");
}

#[test]
fn outputs_carry_header_and_ignore_thread_count_and_directory() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (target, threads) in [(&a, "1"), (&b, "2")] {
        let args = small_simulate(&[
            "--seed",
            "7",
            "--threads",
            threads,
            "--out",
            target.to_str().unwrap(),
        ]);
        let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        assert_eq!(cbo(&refs).status.code(), Some(0));
    }
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n == "centered_p2_J8.csv"));
    assert!(names.iter().any(|n| n == "centered_p2_J8_mean.csv"));
    assert!(names.iter().any(|n| n == "summary.json"));
    for name in &names {
        let (x, y) = (
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
        );
        assert_eq!(x, y, "{name:?} differs");
        let text = String::from_utf8(x).unwrap();
        if name.to_string_lossy().ends_with(".csv") {
            let mut lines = text.lines();
            assert!(lines.next().unwrap().starts_with("# cbo-core "));
            let echo = lines.next().unwrap();
            assert!(
                echo.starts_with("# config {") && echo.contains("\"seed\":7"),
                "{echo}"
            );
        } else {
            assert!(text.contains("\"version\"") && text.contains("\"seed\": 7"));
        }
    }
}
