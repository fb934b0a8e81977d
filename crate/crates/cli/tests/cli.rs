use std::path::Path;
use std::process::Command;

fn aggflow(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_aggflow")).current_dir(dir).args(args).output().expect("binary runs");
    (o.status.code().unwrap_or(-1), String::from_utf8_lossy(&o.stdout).into_owned(), String::from_utf8_lossy(&o.stderr).into_owned())
}

#[test]
fn unknown_config_key_exits_2() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.toml"), "[cluster]\nsize = 3\n").unwrap();
    let (code, _, err) = aggflow(d.path(), &["simulate-cluster", "--config", "c.toml"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("size"), "{err}");
    let (code, _, _) = aggflow(d.path(), &["simulate-cluster", "--config", "missing.toml"]);
    assert_eq!(code, 2);
    let (code, _, _) = aggflow(d.path(), &["simulate-cluster", "--delta", "2"]);
    assert_eq!(code, 2);
    let (code, _, _) = aggflow(d.path(), &["frobnicate"]);
    assert_eq!(code, 2);
}

#[test]
fn cluster_reruns_are_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let (code, stdout, err) = aggflow(d.path(), &["simulate-cluster", "--delta", "0.3", "--n", "40", "--seed", "9", "--threads", "1", "--out-dir", out]);
        assert_eq!(code, 0, "{err}");
        assert!(stdout.contains("40 particles"), "{stdout}");
    }
    for f in ["mesh.csv", "particles.csv", "cluster.json", "cluster.svg", "config.resolved.toml", "manifest.json"] {
        let a = std::fs::read(d.path().join("a").join(f)).unwrap();
        assert_eq!(a, std::fs::read(d.path().join("b").join(f)).unwrap(), "{f}");
    }
    let resolved = std::fs::read_to_string(d.path().join("a/config.resolved.toml")).unwrap();
    assert!(resolved.contains("seed = 9"), "{resolved}");
    let (code, _, err) = aggflow(d.path(), &["render", "--input", "a/cluster.json", "--with-mesh", "--out-dir", "r"]);
    assert_eq!(code, 0, "{err}");
    assert!(std::fs::read_to_string(d.path().join("r/cluster.svg")).unwrap().contains("<polygon"));
}

#[test]
fn rerun_from_resolved_config_reproduces_outputs() {
    let d = tempfile::tempdir().unwrap();
    let (code, _, err) = aggflow(d.path(), &["simulate-flow", "--source", "oracle", "--anchors", "6", "--horizon", "0.1", "--out-dir", "a"]);
    assert_eq!(code, 0, "{err}");
    let (code, _, err) = aggflow(d.path(), &["simulate-flow", "--config", "a/config.resolved.toml", "--out-dir", "b"]);
    assert_eq!(code, 0, "{err}");
    let a = std::fs::read(d.path().join("a/flow_lines.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.path().join("b/flow_lines.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("t,line0,line1,line2,line3,line4,line5\n"));
}

#[test]
fn exact_verify_runs_no_statistical_tests() {
    let d = tempfile::tempdir().unwrap();
    let (code, stdout, err) = aggflow(d.path(), &["verify", "--suite", "exact", "--criteria", "1,2,4,5", "--out-dir", "v"]);
    assert_eq!(code, 0, "{stdout}{err}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS criterion")).count(), 4, "{stdout}");
    let summary = std::fs::read_to_string(d.path().join("v/summary.txt")).unwrap();
    assert!(summary.contains("statistical criteria run: 0"));
    let (code, _, _) = aggflow(d.path(), &["verify", "--suite", "fast"]);
    assert_eq!(code, 2);
}

#[test]
fn gdl_sweep_writes_table() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("g.toml"), "[gdl]\nresolution = 2048\nuniform = 128\n").unwrap();
    let (code, stdout, err) = aggflow(d.path(), &["gdl-sweep", "--config", "g.toml", "--deltas", "0.32,0.16", "--kinds", "lune"]);
    assert!(code == 0 || code == 1, "{err}");
    let table = std::fs::read_to_string(d.path().join("out/gdl_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 3, "{table}");
    assert!(table.lines().nth(1).unwrap().starts_with("lune,3.2"));
    assert!(stdout.contains("lune"));
}
