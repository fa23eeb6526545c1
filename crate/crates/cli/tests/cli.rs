use std::path::Path;
use std::process::{Command, Output};

fn emos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emos"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = emos(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn setup(root: &Path) {
    std::fs::write(root.join("synth.toml"), "n_stations = 8\nn_days = 40\nlead_times = [1, 2]\n").unwrap();
    ok(&["simulate", "--config", p(&root.join("synth.toml")), "--out", p(&root.join("data")), "--seed", "4"]);
    std::fs::write(
        root.join("exp.toml"),
        r#"out_dir = "out"
[data]
dir = "data"
[scenario]
high_group = "H"
low_group = "L"
mixtures = [[0, 50], [40, 40]]
[[training]]
mode = "semi-local"
n_days = 15
k_clusters = 2
[verification]
start = "2016-05-16"
end = "2016-06-05"
[bootstrap]
replicates = 100
"#,
    )
    .unwrap();
}

#[test]
fn calibrate_then_verify_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    setup(root);
    let cfg = root.join("exp.toml");
    ok(&["run", "--config", p(&cfg), "--out", p(&root.join("run"))]);
    ok(&["calibrate", "--config", p(&cfg), "--out", p(&root.join("split"))]);
    assert!(root.join("split/parameters.jsonl").exists());
    ok(&["verify", "--config", p(&cfg), "--out", p(&root.join("split"))]);
    for f in ["scores.csv", "daily_scores.csv", "table2.csv", "significance_matrix_lead2.csv"] {
        assert_eq!(
            std::fs::read(root.join("run").join(f)).unwrap(),
            std::fs::read(root.join("split").join(f)).unwrap(),
            "{f}"
        );
    }
    // out_dir from the config resolves next to it
    ok(&["cluster", "--config", p(&cfg)]);
    assert!(root.join("out/clusters_lead1_15d_k2.csv").exists());
}

#[test]
fn diagnose_writes_per_station_rows() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    setup(root);
    ok(&["diagnose", "--data", p(&root.join("data")), "--high", "H", "--low", "L", "--size", "50", "--out", p(root)]);
    let text = std::fs::read_to_string(root.join("station_diagnostics.csv")).unwrap();
    assert!(text.starts_with("station_id,n_cases,mean_diff_k,variance_diff_k2,rmse_diff_k\n"));
    assert_eq!(text.lines().count(), 9);
}

#[test]
fn failures_emit_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[scenario]\nhigh_group = \"H\"\n").unwrap();
    let out = emos(&["run", "--config", p(&bad)]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().unwrap();
    assert!(line.starts_with("{\"error\":\"config\""), "{line}");

    let out = emos(&["verify", "--config", p(&dir.path().join("missing.toml"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("\"error\":\"io\""));
}
