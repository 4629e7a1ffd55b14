use std::path::Path;
use std::process::Command;

use mobidfl::harness::{analyze, parse_config, run_suite};
use mobidfl::training::ROUND_CSV_HEADER;

const TINY: &str = r#"
seed = 3
trials = 2
[topology]
G = 6
N = 5
R_c = 2
[mobility]
mode = "random"
C_m = 2
R_m = 2
[data]
classes = 3
dim = 4
train_samples = 90
test_samples = 30
alpha = 0.5
[training]
eta = 0.1
T = 15
"#;

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn zero_step_gives_identical_flat_curves() {
    let cfg = parse_config("trials = 2\n[training]\nT = 1\neta = 0\n[data]\ntrain_samples = 200\ntest_samples = 50\n")
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = run_suite(&cfg, dir.path()).unwrap();
    assert!(report.all_completed());
    let rounds = &report.points[0].rounds;
    assert_eq!(rounds.len(), 2);
    assert_eq!(rounds[0].len(), 1);
    // zero-initialised softmax: every client predicts class 0 in every trial
    assert_eq!(rounds[0][0].mean_acc, rounds[1][0].mean_acc);
    assert_eq!(rounds[0][0].min_acc, rounds[0][0].max_acc);
    let csv = read(&dir.path().join("point_000/rounds.csv"));
    assert_eq!(csv.lines().next().unwrap(), ROUND_CSV_HEADER.join(","));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn bundle_layout_and_determinism() {
    let text = format!("{TINY}[[sweep]]\nparam = \"mode\"\nvalues = [\"static\", \"random\", \"dam\", \"dcm\"]\n");
    let cfg = parse_config(&text).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_suite(&cfg, a.path()).unwrap();
    run_suite(&cfg, b.path()).unwrap();
    assert_eq!(ra.comparison.len(), 4);
    for w in ra.comparison.windows(2) {
        assert!(w[0].mean_max_acc >= w[1].mean_max_acc);
    }
    for name in [
        "summary.csv",
        "comparison.csv",
        "comparison.txt",
        "failures.csv",
        "accuracy.svg",
    ] {
        assert_eq!(read(&a.path().join(name)), read(&b.path().join(name)), "{name}");
    }
    for p in 0..4 {
        let f = format!("point_{p:03}/rounds.csv");
        assert_eq!(read(&a.path().join(&f)), read(&b.path().join(&f)));
    }
    assert_eq!(read(&a.path().join("failures.csv")).trim(), "point,label,trial,error");
    let summary = read(&a.path().join("summary.csv"));
    assert_eq!(summary.lines().count(), 1 + 4 * 2);
    let svg = read(&a.path().join("accuracy.svg"));
    assert_eq!(svg.matches("<polyline").count(), 4);
}

#[test]
fn analysis_of_tiny_run_passes() {
    let cfg = parse_config(TINY).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = analyze(&cfg, 0, dir.path()).unwrap();
    assert!(report.all_pass(), "{}", report.summary());
    let names: Vec<&str> = report.checks.iter().map(|c| c.name.as_str()).collect();
    assert!(names.contains(&"unrolled_models_identity"));
    let csv = read(&dir.path().join("analysis.csv"));
    assert!(csv.starts_with("name,lhs,rhs,pass"));
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mobidfl"))
}

#[test]
fn cli_run_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--trials", "1", "--seed", "9", "--mode", "dcm"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let summary = read(&out.join("summary.csv"));
    assert_eq!(summary.lines().count(), 2);
    assert!(String::from_utf8_lossy(&status.stdout).contains("base"));
}

#[test]
fn cli_reports_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[mobility]\nC_m = 25\n").unwrap();
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("mobility.C_m"));
}

#[test]
fn cli_check_passes() {
    let o = bin().args(["check", "--seed", "4"]).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn missing_data_is_a_hard_error() {
    // data is loaded once before any point runs, so this aborts the suite
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[data]\npath = \"missing\"\n").unwrap();
    let o = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing"));
}
