use std::path::Path;
use std::process::{Command, Output};

use fdcd::sim::export::{read_csv, RunRow, StepRow, SummaryRow};
use fdcd::sim::scenario::ScenarioConfig;

fn simulate(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simulate"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

#[test]
fn writes_every_output_for_each_method() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(
        &["--scenario", "2", "--method", "isc,fdcd", "--runs", "2", "--seed", "9", "--steps", "4"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let runs: Vec<RunRow> = read_csv(&dir.path().join("runs.csv")).unwrap();
    assert_eq!(runs.len(), 4);
    assert_eq!(runs.iter().map(|r| r.seed).collect::<Vec<_>>(), [9, 10, 9, 10]);
    let steps: Vec<StepRow> = read_csv(&dir.path().join("timesteps.csv")).unwrap();
    assert_eq!(steps.len(), 2 * 2 * 4);
    assert!(steps.iter().all(|s| s.commands.split(' ').count() == 8));
    let summary: Vec<SummaryRow> = read_csv(&dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.iter().map(|s| s.method.as_str()).collect::<Vec<_>>(), ["isc", "fdcd"]);

    let comm = std::fs::read_to_string(dir.path().join("comm_log.csv")).unwrap();
    assert!(comm.lines().skip(1).all(|l| l.starts_with("isc,") || l.starts_with("fdcd,")));
    assert!(comm.lines().any(|l| l.starts_with("fdcd,") && l.contains(",control,")));
    let trace = std::fs::read_to_string(dir.path().join("cardinality_fdcd.dat")).unwrap();
    assert_eq!(trace.lines().filter(|l| !l.starts_with('#')).count(), 4);
    assert!(!dir.path().join("timing.csv").exists());
    assert!(!dir.path().join("descent_trace.jsonl").exists());
}

#[test]
fn timing_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(&["--method", "fixed", "--runs", "1", "--steps", "2", "--timing"], dir.path());
    assert!(out.status.success());
    let timing = std::fs::read_to_string(dir.path().join("timing.csv")).unwrap();
    assert_eq!(timing.lines().next(), Some("method,run,seed,time_per_sensor"));
}

#[test]
fn printed_scenario_loads_back_from_a_path() {
    let dir = tempfile::tempdir().unwrap();
    let print = Command::new(env!("CARGO_BIN_EXE_simulate"))
        .args(["--scenario", "1", "--print-scenario"])
        .output()
        .unwrap();
    assert!(print.status.success());
    let file = dir.path().join("custom.toml");
    let mut text = String::from_utf8(print.stdout).unwrap();
    text = text.replacen("duration = 50", "duration = 3", 1);
    std::fs::write(&file, &text).unwrap();

    let config = ScenarioConfig::load(&file).unwrap();
    assert_eq!(config.duration, 3);
    let out = simulate(&["--scenario", file.to_str().unwrap(), "--method", "isc", "--runs", "1"], &dir.path().join("out"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let steps: Vec<StepRow> = read_csv(&dir.path().join("out/timesteps.csv")).unwrap();
    assert_eq!(steps.len(), 3);
}

#[test]
fn bad_arguments_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["--method", "greedy"][..],
        &["--scenario", "3"][..],
        &["--runs", "0", "--steps", "2"][..],
    ] {
        let out = simulate(args, dir.path());
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"), "{args:?}");
    }
}

#[test]
fn sequential_flag_gives_the_same_files() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--scenario", "1", "--method", "dcd,fdcd", "--runs", "2", "--steps", "6"];
    assert!(simulate(&args, &dir.path().join("par")).status.success());
    let mut seq = args.to_vec();
    seq.push("--sequential");
    assert!(simulate(&seq, &dir.path().join("seq")).status.success());
    for name in ["runs.csv", "timesteps.csv", "comm_log.csv", "summary.csv"] {
        let a = std::fs::read(dir.path().join("par").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("seq").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}
