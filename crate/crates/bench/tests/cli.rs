use std::io::{BufRead, BufReader};
use std::process::{Command, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_prbcast");

#[test]
fn bench_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid");
    let status = Command::new(BIN)
        .args(["bench", "run", "--models", "sff", "--weeks", "2", "--reps", "1", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let stdout = String::from_utf8_lossy(&status.stdout);
    assert!(stdout.contains("SFF"));
    assert!(stdout.contains("2 weeks"));

    let report = Command::new(BIN).args(["bench", "report"]).arg(&out).output().unwrap();
    assert!(report.status.success());
    assert_eq!(String::from_utf8_lossy(&report.stdout).trim(), std::fs::read_to_string(out.join("report.txt")).unwrap().trim());
}

#[test]
fn bad_arguments_fail() {
    let dir = tempfile::tempdir().unwrap();
    let bad_weeks = Command::new(BIN)
        .args(["bench", "run", "--weeks", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!bad_weeks.status.success());
    let bad_model = Command::new(BIN)
        .args(["bench", "run", "--models", "arima", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!bad_model.status.success());
    let missing = Command::new(BIN).args(["bench", "report"]).arg(dir.path().join("nope")).output().unwrap();
    assert!(!missing.status.success());
}

#[test]
fn simulate_serve_and_rapp() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    std::fs::write(&scenario, r#"{"tenants":[{"id":"embb"},{"id":"urllc"}],"weeks":1,"seed":4}"#).unwrap();

    let sim = Command::new(BIN).args(["simulate", "--scenario"]).arg(&scenario).arg("--out").arg(dir.path()).output().unwrap();
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    let csv_files: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .collect();
    assert_eq!(csv_files.len(), 1);

    let alloc_log = dir.path().join("allocations.csv");
    let mut server = Command::new(BIN)
        .args(["serve-odu", "--listen", "127.0.0.1:0", "--speedup", "36000", "--linger-secs", "3", "--scenario"])
        .arg(&scenario)
        .arg("--allocation-log")
        .arg(&alloc_log)
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(server.stderr.take().unwrap()).lines();
    let first = lines.next().unwrap().unwrap();
    let addr = first
        .strip_prefix("O-DU listening on ")
        .and_then(|r| r.split_whitespace().next())
        .unwrap_or_else(|| panic!("unexpected banner {first}"))
        .to_string();
    std::thread::spawn(move || lines.for_each(drop));

    let config = dir.path().join("rapp.json");
    std::fs::write(
        &config,
        format!(r#"{{"endpoint":"{addr}","model":{{"kind":"sff","epochs":2}},"stop_after_hours":72}}"#),
    )
    .unwrap();
    let rapp = Command::new(BIN).args(["rapp", "run", "--config"]).arg(&config).output().unwrap();
    assert!(rapp.status.success(), "{}", String::from_utf8_lossy(&rapp.stderr));
    let decisions: Vec<serde_json::Value> = String::from_utf8_lossy(&rapp.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(decisions.len(), 2);

    assert!(server.wait().unwrap().success());
    let log = std::fs::read_to_string(&alloc_log).unwrap();
    assert_eq!(log.lines().count(), 1 + 2 * 24);
}
