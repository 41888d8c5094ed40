use std::path::Path;
use std::process::{Command, Output};

fn dsm(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsm"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("DSM_THREADS", "2")
        .output()
        .expect("run dsm")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn oracle_check_passes_and_writes_its_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsm(&["oracle-check"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("oracle.csv")).unwrap();
    assert!(table.starts_with("check,instance,discrepancy,tolerance,passed\n"));
    assert!(!table.contains(",false\n"));
}

#[test]
fn corrupted_mapping_is_an_oracle_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsm(&["oracle-check", "--corrupt-mapping"], dir.path());
    assert_eq!(code(&o), 3);
}

#[test]
fn oversized_oracle_request_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsm(&["oracle-check", "--users", "4"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("capped"));
}

#[test]
fn missing_scenario_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = dsm(&["solve", "--scenario", missing.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn invalid_tolerance_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsm(&["solve", "--users", "20", "--outer-tol", "-1"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn undamped_jacobi_sweep_is_a_solver_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsm(&["solve", "--users", "20", "--sweep", "jacobi", "--tau", "1e-6"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn solve_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsm(&["solve", "--users", "20", "--seed", "3"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["equilibrium.json", "trace.csv", "prices.csv", "timing.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let prices = std::fs::read_to_string(dir.path().join("prices.csv")).unwrap();
    assert_eq!(prices.lines().count(), 25);
}

#[test]
fn sweep_users_reports_positive_gains() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsm(&["sweep-users", "--users", "10,20"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let gains = std::fs::read_to_string(dir.path().join("gains.csv")).unwrap();
    let rows: Vec<&str> = gains.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let gain: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
        assert!(gain > 0.0, "{row}");
    }
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dsm"))
        .args(["oracle-check", "--out"])
        .arg(dir.path())
        .env("DSM_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
