use std::fs;
use std::path::Path;

use robust_dsm::experiments::{cmd_convergence_trace, cmd_solve, cmd_sweep_users, ExperimentConfig};
use robust_dsm::game::{solve, verify_equilibrium, EquilibriumResult, SolverConfig};
use robust_dsm::scenario::{build_scenario, ScenarioSpec};
use robust_dsm::UserModel;

fn config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        output_dir: out.to_path_buf(),
        user_counts: vec![20],
        seed: 5,
        ..ExperimentConfig::default()
    }
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn passive_population_finishes_in_one_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = build_scenario(&ScenarioSpec::with_users(6, 1)).unwrap();
    s.users = s
        .users
        .iter()
        .map(|u| UserModel::passive(u.user_id, u.base_demand.clone()))
        .collect();
    let path = dir.path().join("passive.json");
    fs::write(&path, s.to_json().unwrap()).unwrap();
    let cfg = ExperimentConfig {
        scenario_path: Some(path),
        ..config(dir.path())
    };
    cmd_solve(&cfg).unwrap();
    assert_eq!(rows(&dir.path().join("trace.csv")).len(), 1);
}

#[test]
fn solve_outputs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_solve(&config(a.path())).unwrap();
    cmd_solve(&config(b.path())).unwrap();
    for f in ["equilibrium.json", "trace.csv", "prices.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn prices_respect_the_lower_bound() {
    let dir = tempfile::tempdir().unwrap();
    cmd_solve(&config(dir.path())).unwrap();
    let beta = ScenarioSpec::default().beta_m;
    let table = rows(&dir.path().join("prices.csv"));
    assert_eq!(table.len(), 24);
    for row in table {
        let k: f64 = row[1].parse().unwrap();
        let lambda: f64 = row[4].parse().unwrap();
        assert!(lambda >= k + beta, "{row:?}");
    }
}

#[test]
fn convergence_trace_has_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let r = cmd_convergence_trace(&config(dir.path())).unwrap();
    let table = rows(&dir.path().join("convergence.csv"));
    assert_eq!(table.len(), r.outer_iterations);
    assert!(!table.last().unwrap()[6].is_empty());
}

/// `Σ_h K(L + Σδ)(l_n + δ_n) + β‖δ_n‖²` summed over users, written out
/// directly from the stored profiles.
fn total_by_hand(r: &EquilibriumResult, k: &[f64], beta: f64) -> f64 {
    let slots = k.len();
    let mut total = 0.0;
    for h in 0..slots {
        let load: f64 = r.loads.iter().map(|l| l.l[h]).sum();
        let err: f64 = r.errors.iter().map(|e| e.delta[h]).sum();
        for (l, e) in r.loads.iter().zip(&r.errors) {
            total += k[h] * (load + err) * (l.l[h] + e.delta[h]) + beta * e.delta[h] * e.delta[h];
        }
    }
    total
}

#[test]
fn two_user_sweep_matches_direct_totals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        user_counts: vec![2],
        ..config(dir.path())
    };
    let row = cmd_sweep_users(&cfg).unwrap().remove(0);
    let s = build_scenario(&cfg.specs().unwrap()[0]).unwrap();
    for naive in [false, true] {
        let r = solve(&s, &SolverConfig { naive, ..cfg.solver.clone() }).unwrap();
        let reported = if naive { row.naive_total_cost } else { row.robust_total_cost };
        let direct = total_by_hand(&r, &s.grid.k, s.grid.beta_m);
        assert!((reported - direct).abs() <= 1e-2 * direct.abs(), "{reported} vs {direct}");
        if !naive {
            assert!(verify_equilibrium(&r, &s, 200).unwrap() <= 1e-4);
        }
    }
}
