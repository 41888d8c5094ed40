use robust_dsm::game::{solve, EquilibriumResult, SolverConfig, SweepMode};
use robust_dsm::realtime::{monte_carlo_compare, MonteCarloConfig, MonteCarloSummary};
use robust_dsm::scenario::{build_scenario, Scenario, ScenarioSpec};

fn pair(users: usize, seed: u64) -> (Scenario, EquilibriumResult, EquilibriumResult) {
    let s = build_scenario(&ScenarioSpec::with_users(users, seed)).unwrap();
    let cfg = SolverConfig {
        sweep_mode: SweepMode::Aggregate,
        ..SolverConfig::default()
    };
    let robust = solve(&s, &cfg).unwrap().into_converged().unwrap();
    let naive = solve(&s, &SolverConfig { naive: true, ..cfg }).unwrap().into_converged().unwrap();
    (s, robust, naive)
}

fn compare(s: &Scenario, r: &EquilibriumResult, n: &EquilibriumResult, runs: usize, seed: u64) -> MonteCarloSummary {
    let cfg = MonteCarloConfig {
        runs,
        seed,
        ..MonteCarloConfig::default()
    };
    monte_carlo_compare(r, n, &s.grid, &cfg).unwrap()
}

#[test]
fn robust_bill_is_lower_on_average() {
    for seed in 0..3 {
        let (s, r, n) = pair(20, seed);
        let mc = compare(&s, &r, &n, 100, seed);
        assert!(mc.mean_robust < mc.mean_nonrobust, "seed {seed}: {mc:?}");
        assert!(mc.gain_pct > 0.0 && mc.stderr > 0.0);
    }
}

#[test]
fn zero_variance_reduces_to_the_two_cost_formulas() {
    let (s, r, n) = pair(10, 4);
    let cfg = MonteCarloConfig {
        runs: 1,
        variance_scale: 0.0,
        ..MonteCarloConfig::default()
    };
    let mc = monte_carlo_compare(&r, &n, &s.grid, &cfg).unwrap();
    let k = &s.grid.k;
    for u in 0..10 {
        let robust: f64 = (0..24).map(|h| k[h] * r.robust_aggregate[h] * r.loads[u].l[h]).sum();
        let naive: f64 = (0..24).map(|h| k[h] * n.robust_aggregate[h] * n.loads[u].l[h]).sum();
        let got = &mc.runs[0];
        assert!((got.robust_costs[u] - robust).abs() <= 1e-12 * robust.abs().max(1.0));
        assert!((got.nonrobust_costs[u] - naive).abs() <= 1e-12 * naive.abs().max(1.0));
    }
}

#[test]
fn standard_error_shrinks_with_the_square_root_of_runs() {
    let (s, r, n) = pair(20, 0);
    let base = compare(&s, &r, &n, 200, 11).stderr;
    let double = compare(&s, &r, &n, 400, 11).stderr;
    let quadruple = compare(&s, &r, &n, 800, 11).stderr;
    let sqrt2 = std::f64::consts::SQRT_2;
    assert!((base / double / sqrt2 - 1.0).abs() <= 0.2, "{base} vs {double}");
    assert!((base / quadruple / 2.0 - 1.0).abs() <= 0.2, "{base} vs {quadruple}");
}

#[test]
fn thread_count_does_not_change_the_outcome() {
    let (s, r, n) = pair(20, 2);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| compare(&s, &r, &n, 50, 5))
    };
    assert_eq!(run(1), run(3));
}
