//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL` line with the measured values.
//!
//! The tests take a shared lock so the wall-clock criteria are timed without
//! other criteria competing for the CPU.

use std::fs;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robust_dsm::experiments::{cmd_oracle_check, cmd_realtime_compare, cmd_sweep_users, ExperimentConfig};
use robust_dsm::game::{solve, verify_equilibrium, EquilibriumResult, SolverConfig, SweepMode};
use robust_dsm::oracle::OracleOptions;
use robust_dsm::realtime::{monte_carlo_compare, MonteCarloConfig};
use robust_dsm::scenario::{average_price, build_scenario, Scenario, ScenarioSpec};
use robust_dsm::worst_case::{
    contraction_constant, fixed_point_map, halfspace_contains, solve_all_slots, stationarity_residual,
    SlotErrorProblem,
};

const DESK_SCENARIOS: u64 = 50;
const DESK_USERS: usize = 20;

const C1_TOTAL_RESIDUAL: f64 = 1e-8;
const C1_MAX_ITERATIONS: usize = 200;
const C1_LIPSCHITZ_PAIRS: usize = 1000;
const C1_LIPSCHITZ_SLACK: f64 = 1e-12;
const C1_SECONDS: f64 = 10.0;

const C2_STATIONARITY: f64 = 1e-6;
const C2_BALL_REL: f64 = 1e-6;

const C4_IMPROVEMENT: f64 = 1e-4;
const C4_SWEEP_REL: f64 = 1e-3;
const C4_SWEEP_SEEDS: u64 = 3;

const C5_POPULATIONS: [usize; 3] = [20, 50, 100];
const C5_SEEDS: u64 = 20;
const C5_MIN_GAIN: f64 = 2.0;
const C5_MAX_GAIN: f64 = 15.0;

const C6_RUNS: usize = 100;
const C6_SECONDS: f64 = 60.0;

const C7_PRICE: f64 = 0.1412;
const C7_TOL: f64 = 1e-4;

const C9_USERS: usize = 1000;
const C9_SECONDS: f64 = 300.0;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, ok: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n}: {detail}");
}

fn experiment_solver() -> SolverConfig {
    ExperimentConfig::default().solver
}

fn desk(seed: u64) -> Scenario {
    build_scenario(&ScenarioSpec::with_users(DESK_USERS, seed)).unwrap()
}

/// Robust equilibria of the 50 desk scenarios.
fn desk_equilibria() -> &'static [(Scenario, EquilibriumResult)] {
    static CELL: OnceLock<Vec<(Scenario, EquilibriumResult)>> = OnceLock::new();
    CELL.get_or_init(|| {
        (0..DESK_SCENARIOS)
            .map(|seed| {
                let s = desk(seed);
                let r = solve(&s, &experiment_solver()).unwrap();
                (s, r)
            })
            .collect()
    })
}

struct Population {
    users: usize,
    seed: u64,
    gain: f64,
    mc_robust: f64,
    mc_nonrobust: f64,
    mc_stderr: f64,
    seconds: f64,
}

/// Robust and naive equilibria plus the Monte Carlo comparison for every
/// desk population and seed.
fn populations() -> &'static [Population] {
    static CELL: OnceLock<Vec<Population>> = OnceLock::new();
    CELL.get_or_init(|| {
        let solver = experiment_solver();
        let mut out = Vec::new();
        for &users in &C5_POPULATIONS {
            for seed in 0..C5_SEEDS {
                let started = Instant::now();
                let s = build_scenario(&ScenarioSpec::with_users(users, seed)).unwrap();
                let robust = solve(&s, &solver).unwrap().into_converged().unwrap();
                let naive = solve(&s, &SolverConfig { naive: true, ..solver.clone() })
                    .unwrap()
                    .into_converged()
                    .unwrap();
                let mc = monte_carlo_compare(
                    &robust,
                    &naive,
                    &s.grid,
                    &MonteCarloConfig {
                        runs: C6_RUNS,
                        seed,
                        ..MonteCarloConfig::default()
                    },
                )
                .unwrap();
                let seconds = started.elapsed().as_secs_f64();
                let r = robust.total_cost(&s.grid);
                let n = naive.total_cost(&s.grid);
                out.push(Population {
                    users,
                    seed,
                    gain: 100.0 * (n - r) / n,
                    mc_robust: mc.mean_robust,
                    mc_nonrobust: mc.mean_nonrobust,
                    mc_stderr: mc.stderr,
                    seconds,
                });
            }
        }
        out
    })
}

#[test]
fn criterion_1_contraction_convergence() {
    let _g = serial();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_residual, mut worst_iters, mut worst_excess) = (0.0f64, 0usize, f64::NEG_INFINITY);
    let mut certified = 0usize;
    for seed in 0..DESK_SCENARIOS {
        let s = desk(seed);
        let loads: Vec<Vec<f64>> = s.users.iter().map(|u| u.base_demand.clone()).collect();
        let refs: Vec<&[f64]> = loads.iter().map(|l| l.as_slice()).collect();
        let all = solve_all_slots(&refs, &s.grid, None, C1_TOTAL_RESIDUAL, C1_MAX_ITERATIONS, 1.0).unwrap();
        worst_residual = worst_residual.max(all.total_residual);
        worst_iters = worst_iters.max(all.max_iterations);

        for h in 0..s.slot_count() {
            let column: Vec<f64> = loads.iter().map(|l| l[h]).collect();
            let p = SlotErrorProblem::from_loads(h, &column, &s.grid).unwrap();
            let q = contraction_constant(&p);
            if q >= 1.0 {
                continue;
            }
            certified += 1;
            let side = p.alpha.sqrt();
            let mut pairs = 0;
            while pairs < C1_LIPSCHITZ_PAIRS {
                let x: Vec<f64> = (0..p.user_count()).map(|_| side * rng.random::<f64>()).collect();
                let y: Vec<f64> = (0..p.user_count()).map(|_| side * rng.random::<f64>()).collect();
                if !halfspace_contains(&x, &p) || !halfspace_contains(&y, &p) {
                    continue;
                }
                pairs += 1;
                let tx = fixed_point_map(&x, &p).unwrap();
                let ty = fixed_point_map(&y, &p).unwrap();
                let dt = tx.iter().zip(&ty).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let dx = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                worst_excess = worst_excess.max(dt / dx - q);
            }
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    let ok = worst_residual <= C1_TOTAL_RESIDUAL
        && worst_iters <= C1_MAX_ITERATIONS
        && worst_excess <= C1_LIPSCHITZ_SLACK
        && seconds < C1_SECONDS;
    report(
        1,
        ok,
        format!(
            "max residual {worst_residual:.2e}, max iterations {worst_iters}, {certified} certified slots, \
             max(ratio - q) {worst_excess:.2e}, {seconds:.2} s"
        ),
    );
}

#[test]
fn criterion_2_kkt_certificate() {
    let _g = serial();
    let (mut stat, mut ball, mut price_gap) = (0.0f64, 0.0f64, f64::INFINITY);
    let mut unconverged = 0;
    for (s, r) in desk_equilibria() {
        if !r.converged {
            unconverged += 1;
            continue;
        }
        for h in 0..s.slot_count() {
            let column: Vec<f64> = r.loads.iter().map(|l| l.l[h]).collect();
            let p = SlotErrorProblem::from_loads(h, &column, &s.grid).unwrap();
            let delta: Vec<f64> = r.errors.iter().map(|e| e.delta[h]).collect();
            stat = stat.max(stationarity_residual(&delta, &p));
            let sq: f64 = delta.iter().map(|d| d * d).sum();
            ball = ball.max((sq - p.alpha).abs() / p.alpha);
            price_gap = price_gap.min(r.lambdas[h] - (s.grid.k[h] + s.grid.beta_m));
        }
    }
    let ok = unconverged == 0 && stat <= C2_STATIONARITY && ball <= C2_BALL_REL && price_gap >= 0.0;
    report(
        2,
        ok,
        format!(
            "{unconverged} unconverged, max stationarity {stat:.2e}, max ball error {ball:.2e}, \
             min lambda - (K + beta) {price_gap:.3e}"
        ),
    );
}

#[test]
fn criterion_3_oracle_equivalence() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        output_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let rep = cmd_oracle_check(&config, &OracleOptions::default()).unwrap();
    report(
        3,
        rep.passed() && dir.path().join("oracle.csv").exists(),
        format!(
            "slot errors {:.2e}, best response {:.2e}, spectra {:.2e}",
            rep.max_discrepancy("slot_errors"),
            rep.max_discrepancy("best_response"),
            rep.max_discrepancy("monotonicity")
        ),
    );
}

#[test]
fn criterion_4_ne_certificate() {
    let _g = serial();
    let mut improvement = 0.0f64;
    for (s, r) in desk_equilibria() {
        improvement = improvement.max(verify_equilibrium(r, s, 0).unwrap());
    }
    let tight = SolverConfig {
        ne_tol: 1e-9,
        outer_tol: 1e-6,
        max_outer: 20_000,
        ..SolverConfig::default()
    };
    let mut spread = 0.0f64;
    for seed in 0..C4_SWEEP_SEEDS {
        let s = desk(seed);
        let gs = solve(&s, &SolverConfig { sweep_mode: SweepMode::GaussSeidel, ..tight.clone() }).unwrap();
        let jc = solve(&s, &SolverConfig { sweep_mode: SweepMode::Jacobi, ..tight.clone() }).unwrap();
        assert!(gs.converged && jc.converged);
        for (x, y) in gs.user_costs(&s.grid).iter().zip(&jc.user_costs(&s.grid)) {
            spread = spread.max((x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE));
        }
    }
    let ok = improvement <= C4_IMPROVEMENT && spread <= C4_SWEEP_REL;
    report(
        4,
        ok,
        format!("max unilateral improvement {improvement:.2e}, max Gauss-Seidel/Jacobi cost spread {spread:.2e}"),
    );
}

#[test]
fn criterion_5_robust_vs_naive_gain() {
    let _g = serial();
    let pops = populations();
    let mut ok = true;
    let mut parts = Vec::new();
    for &users in &C5_POPULATIONS {
        let gains: Vec<f64> = pops.iter().filter(|p| p.users == users).map(|p| p.gain).collect();
        let mean = gains.iter().sum::<f64>() / gains.len() as f64;
        let min = gains.iter().cloned().fold(f64::INFINITY, f64::min);
        ok &= min > 0.0 && (C5_MIN_GAIN..=C5_MAX_GAIN).contains(&mean);
        parts.push(format!("D={users}: mean {mean:.3}% min {min:.3}%"));
    }
    report(5, ok, parts.join(", "));
}

#[test]
fn criterion_6_realtime_comparison() {
    let _g = serial();
    let pops = populations();
    let mut ok = true;
    let mut parts = Vec::new();
    for &users in &C5_POPULATIONS {
        let mine: Vec<&Population> = pops.iter().filter(|p| p.users == users).collect();
        let losing: Vec<u64> = mine.iter().filter(|p| p.mc_robust >= p.mc_nonrobust).map(|p| p.seed).collect();
        let slowest = mine.iter().map(|p| p.seconds).fold(0.0, f64::max);
        let stderr = mine.iter().all(|p| p.mc_stderr.is_finite() && p.mc_stderr > 0.0);
        ok &= losing.is_empty() && stderr;
        if users == 100 {
            ok &= slowest < C6_SECONDS;
        }
        let first = mine[0];
        parts.push(format!(
            "D={users}: seed 0 robust {:.4} vs non-robust {:.4} (stderr {:.3}), losing seeds {losing:?}, slowest {slowest:.1} s",
            first.mc_robust, first.mc_nonrobust, first.mc_stderr
        ));
    }
    report(6, ok, parts.join("; "));
}

#[test]
fn criterion_7_calibration() {
    let _g = serial();
    let s = build_scenario(&ScenarioSpec::default()).unwrap();
    let price = average_price(&s.grid.k, &s.base_load());
    report(
        7,
        (price - C7_PRICE).abs() <= C7_TOL,
        format!("average price {price:.6} GBP/kWh"),
    );
}

#[test]
fn criterion_8_determinism() {
    let _g = serial();
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            output_dir: dir.path().to_path_buf(),
            user_counts: vec![20],
            runs: 20,
            seed: 7,
            solver: SolverConfig {
                sweep_mode: SweepMode::GaussSeidel,
                ..SolverConfig::default()
            },
            ..ExperimentConfig::default()
        };
        cmd_sweep_users(&config).unwrap();
        let gains = fs::read(dir.path().join("gains.csv")).unwrap();
        cmd_realtime_compare(&config).unwrap();
        let rt = fs::read(dir.path().join("realtime.csv")).unwrap();
        let runs = fs::read(dir.path().join("realtime_runs.csv")).unwrap();
        (gains, rt, runs)
    };
    let (a, b) = (run(), run());
    report(
        8,
        a == b,
        format!("gains.csv {} bytes, realtime.csv {} bytes, realtime_runs.csv {} bytes", a.0.len(), a.1.len(), a.2.len()),
    );
}

#[test]
fn criterion_9_scale() {
    let _g = serial();
    let s = build_scenario(&ScenarioSpec::with_users(C9_USERS, 0)).unwrap();
    let started = Instant::now();
    let r = solve(&s, &experiment_solver()).unwrap();
    let seconds = started.elapsed().as_secs_f64();
    report(
        9,
        r.converged && seconds < C9_SECONDS,
        format!("D={C9_USERS}: converged {} after {} outer iterations in {seconds:.1} s", r.converged, r.outer_iterations),
    );
}
