//! Experiment drivers behind the `dsm` command line: each command solves
//! one or more scenarios and writes CSV tables plus JSON documents.
//!
//! Numeric CSV fields carry 12 significant digits. Wall-clock timings go to
//! their own `timing.csv` so every other file is reproducible byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};
use crate::game::{solve, EquilibriumResult, SolverConfig, SweepMode};
use crate::oracle::{run_oracle_check, OracleOptions, OracleReport};
use crate::realtime::{monte_carlo_compare, MonteCarloConfig, MonteCarloSummary};
use crate::scenario::{build_scenario, Scenario, ScenarioSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ORACLE: i32 = 3;

/// Process exit code for a failed command.
pub fn exit_code(err: &DsmError) -> i32 {
    match err {
        DsmError::Config(_)
        | DsmError::InvalidParameter(_)
        | DsmError::DimensionMismatch(_)
        | DsmError::EmptyUserSet
        | DsmError::InfeasibleUserModel { .. }
        | DsmError::Io(_) => EXIT_CONFIG,
        DsmError::NonPositiveAggregateLoad { .. }
        | DsmError::MaxIterationsExceeded { .. }
        | DsmError::DegenerateDirection { .. }
        | DsmError::MaxOuterIterations { .. } => EXIT_SOLVER,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Scenario document or scenario spec (JSON); generated from defaults
    /// when absent.
    pub scenario_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub runs: usize,
    pub user_counts: Vec<usize>,
    pub seed: u64,
    pub solver: SolverConfig,
    pub beta_m: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario_path: None,
            output_dir: PathBuf::from("out"),
            runs: 100,
            user_counts: vec![20, 50, 100],
            seed: 0,
            solver: SolverConfig {
                sweep_mode: SweepMode::Aggregate,
                ..SolverConfig::default()
            },
            beta_m: None,
        }
    }
}

/// What `--scenario` pointed at.
#[derive(Debug, Clone)]
pub enum ScenarioInput {
    Fixed(Box<Scenario>),
    Spec(ScenarioSpec),
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.user_counts.iter().any(|&d| d == 0) {
            return Err(DsmError::Config("user counts must be positive".into()));
        }
        if let Some(b) = self.beta_m {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(DsmError::Config(format!("beta_m = {b} must be nonnegative")));
            }
        }
        Ok(())
    }

    pub fn input(&self) -> Result<ScenarioInput> {
        let Some(path) = &self.scenario_path else {
            return Ok(ScenarioInput::Spec(ScenarioSpec::with_users(
                self.user_counts.first().copied().unwrap_or(20),
                self.seed,
            )));
        };
        let text = fs::read_to_string(path)
            .map_err(|e| DsmError::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| DsmError::Config(format!("{}: {e}", path.display())))?;
        if value.get("grid").is_some() {
            Ok(ScenarioInput::Fixed(Box::new(Scenario::from_json(&text)?)))
        } else {
            let spec: ScenarioSpec =
                serde_json::from_value(value).map_err(|e| DsmError::Config(format!("{}: {e}", path.display())))?;
            Ok(ScenarioInput::Spec(spec))
        }
    }

    /// The single scenario used by `solve` and `convergence-trace`.
    pub fn scenario(&self) -> Result<Scenario> {
        let s = match self.input()? {
            ScenarioInput::Fixed(s) => *s,
            ScenarioInput::Spec(spec) => build_scenario(&spec)?,
        };
        Ok(match self.beta_m {
            Some(b) => s.with_beta_m(b),
            None => s,
        })
    }

    /// One spec per requested population size.
    pub fn specs(&self) -> Result<Vec<ScenarioSpec>> {
        if self.user_counts.is_empty() {
            return Err(DsmError::Config("no user counts given".into()));
        }
        let base = match self.input()? {
            ScenarioInput::Spec(spec) => spec,
            ScenarioInput::Fixed(_) => {
                return Err(DsmError::Config(
                    "population sweeps need a scenario spec, not a fixed scenario".into(),
                ))
            }
        };
        Ok(self
            .user_counts
            .iter()
            .map(|&d| ScenarioSpec {
                user_count: d,
                rng_seed: self.seed,
                beta_m: self.beta_m.unwrap_or(base.beta_m),
                ..base.clone()
            })
            .collect())
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.output_dir)
            .map_err(|e| DsmError::Io(format!("{}: {e}", self.output_dir.display())))?;
        Ok(&self.output_dir)
    }
}

/// `x` in decimal with 12 significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    let decimals = 11 - exponent;
    if (0..=40).contains(&decimals) {
        let s = format!("{:.*}", decimals as usize, x);
        // rounding can carry into a new leading digit
        let digits = s.chars().filter(|c| c.is_ascii_digit()).collect::<String>();
        if digits.trim_start_matches('0').len() > 12 && decimals > 0 {
            format!("{:.*}", decimals as usize - 1, x)
        } else {
            s
        }
    } else {
        format!("{:.11e}", x)
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let io = |e: csv::Error| DsmError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    w.flush().map_err(|e| DsmError::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| DsmError::Io(format!("{}: {e}", path.display())))
}

fn write_timing(path: &Path, rows: &[(String, f64)]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|(what, ms)| vec![what.clone(), format!("{ms:.3}")])
        .collect();
    write_csv(path, &["step", "wall_clock_ms"], &rows)
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Solves one scenario; writes `equilibrium.json`, `trace.csv`,
/// `prices.csv` and `timing.csv`.
pub fn cmd_solve(config: &ExperimentConfig) -> Result<EquilibriumResult> {
    config.validate()?;
    let scenario = config.scenario()?;
    let out = config.out_dir()?;
    let started = Instant::now();
    let result = solve(&scenario, &config.solver)?;
    let total_ms = elapsed_ms(started);

    write_json(&out.join("equilibrium.json"), &result)?;
    let trace: Vec<Vec<String>> = result
        .convergence_trace
        .iter()
        .map(|t| vec![t.iteration.to_string(), fmt_sig(t.relative_change), fmt_sig(t.delta_residual)])
        .collect();
    write_csv(&out.join("trace.csv"), &["iteration", "relative_change", "delta_residual"], &trace)?;
    let prices: Vec<Vec<String>> = (0..scenario.slot_count())
        .map(|h| {
            vec![
                (h + 1).to_string(),
                fmt_sig(scenario.grid.k[h]),
                fmt_sig(result.nominal_aggregate[h]),
                fmt_sig(result.robust_aggregate[h]),
                fmt_sig(result.lambdas[h]),
            ]
        })
        .collect();
    write_csv(&out.join("prices.csv"), &["h", "k", "load", "robust_load", "lambda"], &prices)?;
    let mut timing: Vec<(String, f64)> = result
        .wall_clock_ms
        .iter()
        .enumerate()
        .map(|(i, ms)| (format!("iteration {}", i + 1), *ms))
        .collect();
    timing.push(("total".into(), total_ms));
    write_timing(&out.join("timing.csv"), &timing)?;
    Ok(result)
}

/// Robust and naive equilibria of one population.
#[derive(Debug, Clone)]
pub struct PopulationRun {
    pub scenario: Scenario,
    pub robust: EquilibriumResult,
    pub naive: EquilibriumResult,
}

impl PopulationRun {
    pub fn solve(spec: &ScenarioSpec, solver: &SolverConfig) -> Result<Self> {
        let scenario = build_scenario(spec)?;
        let robust = solve(&scenario, &SolverConfig { naive: false, ..solver.clone() })?.into_converged()?;
        let naive = solve(&scenario, &SolverConfig { naive: true, ..solver.clone() })?.into_converged()?;
        Ok(Self { scenario, robust, naive })
    }

    /// `(naive − robust)/naive` of the total day-ahead costs, in %.
    pub fn gain_pct(&self) -> f64 {
        let r = self.robust.total_cost(&self.scenario.grid);
        let n = self.naive.total_cost(&self.scenario.grid);
        100.0 * (n - r) / n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub users: usize,
    pub robust_total_cost: f64,
    pub naive_total_cost: f64,
    pub gain_pct: f64,
    pub outer_iters_robust: usize,
    pub outer_iters_naive: usize,
}

/// Robust versus naive equilibria for every population size; writes
/// `gains.csv` and `timing.csv`.
pub fn cmd_sweep_users(config: &ExperimentConfig) -> Result<Vec<GainRow>> {
    config.validate()?;
    let specs = config.specs()?;
    let out = config.out_dir()?;
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for spec in &specs {
        let started = Instant::now();
        let run = PopulationRun::solve(spec, &config.solver)?;
        timing.push((format!("users {}", spec.user_count), elapsed_ms(started)));
        rows.push(GainRow {
            users: spec.user_count,
            robust_total_cost: run.robust.total_cost(&run.scenario.grid),
            naive_total_cost: run.naive.total_cost(&run.scenario.grid),
            gain_pct: run.gain_pct(),
            outer_iters_robust: run.robust.outer_iterations,
            outer_iters_naive: run.naive.outer_iterations,
        });
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.users.to_string(),
                fmt_sig(r.robust_total_cost),
                fmt_sig(r.naive_total_cost),
                fmt_sig(r.gain_pct),
                r.outer_iters_robust.to_string(),
                r.outer_iters_naive.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("gains.csv"),
        &[
            "users",
            "robust_total_cost",
            "naive_total_cost",
            "gain_pct",
            "outer_iters_robust",
            "outer_iters_naive",
        ],
        &table,
    )?;
    write_timing(&out.join("timing.csv"), &timing)?;
    Ok(rows)
}

/// Monte Carlo real-time comparison for every population size; writes
/// `realtime.csv`, the per-run `realtime_runs.csv` and `timing.csv`.
pub fn cmd_realtime_compare(config: &ExperimentConfig) -> Result<Vec<MonteCarloSummary>> {
    config.validate()?;
    if config.runs == 0 {
        return Err(DsmError::Config("runs must be at least 1".into()));
    }
    let specs = config.specs()?;
    let out = config.out_dir()?;
    let mut summaries = Vec::new();
    let mut timing = Vec::new();
    for spec in &specs {
        let started = Instant::now();
        let run = PopulationRun::solve(spec, &config.solver)?;
        let mc = MonteCarloConfig {
            runs: config.runs,
            seed: config.seed,
            ..MonteCarloConfig::default()
        };
        summaries.push(monte_carlo_compare(&run.robust, &run.naive, &run.scenario.grid, &mc)?);
        timing.push((format!("users {}", spec.user_count), elapsed_ms(started)));
    }
    let table: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.users.to_string(),
                fmt_sig(s.mean_robust),
                fmt_sig(s.mean_nonrobust),
                fmt_sig(s.gain_pct),
                fmt_sig(s.stderr),
            ]
        })
        .collect();
    write_csv(
        &out.join("realtime.csv"),
        &["users", "mean_robust_cost", "mean_nonrobust_cost", "gain_pct", "stderr"],
        &table,
    )?;
    let mut per_run = Vec::new();
    for s in &summaries {
        for o in &s.runs {
            for (n, (r, nr)) in o.robust_costs.iter().zip(&o.nonrobust_costs).enumerate() {
                per_run.push(vec![
                    s.users.to_string(),
                    o.run_id.to_string(),
                    n.to_string(),
                    fmt_sig(*r),
                    fmt_sig(*nr),
                ]);
            }
        }
    }
    write_csv(
        &out.join("realtime_runs.csv"),
        &["users", "run_id", "user_id", "robust_cost", "nonrobust_cost"],
        &per_run,
    )?;
    write_timing(&out.join("timing.csv"), &timing)?;
    Ok(summaries)
}

/// Full per-iteration trace of one solve; writes `convergence.csv` and
/// `timing.csv`.
pub fn cmd_convergence_trace(config: &ExperimentConfig) -> Result<EquilibriumResult> {
    config.validate()?;
    let scenario = config.scenario()?;
    let out = config.out_dir()?;
    let result = solve(&scenario, &config.solver)?;
    let rows: Vec<Vec<String>> = result
        .convergence_trace
        .iter()
        .map(|t| {
            vec![
                t.iteration.to_string(),
                fmt_sig(t.relative_change),
                fmt_sig(t.delta_residual),
                t.inner_iterations.to_string(),
                t.response_rounds.to_string(),
                t.centroid_updated.to_string(),
                t.ne_certificate.map_or(String::new(), fmt_sig),
            ]
        })
        .collect();
    write_csv(
        &out.join("convergence.csv"),
        &[
            "iteration",
            "relative_change",
            "delta_residual",
            "inner_iterations",
            "response_rounds",
            "centroid_updated",
            "ne_certificate",
        ],
        &rows,
    )?;
    let timing: Vec<(String, f64)> = result
        .wall_clock_ms
        .iter()
        .enumerate()
        .map(|(i, ms)| (format!("iteration {}", i + 1), *ms))
        .collect();
    write_timing(&out.join("timing.csv"), &timing)?;
    Ok(result)
}

/// Brute-force oracle comparison; writes `oracle.csv`. The caller decides
/// the exit status from [`OracleReport::passed`].
pub fn cmd_oracle_check(config: &ExperimentConfig, opts: &OracleOptions) -> Result<OracleReport> {
    let report = run_oracle_check(opts)?;
    let out = config.out_dir()?;
    let rows: Vec<Vec<String>> = report
        .cases
        .iter()
        .map(|c| {
            vec![
                c.check.to_string(),
                c.instance.clone(),
                fmt_sig(c.discrepancy),
                fmt_sig(c.tolerance),
                c.passed.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("oracle.csv"),
        &["check", "instance", "discrepancy", "tolerance", "passed"],
        &rows,
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1.00000000000");
        assert_eq!(fmt_sig(0.1412), "0.141200000000");
        assert_eq!(fmt_sig(-123.456), "-123.456000000");
        assert_eq!(fmt_sig(9.9999999999999), "10.0000000000");
        assert_eq!(fmt_sig(1e-30), "1.00000000000e-30");
        for x in [3.0f64.sqrt(), -1e5 / 7.0, 2.5e-7] {
            let s = fmt_sig(x);
            let digits = s.split('e').next().unwrap().chars().filter(|c| c.is_ascii_digit()).collect::<String>();
            assert_eq!(digits.trim_start_matches('0').len(), 12, "{s}");
            assert!((s.parse::<f64>().unwrap() / x - 1.0).abs() < 1e-11);
        }
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&DsmError::Config("x".into())), EXIT_CONFIG);
        assert_eq!(
            exit_code(&DsmError::MaxOuterIterations {
                iterations: 1,
                relative_change: 1.0
            }),
            EXIT_SOLVER
        );
    }

    #[test]
    fn sweep_requires_user_counts() {
        let cfg = ExperimentConfig {
            user_counts: vec![],
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.specs(), Err(DsmError::Config(_))));
    }
}
