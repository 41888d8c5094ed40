//! Distributed robust equilibrium: proximal best-response sweeps over the
//! active users alternated with the per-slot worst-case error solve.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};
use crate::model::{check_positive_aggregate, cost_with_totals, ErrorProfile, GridCostParams, LoadProfile};
use crate::region::{
    best_response, response_objective, sample_feasible_schedule, solve_load_qp_with_sensitivity,
    DeviceSchedule,
    ResponseContext, UserModel,
};
use crate::scenario::Scenario;
use crate::worst_case::{contraction_constant, solve_all_slots, SlotErrorProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Users respond one after another to the freshest loads.
    #[default]
    GaussSeidel,
    /// All users respond to the same snapshot.
    Jacobi,
    /// All users respond to a common aggregate load, which is driven to
    /// consistency with their responses before the errors are refreshed.
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Proximal weight; `None` selects [`SolverConfig::default_tau`].
    pub tau: Option<f64>,
    /// Relative sweep-to-sweep load change that ends the outer loop.
    pub outer_tol: f64,
    /// Joint tolerance `Σ_h ‖δ^{k+1}(h) − δ^k(h)‖` of the error solve.
    pub inner_tol: f64,
    pub max_outer: usize,
    /// Fixed-point iteration cap per slot.
    pub max_inner: usize,
    pub sweep_mode: SweepMode,
    /// Absolute sweep change at which the proximal centres move; also
    /// bounds the equilibrium certificate (`≤ 10·ne_tol`).
    pub ne_tol: f64,
    /// Users ignore forecast errors while scheduling.
    pub naive: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau: None,
            outer_tol: 1e-2,
            inner_tol: 1e-8,
            max_outer: 500,
            max_inner: 10_000,
            sweep_mode: SweepMode::GaussSeidel,
            ne_tol: 1e-6,
            naive: false,
        }
    }
}

impl SolverConfig {
    /// `2·max_h K_h·|D|` for Jacobi sweeps, `min_h K_h` otherwise.
    pub fn default_tau(&self, grid: &GridCostParams, users: usize) -> f64 {
        let kmax = grid.k.iter().cloned().fold(0.0, f64::max);
        let kmin = grid.k.iter().cloned().fold(f64::INFINITY, f64::min);
        match self.sweep_mode {
            SweepMode::Jacobi => 2.0 * kmax * users as f64,
            SweepMode::GaussSeidel | SweepMode::Aggregate => kmin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(DsmError::Config(format!("{name} = {v} must be positive")))
            }
        };
        if let Some(t) = self.tau {
            pos("tau", t)?;
        }
        pos("outer_tol", self.outer_tol)?;
        pos("inner_tol", self.inner_tol)?;
        pos("ne_tol", self.ne_tol)?;
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(DsmError::Config("iteration caps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// `‖l^i − l^{i−1}‖ / ‖l^i‖`.
    pub relative_change: f64,
    /// Final `Σ_h ‖Δδ_h‖` of the error solve (0 in naive mode).
    pub delta_residual: f64,
    pub inner_iterations: usize,
    /// Rounds of best responses in this iteration.
    pub response_rounds: usize,
    pub centroid_updated: bool,
    pub ne_certificate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub loads: Vec<LoadProfile>,
    pub errors: Vec<ErrorProfile>,
    pub schedules: Vec<DeviceSchedule>,
    pub lambdas: Vec<f64>,
    /// `L(h)` at the final loads.
    pub nominal_aggregate: Vec<f64>,
    /// `L̂(h) = L(h) + Σ_n δ_n(h)`.
    pub robust_aggregate: Vec<f64>,
    pub outer_iterations: usize,
    pub convergence_trace: Vec<TraceRecord>,
    pub contraction_constants: Vec<f64>,
    pub contraction_certified: Vec<bool>,
    pub ne_certificate: f64,
    pub converged: bool,
    pub naive: bool,
    pub tau: f64,
    pub sweep_mode: SweepMode,
    /// Wall clock per outer iteration; not serialized so that results stay
    /// byte-stable.
    #[serde(skip)]
    pub wall_clock_ms: Vec<f64>,
}

impl EquilibriumResult {
    /// Errors the users scheduled against: δ* for robust runs, zero for naive.
    pub fn played_errors(&self) -> Vec<ErrorProfile> {
        if self.naive {
            self.errors
                .iter()
                .map(|e| ErrorProfile {
                    user_id: e.user_id,
                    delta: vec![0.0; e.delta.len()],
                })
                .collect()
        } else {
            self.errors.clone()
        }
    }

    /// Day-ahead cost of every user at `(l*, δ*)`.
    pub fn user_costs(&self, grid: &GridCostParams) -> Vec<f64> {
        let total_error = column_totals(self.errors.iter().map(|e| e.delta.as_slice()), grid.slot_count());
        self.loads
            .iter()
            .zip(&self.errors)
            .map(|(l, e)| cost_with_totals(&l.l, &e.delta, &self.nominal_aggregate, &total_error, grid))
            .collect()
    }

    pub fn total_cost(&self, grid: &GridCostParams) -> f64 {
        self.user_costs(grid).iter().sum()
    }

    /// Turns a non-converged result into [`DsmError::MaxOuterIterations`].
    pub fn into_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(DsmError::MaxOuterIterations {
                iterations: self.outer_iterations,
                relative_change: self.convergence_trace.last().map_or(f64::NAN, |t| t.relative_change),
            })
        }
    }
}

fn column_totals<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Outer iterations between equilibrium checks while the proximal centres
/// are still moving.
const CERTIFICATE_INTERVAL: usize = 10;

/// Mutable game state shared by the sweeps.
struct State<'a> {
    users: &'a [UserModel],
    grid: &'a GridCostParams,
    loads: Vec<Vec<f64>>,
    schedules: Vec<DeviceSchedule>,
    /// Errors by slot then user.
    deltas: Vec<Vec<f64>>,
    total_load: Vec<f64>,
    total_error: Vec<f64>,
}

impl<'a> State<'a> {
    fn context(&self, n: usize) -> ResponseContext {
        let slots = self.grid.slot_count();
        ResponseContext {
            others_load: (0..slots).map(|h| self.total_load[h] - self.loads[n][h]).collect(),
            total_error: self.total_error.clone(),
            own_error: (0..slots).map(|h| self.deltas[h][n]).collect(),
        }
    }

    fn set_load(&mut self, n: usize, l: Vec<f64>) {
        for h in 0..l.len() {
            self.total_load[h] += l[h] - self.loads[n][h];
        }
        self.loads[n] = l;
    }

    fn set_deltas(&mut self, deltas: Vec<Vec<f64>>) {
        self.total_error = deltas.iter().map(|d| d.iter().sum()).collect();
        self.deltas = deltas;
    }

    fn recompute_total(&mut self) {
        let rows: Vec<&[f64]> = self.loads.iter().map(|l| l.as_slice()).collect();
        self.total_load = column_totals(rows.into_iter(), self.grid.slot_count());
    }
}

/// Largest relative cost reduction a single user can obtain by deviating,
/// with the others' loads and the errors held fixed.
fn max_unilateral_gain(state: &State, active: &[usize], probes: usize) -> Result<f64> {
    let gains = active
        .par_iter()
        .map(|&n| -> Result<f64> {
            let m = &state.users[n];
            let ctx = state.context(n);
            let cur = response_objective(&state.loads[n], &ctx, &state.loads[n], 0.0, state.grid);
            let scale: f64 = (0..state.grid.slot_count())
                .map(|h| state.grid.k[h] * (state.total_load[h] + state.total_error[h]).abs() * state.loads[n][h].abs())
                .sum::<f64>()
                .max(cur.abs())
                .max(f64::MIN_POSITIVE);
            let br = best_response(m, &ctx, &state.loads[n], 0.0, state.grid)?;
            let mut best = br.objective;
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            for _ in 0..probes {
                let d = sample_feasible_schedule(m, &mut rng)?;
                best = best.min(response_objective(&d.load(m), &ctx, &state.loads[n], 0.0, state.grid));
            }
            Ok(((cur - best) / scale).max(0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(gains.into_iter().fold(0.0, f64::max))
}

struct AggregateOutcome {
    evaluations: usize,
    converged: bool,
}

/// Responses of all active users to the aggregate `total` (with errors and
/// centres fixed), the consistency residual `total − Σ_n l_n(total)` and its
/// Jacobian.
struct AggregateEval {
    residual: DVector<f64>,
    jacobian: DMatrix<f64>,
    responses: Vec<DeviceSchedule>,
}

fn evaluate_aggregate(
    state: &State,
    active: &[usize],
    passive: &[f64],
    centroid: &[Vec<f64>],
    tau: f64,
    total: &DVector<f64>,
) -> Result<AggregateEval> {
    let grid = state.grid;
    let slots = grid.slot_count();
    let q: Vec<f64> = grid.k.iter().map(|k| k + tau).collect();
    let out = active
        .par_iter()
        .map(|&n| -> Result<(DeviceSchedule, Vec<f64>, DMatrix<f64>)> {
            let m = &state.users[n];
            let lin: Vec<f64> = (0..slots)
                .map(|h| {
                    grid.k[h] * (total[h] + state.total_error[h] + state.deltas[h][n])
                        - tau * centroid[n][h]
                })
                .collect();
            let (schedule, sensitivity) = solve_load_qp_with_sensitivity(m, &q, &lin)?;
            let l = schedule.load(m);
            Ok((schedule, l, sensitivity))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut residual = DVector::from_iterator(slots, (0..slots).map(|h| total[h] - passive[h]));
    let mut sensitivity_sum = DMatrix::<f64>::zeros(slots, slots);
    let mut responses = Vec::with_capacity(out.len());
    for (schedule, l, sensitivity) in out {
        for h in 0..slots {
            residual[h] -= l[h];
        }
        sensitivity_sum += sensitivity;
        responses.push(schedule);
    }
    // each response sees the aggregate through K∘T
    let jacobian = DMatrix::identity(slots, slots) - sensitivity_sum * DMatrix::from_diagonal(&DVector::from_column_slice(&grid.k));
    Ok(AggregateEval {
        residual,
        jacobian,
        responses,
    })
}

/// Regularized equilibrium for fixed errors and centres.
///
/// At an equilibrium every user best-responds to the aggregate it helps
/// form. Responding to a given aggregate `T` is a QP with curvature
/// `K + τ`, each response is piecewise affine in `T`, and consistency
/// `T = Σ_n l_n(T)` is the stationarity condition of a strongly convex
/// function of the |H| aggregate values whose gradient is `K∘(T − Σ_n l_n)`.
/// It is solved by semismooth Newton steps on the residual.
fn aggregate_equilibrium(
    state: &mut State,
    active: &[usize],
    centroid: &[Vec<f64>],
    tau: f64,
    tol: f64,
) -> Result<AggregateOutcome> {
    const MAX_EVALUATIONS: usize = 200;
    const LINE_SEARCH_STEPS: usize = 12;
    let grid = state.grid;
    let slots = grid.slot_count();
    if active.is_empty() {
        return Ok(AggregateOutcome {
            evaluations: 0,
            converged: true,
        });
    }
    let mut passive = state.total_load.clone();
    for &n in active {
        for h in 0..slots {
            passive[h] -= state.loads[n][h];
        }
    }
    let k = DVector::from_column_slice(&grid.k);
    let slope_along = |e: &AggregateEval, dir: &DVector<f64>| e.residual.component_mul(&k).dot(dir);
    let mut total = DVector::from_column_slice(&state.total_load);
    let mut cur = evaluate_aggregate(state, active, &passive, centroid, tau, &total)?;
    let mut evaluations = 1;
    let mut converged = false;
    while evaluations < MAX_EVALUATIONS {
        let scale = 1.0 + total.amax();
        if cur.residual.amax() <= tol * scale {
            converged = true;
            break;
        }
        let mut dir = cur
            .jacobian
            .clone()
            .lu()
            .solve(&(-&cur.residual))
            .unwrap_or_else(|| -&cur.residual);
        let mut slope = slope_along(&cur, &dir);
        if !(slope < 0.0) {
            dir = -&cur.residual;
            slope = slope_along(&cur, &dir);
        }
        // The merit is a difference of large sums and loses its resolution
        // long before the residual does, so steps are chosen from the
        // directional derivative alone: the merit is convex along the line,
        // and a step where its slope has shrunk by half in magnitude is a
        // descent step.
        let mut lo = (0.0, slope);
        let mut hi: Option<(f64, f64)> = None;
        let mut t = 1.0;
        let mut best: Option<(f64, DVector<f64>, AggregateEval)> = None;
        for _ in 0..LINE_SEARCH_STEPS {
            let trial = &total + t * &dir;
            let e = evaluate_aggregate(state, active, &passive, centroid, tau, &trial)?;
            evaluations += 1;
            let d = slope_along(&e, &dir);
            if best.as_ref().is_none_or(|b| d.abs() < b.0.abs()) {
                best = Some((d, trial, e));
            }
            if d.abs() <= 0.5 * slope.abs() || evaluations >= MAX_EVALUATIONS {
                break;
            }
            if d < 0.0 {
                lo = (t, d);
            } else {
                hi = Some((t, d));
            }
            t = match hi {
                None => 2.0 * t,
                Some((th, dh)) => {
                    let (tl, dl) = lo;
                    let width = th - tl;
                    let secant = tl - dl * width / (dh - dl);
                    secant.clamp(tl + 0.1 * width, th - 0.1 * width)
                }
            };
        }
        let (_, next_total, next) = best.expect("line search evaluates at least once");
        total = next_total;
        cur = next;
    }
    for (&n, schedule) in active.iter().zip(cur.responses) {
        let l = schedule.load(&state.users[n]);
        state.schedules[n] = schedule;
        state.loads[n] = l;
    }
    state.recompute_total();
    Ok(AggregateOutcome {
        evaluations,
        converged,
    })
}

/// Runs the robust (or, with `config.naive`, the forecast-agnostic)
/// equilibrium computation. Hitting `max_outer` still returns the last
/// iterate, flagged `converged = false`.
pub fn solve(scenario: &Scenario, config: &SolverConfig) -> Result<EquilibriumResult> {
    config.validate()?;
    scenario.validate()?;
    let users = &scenario.users;
    let grid = &scenario.grid;
    let slots = grid.slot_count();
    let d = users.len();
    let tau = config.tau.unwrap_or_else(|| config.default_tau(grid, d));
    let active: Vec<usize> = users.iter().filter(|u| u.kind.is_active()).map(|u| u.user_id).collect();

    let loads: Vec<Vec<f64>> = users.iter().map(|u| u.base_demand.clone()).collect();
    let mut state = State {
        users,
        grid,
        total_load: vec![0.0; slots],
        loads,
        schedules: vec![DeviceSchedule::zeros(slots); d],
        deltas: vec![vec![0.0; d]; slots],
        total_error: vec![0.0; slots],
    };
    state.recompute_total();
    check_positive_aggregate(&state.total_load)?;
    if !config.naive {
        let init = (0..slots)
            .map(|h| vec![(grid.alpha[h] / d as f64).sqrt(); d])
            .collect();
        state.set_deltas(init);
    }
    let mut centroid = state.loads.clone();
    let mut lambdas = vec![0.0; slots];
    let mut trace = Vec::new();
    let mut wall = Vec::new();
    let mut converged = false;
    let mut certificate = f64::INFINITY;
    let mut last_check = 0;
    let started = Instant::now();

    for iteration in 1..=config.max_outer {
        let previous: Vec<Vec<f64>> = active.iter().map(|&n| state.loads[n].clone()).collect();
        let mut response_rounds = 1;
        let mut reached_regularized = false;
        match config.sweep_mode {
            SweepMode::Aggregate => {
                let tol = 0.1 * config.ne_tol;
                let out = aggregate_equilibrium(&mut state, &active, &centroid, tau, tol)?;
                response_rounds = out.evaluations;
                reached_regularized = out.converged;
            }
            SweepMode::GaussSeidel => {
                for &n in &active {
                    let ctx = state.context(n);
                    let br = best_response(&users[n], &ctx, &centroid[n], tau, grid)?;
                    state.schedules[n] = br.schedule;
                    state.set_load(n, br.load.l);
                }
            }
            SweepMode::Jacobi => {
                let responses = active
                    .par_iter()
                    .map(|&n| best_response(&users[n], &state.context(n), &centroid[n], tau, grid))
                    .collect::<Result<Vec<_>>>()?;
                for (&n, br) in active.iter().zip(responses) {
                    state.schedules[n] = br.schedule;
                    state.loads[n] = br.load.l;
                }
                state.recompute_total();
            }
        }
        check_positive_aggregate(&state.total_load)?;

        let (delta_residual, inner_iterations) = if config.naive {
            (0.0, 0)
        } else {
            let rows: Vec<&[f64]> = state.loads.iter().map(|l| l.as_slice()).collect();
            let sol = solve_all_slots(&rows, grid, Some(&state.deltas), config.inner_tol, config.max_inner, 1.0)?;
            lambdas = sol.solutions.iter().map(|s| s.lambda).collect();
            let residual = sol.total_residual;
            let its = sol.max_iterations;
            state.set_deltas(sol.solutions.into_iter().map(|s| s.delta).collect());
            (residual, its)
        };

        let change: f64 = active
            .iter()
            .zip(&previous)
            .map(|(&n, p)| {
                state.loads[n].iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt();
        let size: f64 = state.loads.iter().map(|l| norm_sq(l)).sum::<f64>().sqrt();
        let relative_change = change / size;

        let centroid_updated = reached_regularized || change <= config.ne_tol;
        if centroid_updated {
            for &n in &active {
                centroid[n] = state.loads[n].clone();
            }
        }
        let mut ne_certificate = None;
        let due = centroid_updated || iteration >= last_check + CERTIFICATE_INTERVAL;
        if relative_change <= config.outer_tol && due {
            last_check = iteration;
            certificate = max_unilateral_gain(&state, &active, 0)?;
            ne_certificate = Some(certificate);
            converged = certificate <= 10.0 * config.ne_tol;
        }
        trace.push(TraceRecord {
            iteration,
            relative_change,
            delta_residual,
            inner_iterations,
            response_rounds,
            centroid_updated,
            ne_certificate,
        });
        wall.push(started.elapsed().as_secs_f64() * 1e3);
        log::debug!(
            "iteration {iteration}: relative change {relative_change:.3e}, certificate {ne_certificate:?}"
        );
        if converged {
            break;
        }
    }
    if !converged {
        log::warn!("equilibrium not reached after {} outer iterations", config.max_outer);
        if !certificate.is_finite() {
            certificate = max_unilateral_gain(&state, &active, 0)?;
        }
    }

    // naive users never saw δ; the supplier still prices the worst case
    if config.naive {
        let rows: Vec<&[f64]> = state.loads.iter().map(|l| l.as_slice()).collect();
        let sol = solve_all_slots(&rows, grid, None, config.inner_tol, config.max_inner, 1.0)?;
        lambdas = sol.solutions.iter().map(|s| s.lambda).collect();
        state.set_deltas(sol.solutions.into_iter().map(|s| s.delta).collect());
    }

    let contraction_constants: Vec<f64> = (0..slots)
        .into_par_iter()
        .map(|h| {
            let column: Vec<f64> = state.loads.iter().map(|l| l[h]).collect();
            SlotErrorProblem::from_loads(h, &column, grid).map(|p| contraction_constant(&p))
        })
        .collect::<Result<Vec<_>>>()?;
    for (h, q) in contraction_constants.iter().enumerate() {
        if *q >= 1.0 {
            log::warn!("slot {}: contraction not certified (q = {q:.4})", h + 1);
        }
    }

    let errors: Vec<ErrorProfile> = (0..d)
        .map(|n| ErrorProfile {
            user_id: n,
            delta: (0..slots).map(|h| state.deltas[h][n]).collect(),
        })
        .collect();
    let robust_aggregate = (0..slots).map(|h| state.total_load[h] + state.total_error[h]).collect();
    Ok(EquilibriumResult {
        loads: state
            .loads
            .iter()
            .enumerate()
            .map(|(n, l)| LoadProfile { user_id: n, l: l.clone() })
            .collect(),
        errors,
        schedules: state.schedules,
        lambdas,
        nominal_aggregate: state.total_load,
        robust_aggregate,
        outer_iterations: trace.len(),
        convergence_trace: trace,
        contraction_certified: contraction_constants.iter().map(|q| *q < 1.0).collect(),
        contraction_constants,
        ne_certificate: certificate,
        converged,
        naive: config.naive,
        tau,
        sweep_mode: config.sweep_mode,
        wall_clock_ms: wall,
    })
}

/// Maximum relative improvement any active user could reach by deviating
/// unilaterally from `result`, checked by exact re-optimization plus
/// `probes` random feasible schedules per user.
pub fn verify_equilibrium(result: &EquilibriumResult, scenario: &Scenario, probes: usize) -> Result<f64> {
    let slots = scenario.slot_count();
    let d = scenario.users.len();
    if result.loads.len() != d {
        return Err(DsmError::DimensionMismatch(format!(
            "result has {} users, scenario {d}",
            result.loads.len()
        )));
    }
    let played = result.played_errors();
    let mut state = State {
        users: &scenario.users,
        grid: &scenario.grid,
        loads: result.loads.iter().map(|l| l.l.clone()).collect(),
        schedules: Vec::new(),
        deltas: Vec::new(),
        total_load: vec![0.0; slots],
        total_error: vec![0.0; slots],
    };
    state.recompute_total();
    state.set_deltas((0..slots).map(|h| played.iter().map(|e| e.delta[h]).collect()).collect());
    let active: Vec<usize> = scenario.active_users().map(|u| u.user_id).collect();
    max_unilateral_gain(&state, &active, probes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotMonotonicity {
    pub slot: usize,
    pub lambda: f64,
    /// `½K_h(|D|+1) + β_m`.
    pub threshold: f64,
    /// Eigenvalue of `(K+2β−2λ)I + K11ᵀ` along `1`.
    pub eig_along_ones: f64,
    /// Eigenvalue on the complement of `1`.
    pub eig_orthogonal: f64,
    pub strongly_monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// Smallest eigenvalue of the day-ahead game Jacobian `diag(K) ⊗ (I + 11ᵀ)`.
    pub day_ahead_min_eigenvalue: f64,
    pub slots: Vec<SlotMonotonicity>,
}

/// Closed-form spectra of the day-ahead Jacobian and the per-slot error-game
/// Hessian at `result`.
pub fn monotonicity_diagnostics(scenario: &Scenario, result: &EquilibriumResult) -> MonotonicityReport {
    let grid = &scenario.grid;
    let d = scenario.users.len() as f64;
    let slots = (0..grid.slot_count())
        .map(|h| slot_monotonicity(h, grid.k[h], grid.beta_m, result.lambdas[h], d))
        .collect();
    MonotonicityReport {
        day_ahead_min_eigenvalue: day_ahead_spectrum_floor(&grid.k, scenario.users.len()),
        slots,
    }
}

/// Smallest eigenvalue of `diag(K) ⊗ (I + 11ᵀ)` for `users` users: `min K`,
/// or `2·min K` when there is no second user.
pub fn day_ahead_spectrum_floor(k: &[f64], users: usize) -> f64 {
    let kmin = k.iter().cloned().fold(f64::INFINITY, f64::min);
    if users == 1 {
        2.0 * kmin
    } else {
        kmin
    }
}

pub fn slot_monotonicity(slot: usize, k: f64, beta_m: f64, lambda: f64, users: f64) -> SlotMonotonicity {
    let base = k + 2.0 * beta_m - 2.0 * lambda;
    let threshold = 0.5 * k * (users + 1.0) + beta_m;
    SlotMonotonicity {
        slot,
        lambda,
        threshold,
        eig_along_ones: base + k * users,
        eig_orthogonal: base,
        strongly_monotone: lambda > threshold,
    }
}
