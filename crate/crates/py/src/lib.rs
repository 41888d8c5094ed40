//! Python bindings for the robust DSM solvers.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use robust_dsm::game::{self, EquilibriumResult, SolverConfig, SweepMode};
use robust_dsm::oracle::{run_oracle_check, OracleOptions};
use robust_dsm::realtime::{self, MonteCarloConfig, PenaltyParams};
use robust_dsm::scenario::{self, ScenarioSpec};
use robust_dsm::worst_case::{solve_slot_errors, SlotErrorProblem};
use robust_dsm::DsmError;

fn to_py(e: DsmError) -> PyErr {
    match e {
        DsmError::MaxIterationsExceeded { .. }
        | DsmError::MaxOuterIterations { .. }
        | DsmError::DegenerateDirection { .. }
        | DsmError::NonPositiveAggregateLoad { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn sweep_mode(name: &str) -> PyResult<SweepMode> {
    match name {
        "gauss-seidel" | "gauss_seidel" => Ok(SweepMode::GaussSeidel),
        "jacobi" => Ok(SweepMode::Jacobi),
        "aggregate" => Ok(SweepMode::Aggregate),
        other => Err(PyValueError::new_err(format!("unknown sweep mode {other:?}"))),
    }
}

/// A population with its grid cost parameters.
#[pyclass(name = "Scenario", module = "robust_dsm_py", frozen)]
struct PyScenario {
    inner: scenario::Scenario,
}

#[pymethods]
impl PyScenario {
    /// Generates the default calibrated scenario for `users` users.
    #[staticmethod]
    #[pyo3(signature = (users, seed = 0, beta_m = None))]
    fn generate(users: usize, seed: u64, beta_m: Option<f64>) -> PyResult<Self> {
        let mut spec = ScenarioSpec::with_users(users, seed);
        if let Some(b) = beta_m {
            spec.beta_m = b;
        }
        scenario::build_scenario(&spec).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        scenario::Scenario::from_json(text).map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn user_count(&self) -> usize {
        self.inner.users.len()
    }

    #[getter]
    fn active_count(&self) -> usize {
        self.inner.active_users().count()
    }

    #[getter]
    fn slot_count(&self) -> usize {
        self.inner.slot_count()
    }

    #[getter]
    fn k(&self) -> Vec<f64> {
        self.inner.grid.k.clone()
    }

    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.inner.grid.alpha.clone()
    }

    #[getter]
    fn beta_m(&self) -> f64 {
        self.inner.grid.beta_m
    }

    /// Aggregate load with every user at its base demand.
    fn base_load(&self) -> Vec<f64> {
        self.inner.base_load()
    }

    /// Load-weighted average price at the base demand.
    fn average_price(&self) -> f64 {
        scenario::average_price(&self.inner.grid.k, &self.inner.base_load())
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(users={}, active={}, slots={})",
            self.user_count(),
            self.active_count(),
            self.slot_count()
        )
    }
}

/// Equilibrium loads, worst-case errors and prices.
#[pyclass(name = "Equilibrium", module = "robust_dsm_py", frozen)]
struct PyEquilibrium {
    inner: EquilibriumResult,
}

#[pymethods]
impl PyEquilibrium {
    #[getter]
    fn loads(&self) -> Vec<Vec<f64>> {
        self.inner.loads.iter().map(|l| l.l.clone()).collect()
    }

    #[getter]
    fn errors(&self) -> Vec<Vec<f64>> {
        self.inner.errors.iter().map(|e| e.delta.clone()).collect()
    }

    #[getter]
    fn lambdas(&self) -> Vec<f64> {
        self.inner.lambdas.clone()
    }

    #[getter]
    fn nominal_aggregate(&self) -> Vec<f64> {
        self.inner.nominal_aggregate.clone()
    }

    #[getter]
    fn robust_aggregate(&self) -> Vec<f64> {
        self.inner.robust_aggregate.clone()
    }

    #[getter]
    fn outer_iterations(&self) -> usize {
        self.inner.outer_iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn naive(&self) -> bool {
        self.inner.naive
    }

    #[getter]
    fn ne_certificate(&self) -> f64 {
        self.inner.ne_certificate
    }

    fn user_costs(&self, scenario: &PyScenario) -> Vec<f64> {
        self.inner.user_costs(&scenario.inner.grid)
    }

    fn total_cost(&self, scenario: &PyScenario) -> f64 {
        self.inner.total_cost(&scenario.inner.grid)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Equilibrium(users={}, outer_iterations={}, converged={}, naive={})",
            self.inner.loads.len(),
            self.inner.outer_iterations,
            self.inner.converged,
            self.inner.naive
        )
    }
}

/// Runs the robust (or naive) best-response algorithm.
#[pyfunction]
#[pyo3(signature = (scenario, sweep = "aggregate", tau = None, naive = false, outer_tol = None, max_outer = None))]
fn solve(
    py: Python<'_>,
    scenario: &PyScenario,
    sweep: &str,
    tau: Option<f64>,
    naive: bool,
    outer_tol: Option<f64>,
    max_outer: Option<usize>,
) -> PyResult<PyEquilibrium> {
    let defaults = SolverConfig::default();
    let config = SolverConfig {
        tau,
        naive,
        sweep_mode: sweep_mode(sweep)?,
        outer_tol: outer_tol.unwrap_or(defaults.outer_tol),
        max_outer: max_outer.unwrap_or(defaults.max_outer),
        ..defaults
    };
    let s = scenario.inner.clone();
    py.detach(move || game::solve(&s, &config))
        .map(|inner| PyEquilibrium { inner })
        .map_err(to_py)
}

/// Largest relative cost reduction any active user could obtain alone.
#[pyfunction]
#[pyo3(signature = (equilibrium, scenario, probes = 0))]
fn verify_equilibrium(equilibrium: &PyEquilibrium, scenario: &PyScenario, probes: usize) -> PyResult<f64> {
    game::verify_equilibrium(&equilibrium.inner, &scenario.inner, probes).map_err(to_py)
}

/// Worst-case errors of one slot: returns `(delta, lambda, iterations)`.
#[pyfunction]
#[pyo3(signature = (a, alpha, k, beta_m, tol = 1e-10, max_iter = 1000))]
fn slot_errors(a: Vec<f64>, alpha: f64, k: f64, beta_m: f64, tol: f64, max_iter: usize) -> PyResult<(Vec<f64>, f64, usize)> {
    let prob = SlotErrorProblem::new(0, a, alpha, k, beta_m).map_err(to_py)?;
    let sol = solve_slot_errors(&prob, tol, max_iter).map_err(to_py)?;
    Ok((sol.delta, sol.lambda, sol.iterations))
}

/// Real-time dead-band penalty for one slot.
#[pyfunction]
fn penalty(l: f64, delta_star: f64, l_rt: f64, nu: f64, upsilon: f64) -> f64 {
    let p = PenaltyParams {
        nu: vec![nu],
        upsilon_penalty: vec![upsilon],
        kappa: vec![nu + upsilon],
    };
    realtime::penalty_psi(0, l, delta_star, l_rt, &p)
}

/// Monte Carlo comparison of the robust and non-robust real-time bills.
#[pyfunction]
#[pyo3(signature = (robust, naive, scenario, runs = 100, seed = 0))]
fn monte_carlo_compare<'py>(
    py: Python<'py>,
    robust: &PyEquilibrium,
    naive: &PyEquilibrium,
    scenario: &PyScenario,
    runs: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let config = MonteCarloConfig {
        runs,
        seed,
        ..MonteCarloConfig::default()
    };
    let s = realtime::monte_carlo_compare(&robust.inner, &naive.inner, &scenario.inner.grid, &config)
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("users", s.users)?;
    out.set_item("mean_robust", s.mean_robust)?;
    out.set_item("mean_nonrobust", s.mean_nonrobust)?;
    out.set_item("gain_pct", s.gain_pct)?;
    out.set_item("stderr", s.stderr)?;
    Ok(out)
}

/// Runs the brute-force oracle comparison; returns whether every check passed.
#[pyfunction]
#[pyo3(signature = (users = 3, slots = 2))]
fn oracle_check(users: usize, slots: usize) -> PyResult<bool> {
    let report = run_oracle_check(&OracleOptions {
        users,
        slots,
        coupling: 1.0,
    })
    .map_err(to_py)?;
    Ok(report.passed())
}

#[pymodule]
fn robust_dsm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyEquilibrium>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(verify_equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(slot_errors, m)?)?;
    m.add_function(wrap_pyfunction!(penalty, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_compare, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_check, m)?)?;
    Ok(())
}
