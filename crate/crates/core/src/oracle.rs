//! Brute-force cross-checks of the solvers on micro-instances.
//!
//! Each check recomputes a quantity from its definition by exhaustive
//! search or a dense factorization and reports the largest discrepancy
//! against the main implementation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};
use crate::game::{day_ahead_spectrum_floor, slot_monotonicity};
use crate::model::GridCostParams;
use crate::region::{best_response, response_objective, ResponseContext, UserKind, UserModel};
use crate::worst_case::{solve_slot_errors, SlotErrorProblem};

pub const MAX_ORACLE_USERS: usize = 3;
pub const MAX_ORACLE_SLOTS: usize = 2;

pub const SLOT_ERROR_TOL: f64 = 1e-3;
pub const BEST_RESPONSE_TOL: f64 = 1e-2;
pub const SPECTRUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub users: usize,
    pub slots: usize,
    /// Coupling of the slot-error mapping under test; `-1` negates `A`.
    pub coupling: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            users: 3,
            slots: 2,
            coupling: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCase {
    pub check: &'static str,
    pub instance: String,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub cases: Vec<OracleCase>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn max_discrepancy(&self, check: &str) -> f64 {
        self.cases
            .iter()
            .filter(|c| c.check == check)
            .map(|c| c.discrepancy)
            .fold(0.0, f64::max)
    }
}

fn case(check: &'static str, instance: String, discrepancy: f64, tolerance: f64) -> OracleCase {
    OracleCase {
        check,
        instance,
        discrepancy,
        tolerance,
        passed: discrepancy <= tolerance,
    }
}

/// Two-user slot-error fixed point by angular search on the quarter circle
/// `‖δ‖ = √α, δ ≥ 0`: the point where `δ` is parallel to `a + (11ᵀ − I)δ`.
pub fn slot_errors_by_angle(a: [f64; 2], alpha: f64) -> [f64; 2] {
    let r = alpha.sqrt();
    let misfit = |th: f64| {
        let d = [r * th.cos(), r * th.sin()];
        let v = [a[0] + d[1], a[1] + d[0]];
        let n = v[0].hypot(v[1]);
        (d[0] - r * v[0] / n).hypot(d[1] - r * v[1] / n)
    };
    let scan = |lo: f64, hi: f64, steps: usize| {
        let mut best = (f64::INFINITY, lo);
        for i in 0..=steps {
            let th = lo + (hi - lo) * i as f64 / steps as f64;
            let v = misfit(th);
            if v < best.0 {
                best = (v, th);
            }
        }
        best.1
    };
    let quarter = std::f64::consts::FRAC_PI_2;
    let coarse = scan(0.0, quarter, 100_000);
    let width = quarter / 100_000.0;
    let th = scan((coarse - width).max(0.0), (coarse + width).min(quarter), 20_000);
    [r * th.cos(), r * th.sin()]
}

/// Best proximal-response objective of a generation-only user by grid search
/// over `g ∈ [0, g_max]^H` with the daily budget, `|H| ≤ 2`.
pub fn best_response_by_grid(
    m: &UserModel,
    ctx: &ResponseContext,
    centroid: &[f64],
    tau: f64,
    params: &GridCostParams,
    steps: usize,
) -> Result<f64> {
    let slots = m.slot_count();
    if m.kind != UserKind::GenOnly || slots == 0 || slots > MAX_ORACLE_SLOTS {
        return Err(DsmError::Config(
            "grid search covers generation-only users with at most 2 slots".into(),
        ));
    }
    let step = m.gen_cap_hour / steps as f64;
    let second = if slots == 2 { steps } else { 0 };
    let mut best = f64::INFINITY;
    for i in 0..=steps {
        for j in 0..=second {
            let g = [i as f64 * step, j as f64 * step];
            if g[..slots].iter().sum::<f64>() > m.gen_cap_day + 1e-12 {
                continue;
            }
            let l: Vec<f64> = (0..slots).map(|h| m.base_demand[h] - g[h]).collect();
            best = best.min(response_objective(&l, ctx, centroid, tau, params));
        }
    }
    Ok(best)
}

/// Extreme eigenvalues of `(K + 2β − 2λ)I + K11ᵀ` of size `users`, from a
/// dense symmetric eigensolver.
pub fn slot_hessian_extremes(k: f64, beta_m: f64, lambda: f64, users: usize) -> (f64, f64) {
    let h = DMatrix::from_fn(users, users, |i, j| k + if i == j { k + 2.0 * beta_m - 2.0 * lambda } else { 0.0 });
    let eig = h.symmetric_eigen().eigenvalues;
    (eig.min(), eig.max())
}

/// Smallest eigenvalue of the day-ahead Jacobian with blocks `diag(2K)` on
/// the diagonal and `diag(K)` off it.
pub fn day_ahead_min_eigenvalue(k: &[f64], users: usize) -> f64 {
    let slots = k.len();
    let dim = users * slots;
    let jac = DMatrix::from_fn(dim, dim, |r, c| {
        let (n, h) = (r / slots, r % slots);
        let (m, g) = (c / slots, c % slots);
        if h != g {
            0.0
        } else if n == m {
            2.0 * k[h]
        } else {
            k[h]
        }
    });
    jac.symmetric_eigen().eigenvalues.min()
}

/// Runs all three checks on the bundled micro-instances.
pub fn run_oracle_check(opts: &OracleOptions) -> Result<OracleReport> {
    if opts.users == 0 || opts.users > MAX_ORACLE_USERS || opts.slots == 0 || opts.slots > MAX_ORACLE_SLOTS {
        return Err(DsmError::Config(format!(
            "oracle instances are capped at {MAX_ORACLE_USERS} users and {MAX_ORACLE_SLOTS} slots (got {} and {})",
            opts.users, opts.slots
        )));
    }
    let mut cases = Vec::new();

    for (a, alpha) in [([5.0, 4.0], 0.25), ([0.3, 0.2], 1.0), ([1.0, 0.4], 4.0), ([2.0, 2.0], 1.0)] {
        let mut prob = SlotErrorProblem::new(0, a.to_vec(), alpha, 0.5, 0.001)?;
        prob.coupling = opts.coupling;
        let oracle = slot_errors_by_angle(a, alpha);
        let discrepancy = match solve_slot_errors(&prob, 1e-12, 10_000) {
            Ok(sol) => (sol.delta[0] - oracle[0]).abs().max((sol.delta[1] - oracle[1]).abs()),
            Err(_) => f64::INFINITY,
        };
        cases.push(case(
            "slot_errors",
            format!("a=({}, {}) alpha={alpha}", a[0], a[1]),
            discrepancy,
            SLOT_ERROR_TOL,
        ));
    }

    let slots = opts.slots;
    let demand: Vec<f64> = [2.0, 1.5][..slots].to_vec();
    let m = UserModel {
        kind: UserKind::GenOnly,
        gen_cap_hour: 1.0,
        gen_cap_day: 1.2,
        ..UserModel::passive(0, demand.clone())
    };
    let others = (opts.users - 1) as f64;
    for (k, tau, error) in [(1.0, 0.01, 0.0), (0.5, 0.5, 0.3), (2.0, 0.0, 0.1), (0.1, 1.0, 0.0)] {
        let params = GridCostParams::new(vec![k; slots], vec![1.0; slots], 0.001)?;
        let ctx = ResponseContext {
            others_load: vec![1.0 + others; slots],
            total_error: vec![2.0 * error; slots],
            own_error: vec![error; slots],
        };
        let br = best_response(&m, &ctx, &demand, tau, &params)?;
        let grid = best_response_by_grid(&m, &ctx, &demand, tau, &params, 1000)?;
        cases.push(case(
            "best_response",
            format!("K={k} tau={tau} delta={error}"),
            (br.objective - grid).abs(),
            BEST_RESPONSE_TOL,
        ));
    }

    let users = opts.users;
    for (k, beta, lambda) in [(0.5, 0.001, 1.3), (0.04, 0.001, 0.2), (1.0, 0.0, 0.5)] {
        let closed = slot_monotonicity(0, k, beta, lambda, users as f64);
        let (lo, hi) = slot_hessian_extremes(k, beta, lambda, users);
        // a single user has no direction orthogonal to 1
        let orthogonal = if users == 1 { closed.eig_along_ones } else { closed.eig_orthogonal };
        let closed_lo = closed.eig_along_ones.min(orthogonal);
        let closed_hi = closed.eig_along_ones.max(orthogonal);
        cases.push(case(
            "monotonicity",
            format!("K={k} beta={beta} lambda={lambda}"),
            (lo - closed_lo).abs().max((hi - closed_hi).abs()),
            SPECTRUM_TOL,
        ));
    }
    let k: Vec<f64> = [0.04, 0.06][..slots].to_vec();
    let dense = day_ahead_min_eigenvalue(&k, users);
    let closed = day_ahead_spectrum_floor(&k, users);
    cases.push(case(
        "monotonicity",
        "day-ahead Jacobian".into(),
        (dense - closed).abs(),
        SPECTRUM_TOL,
    ));

    Ok(OracleReport { cases })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_instances_pass() {
        for users in 1..=3 {
            for slots in 1..=2 {
                let r = run_oracle_check(&OracleOptions { users, slots, coupling: 1.0 }).unwrap();
                assert!(r.passed(), "{users} users, {slots} slots: {:?}", r.cases);
            }
        }
    }

    #[test]
    fn negated_coupling_is_caught() {
        let r = run_oracle_check(&OracleOptions {
            coupling: -1.0,
            ..OracleOptions::default()
        })
        .unwrap();
        assert!(!r.passed());
        assert!(r.max_discrepancy("slot_errors") > 1e-1);
    }

    #[test]
    fn size_cap_is_enforced() {
        let err = run_oracle_check(&OracleOptions {
            users: 4,
            ..OracleOptions::default()
        })
        .unwrap_err();
        assert!(matches!(err, DsmError::Config(_)));
    }
}
