//! Inner maximization over per-slot forecast errors.
//!
//! For a fixed load profile the errors of slot h solve a concave game whose
//! variational equilibrium is the unique fixed point of
//! `T(δ) = Π_X(√α·(a + Aδ)/‖a + Aδ‖)` with `a_n = L(h) + l_n(h)` and
//! `A = 11ᵀ − I`. `X` is the nonnegative quadrant cut by the halfspace
//! `1ᵀx + 1ᵀa/(|D|−1) ≥ √(α|D|)` on which T is a self-map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};
use crate::model::GridCostParams;

/// Norm below which the map direction is considered undefined.
pub const DEGENERATE_NORM: f64 = 1e-12;
const MEMBERSHIP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotErrorProblem {
    /// 0-based slot index.
    pub slot: usize,
    /// `a_n = L(h) + l_n(h)` for every user.
    pub a: Vec<f64>,
    pub alpha: f64,
    pub k: f64,
    pub beta_m: f64,
    /// Multiplier on the interaction matrix. 1 is the actual game; other
    /// values only serve mutation tests of the oracle harness.
    #[serde(default = "unit")]
    pub coupling: f64,
}

fn unit() -> f64 {
    1.0
}

impl SlotErrorProblem {
    pub fn new(slot: usize, a: Vec<f64>, alpha: f64, k: f64, beta_m: f64) -> Result<Self> {
        if a.is_empty() {
            return Err(DsmError::EmptyUserSet);
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(DsmError::InvalidParameter(format!("alpha = {alpha} must be positive")));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(DsmError::InvalidParameter("non-finite a".into()));
        }
        Ok(Self {
            slot,
            a,
            alpha,
            k,
            beta_m,
            coupling: 1.0,
        })
    }

    /// Builds the slot problem from the users' loads at slot `h`.
    pub fn from_loads(h: usize, loads_at_h: &[f64], params: &GridCostParams) -> Result<Self> {
        let total: f64 = loads_at_h.iter().sum();
        if total <= 0.0 {
            return Err(DsmError::NonPositiveAggregateLoad {
                slot: h + 1,
                value: total,
            });
        }
        let a = loads_at_h.iter().map(|l| total + l).collect();
        Self::new(h, a, params.alpha[h], params.k[h], params.beta_m)
    }

    pub fn user_count(&self) -> usize {
        self.a.len()
    }

    /// `1ᵀa/(|D|−1) − √(α|D|)`; X requires `1ᵀx + offset ≥ 0`.
    pub fn halfspace_offset(&self) -> f64 {
        let d = self.user_count() as f64;
        self.a.iter().sum::<f64>() / (d - 1.0) - (self.alpha * d).sqrt()
    }

    /// `a + Aδ` with `(Aδ)_n = Σ_{k≠n} δ_k`.
    pub fn direction(&self, delta: &[f64]) -> Vec<f64> {
        let sum: f64 = delta.iter().sum();
        self.a
            .iter()
            .zip(delta)
            .map(|(a, d)| a + self.coupling * (sum - d))
            .collect()
    }

    /// Starting point `√(α/|D|)·1`.
    pub fn initial_errors(&self) -> Vec<f64> {
        vec![(self.alpha / self.user_count() as f64).sqrt(); self.user_count()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotErrorSolution {
    pub delta: Vec<f64>,
    pub lambda: f64,
    /// Last fixed-point step length ‖δ^{k+1} − δ^k‖.
    pub residual: f64,
    pub iterations: usize,
    /// True when a negative component had to be clamped to zero.
    pub clamped: bool,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

pub fn halfspace_contains(x: &[f64], prob: &SlotErrorProblem) -> bool {
    if prob.user_count() == 1 {
        return x.iter().all(|v| *v >= -MEMBERSHIP_TOL);
    }
    x.iter().all(|v| *v >= -MEMBERSHIP_TOL)
        && x.iter().sum::<f64>() + prob.halfspace_offset() >= -MEMBERSHIP_TOL
}

/// Shifts `x` along `1` onto the bounding hyperplane when it lies on the
/// wrong side. Nonnegativity is not enforced here.
pub fn project_halfspace(x: &[f64], prob: &SlotErrorProblem) -> Vec<f64> {
    let d = prob.user_count();
    if d == 1 {
        return x.to_vec();
    }
    let gap = x.iter().sum::<f64>() + prob.halfspace_offset();
    if gap >= 0.0 {
        return x.to_vec();
    }
    // equals (√α − (A⁻¹a + x)ᵀ1/√|D|)/√|D| per component
    let shift = -gap / d as f64;
    x.iter().map(|v| v + shift).collect()
}

pub fn fixed_point_map(delta: &[f64], prob: &SlotErrorProblem) -> Result<Vec<f64>> {
    let dir = prob.direction(delta);
    let n = norm(&dir);
    if n < DEGENERATE_NORM {
        return Err(DsmError::DegenerateDirection {
            slot: prob.slot + 1,
            norm: n,
        });
    }
    let scale = prob.alpha.sqrt() / n;
    let u: Vec<f64> = dir.iter().map(|v| v * scale).collect();
    Ok(project_halfspace(&u, prob))
}

/// `max_n |δ_n − √α·(a + Aδ)_n/‖a + Aδ‖|`.
pub fn stationarity_residual(delta: &[f64], prob: &SlotErrorProblem) -> f64 {
    let dir = prob.direction(delta);
    let n = norm(&dir);
    if n < DEGENERATE_NORM {
        return f64::INFINITY;
    }
    let s = prob.alpha.sqrt() / n;
    delta
        .iter()
        .zip(&dir)
        .map(|(d, v)| (d - s * v).abs())
        .fold(0.0, f64::max)
}

/// Shared dual price `λ = K + β_m + K·‖a + Aδ‖/(2√α)`.
pub fn lambda_from_delta(delta: &[f64], prob: &SlotErrorProblem) -> f64 {
    let n = norm(&prob.direction(delta));
    prob.k + prob.beta_m + prob.k * n / (2.0 * prob.alpha.sqrt())
}

pub fn solve_slot_errors(prob: &SlotErrorProblem, tol: f64, max_iter: usize) -> Result<SlotErrorSolution> {
    solve_slot_errors_from(prob, None, tol, max_iter)
}

/// Fixed-point iteration from `start` (falls back to the symmetric start
/// when `start` is outside X).
pub fn solve_slot_errors_from(
    prob: &SlotErrorProblem,
    start: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<SlotErrorSolution> {
    if !(tol > 0.0) {
        return Err(DsmError::InvalidParameter(format!("tol = {tol} must be positive")));
    }
    let d = prob.user_count();
    if d == 1 {
        let delta = vec![prob.alpha.sqrt() * prob.a[0].signum()];
        return Ok(SlotErrorSolution {
            lambda: lambda_from_delta(&delta, prob),
            delta,
            residual: 0.0,
            iterations: 0,
            clamped: false,
        });
    }
    let mut delta = match start {
        Some(s) if s.len() == d && halfspace_contains(s, prob) => s.to_vec(),
        _ => prob.initial_errors(),
    };
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let next = fixed_point_map(&delta, prob)?;
        residual = dist(&next, &delta);
        delta = next;
        if residual <= tol {
            let clamped = delta.iter().any(|v| *v < 0.0);
            if clamped {
                log::warn!(
                    "slot {}: negative worst-case error clamped to zero (min {:e})",
                    prob.slot + 1,
                    delta.iter().cloned().fold(f64::INFINITY, f64::min)
                );
                delta.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            return Ok(SlotErrorSolution {
                lambda: lambda_from_delta(&delta, prob),
                delta,
                residual,
                iterations: it,
                clamped,
            });
        }
    }
    Err(DsmError::MaxIterationsExceeded {
        solver: "slot error fixed point",
        iterations: max_iter,
        residual,
    })
}

/// Euclidean projection of `v` onto `{x ≥ 0, 1ᵀx = s}`.
pub(crate) fn project_simplex(v: &[f64], s: f64) -> Vec<f64> {
    if s <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = u[0];
    let mut theta = u[0] - s;
    for (j, uj) in u.iter().enumerate().skip(1) {
        cum += uj;
        let t = (cum - s) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// `γ = min_{x ∈ X} ‖a + Ax‖` and its minimizer.
///
/// With `S = 1ᵀx` the objective is `‖a + S·1 − x‖`, so for fixed S the inner
/// problem is a projection onto a scaled simplex. The partial minimum is
/// convex in S and is minimized by golden-section search.
pub fn min_direction_norm(prob: &SlotErrorProblem) -> (f64, Vec<f64>) {
    let d = prob.user_count();
    let c = prob.coupling;
    if d == 1 || c == 0.0 {
        return (norm(&prob.a), vec![0.0; d]);
    }
    let eval = |s: f64| -> (f64, Vec<f64>) {
        let v: Vec<f64> = prob.a.iter().map(|a| a / c + s).collect();
        let x = project_simplex(&v, s);
        (c.abs() * dist(&v, &x), x)
    };
    let lo = (-prob.halfspace_offset()).max(0.0);
    let mut step = norm(&prob.a).max(1.0);
    while eval(lo + 2.0 * step).0 < eval(lo + step).0 {
        step *= 2.0;
    }
    let (mut l, mut r) = (lo, lo + 2.0 * step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut m1 = r - g * (r - l);
    let mut m2 = l + g * (r - l);
    let (mut f1, mut f2) = (eval(m1).0, eval(m2).0);
    for _ in 0..200 {
        if f1 <= f2 {
            r = m2;
            m2 = m1;
            f2 = f1;
            m1 = r - g * (r - l);
            f1 = eval(m1).0;
        } else {
            l = m1;
            m1 = m2;
            f1 = f2;
            m2 = l + g * (r - l);
            f2 = eval(m2).0;
        }
        if r - l <= 1e-15 * (1.0 + r.abs()) {
            break;
        }
    }
    let mut best = eval(0.5 * (l + r));
    let at_lo = eval(lo);
    if at_lo.0 < best.0 {
        best = at_lo;
    }
    best
}

/// `q = √α·(|D|−1)/γ`; `q < 1` certifies that T contracts on X.
pub fn contraction_constant(prob: &SlotErrorProblem) -> f64 {
    let gamma = min_direction_norm(prob).0;
    prob.alpha.sqrt() * (prob.user_count() as f64 - 1.0) / gamma
}

/// Per-slot errors for a full load profile.
#[derive(Debug, Clone)]
pub struct AllSlotErrors {
    /// `solutions[h]` for every slot.
    pub solutions: Vec<SlotErrorSolution>,
    /// `Σ_h ‖δ^{k+1}(h) − δ^k(h)‖` at the final iterate.
    pub total_residual: f64,
    pub max_iterations: usize,
}

/// Solves every slot to a joint tolerance `Σ_h ‖Δδ_h‖ ≤ tol`, slots in
/// parallel. `loads[n]` is user n's profile, `start[h]` an optional warm
/// start per slot.
pub fn solve_all_slots(
    loads: &[&[f64]],
    params: &GridCostParams,
    start: Option<&[Vec<f64>]>,
    tol: f64,
    max_iter: usize,
    coupling: f64,
) -> Result<AllSlotErrors> {
    let slots = params.slot_count();
    let per_slot_tol = tol / slots as f64;
    let solutions = (0..slots)
        .into_par_iter()
        .map(|h| {
            let column: Vec<f64> = loads.iter().map(|l| l[h]).collect();
            let mut prob = SlotErrorProblem::from_loads(h, &column, params)?;
            prob.coupling = coupling;
            let s = start.map(|s| s[h].as_slice());
            solve_slot_errors_from(&prob, s, per_slot_tol, max_iter)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AllSlotErrors {
        total_residual: solutions.iter().map(|s| s.residual).sum(),
        max_iterations: solutions.iter().map(|s| s.iterations).max().unwrap_or(0),
        solutions,
    })
}
