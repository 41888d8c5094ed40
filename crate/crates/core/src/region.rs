//! Per-user feasible load sets and the proximal best-response subproblem.
//!
//! An active user's net load is `l_n(h) = e_n(h) − g(h) + s⁺(h) − s⁻(h)`
//! where `g` is dispatchable generation and `s±` are battery charge and
//! discharge. The battery follows the linear lossy model
//! `q(h) = a·q(h−1) + η⁺·s⁺(h) − η⁻·s⁻(h)`, must stay within `[0, c]` and
//! end the day at `q0 + ε`. The resulting set of loads is a compact convex
//! polytope, so the best response is a convex QP solved by [`crate::qp`].

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};
use crate::model::{ErrorProfile, GridCostParams, LoadProfile};
use crate::qp::{solve_qp, QpOptions, QpProblem, SparseRow};

/// Constraint tolerance used when checking schedules.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UserKind {
    Passive,
    GenOnly,
    StoreOnly,
    GenStore,
}

impl UserKind {
    pub fn has_generation(self) -> bool {
        matches!(self, UserKind::GenOnly | UserKind::GenStore)
    }

    pub fn has_storage(self) -> bool {
        matches!(self, UserKind::StoreOnly | UserKind::GenStore)
    }

    pub fn is_active(self) -> bool {
        self != UserKind::Passive
    }
}

/// Demand and device parameters of one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserModel {
    pub user_id: usize,
    pub kind: UserKind,
    /// Fixed consumption e_n(h) (kWh).
    pub base_demand: Vec<f64>,
    /// Maximum generation per slot (kWh/h).
    pub gen_cap_hour: f64,
    /// Daily generation budget (kWh/day).
    pub gen_cap_day: f64,
    /// Battery capacity c_n (kWh).
    pub storage_capacity: f64,
    /// Maximum charge or discharge per slot (kWh/h).
    pub charge_rate_max: f64,
    /// Per-slot charge retention factor.
    pub leak_rate: f64,
    pub charge_eff: f64,
    pub discharge_eff: f64,
    /// Charge at the start of the day (kWh).
    pub initial_charge: f64,
    /// Required change of charge over the day (kWh).
    pub end_of_day_delta: f64,
}

impl UserModel {
    pub fn passive(user_id: usize, base_demand: Vec<f64>) -> Self {
        Self {
            user_id,
            kind: UserKind::Passive,
            base_demand,
            gen_cap_hour: 0.0,
            gen_cap_day: 0.0,
            storage_capacity: 0.0,
            charge_rate_max: 0.0,
            leak_rate: 1.0,
            charge_eff: 1.0,
            discharge_eff: 1.0,
            initial_charge: 0.0,
            end_of_day_delta: 0.0,
        }
    }

    pub fn slot_count(&self) -> usize {
        self.base_demand.len()
    }

    pub fn terminal_charge(&self) -> f64 {
        self.initial_charge + self.end_of_day_delta
    }

    /// Parameter sanity plus a reachability test of the terminal charge.
    /// `Ok` means the feasible region is nonempty.
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| DsmError::InfeasibleUserModel {
            user: self.user_id,
            reason,
        };
        if self.base_demand.is_empty() {
            return Err(bad("empty demand profile".into()));
        }
        if self.base_demand.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(bad("base demand must be finite and nonnegative".into()));
        }
        if self.kind.has_generation() {
            if !(self.gen_cap_hour >= 0.0 && self.gen_cap_day >= 0.0) {
                return Err(bad("generation caps must be nonnegative".into()));
            }
        }
        if self.kind.has_storage() {
            let c = self.storage_capacity;
            if !(c >= 0.0 && self.charge_rate_max >= 0.0) {
                return Err(bad("storage capacity and rate must be nonnegative".into()));
            }
            if !(self.leak_rate > 0.0 && self.leak_rate <= 1.0) {
                return Err(bad(format!("leak rate {} not in (0, 1]", self.leak_rate)));
            }
            if !(self.charge_eff > 0.0 && self.charge_eff <= 1.0) {
                return Err(bad(format!("charge efficiency {} not in (0, 1]", self.charge_eff)));
            }
            if !(self.discharge_eff >= 1.0) {
                return Err(bad(format!("discharge efficiency {} below 1", self.discharge_eff)));
            }
            if !(self.initial_charge >= 0.0 && self.initial_charge <= c) {
                return Err(bad("initial charge outside [0, c]".into()));
            }
            let target = self.terminal_charge();
            let (lo, hi) = reachable_charge(self).last().copied().unwrap();
            if target < lo - FEASIBILITY_TOL || target > hi + FEASIBILITY_TOL {
                return Err(bad(format!(
                    "terminal charge {target} unreachable (reachable [{lo}, {hi}])"
                )));
            }
        }
        Ok(())
    }
}

/// Interval of battery charge reachable after each slot.
fn reachable_charge(m: &UserModel) -> Vec<(f64, f64)> {
    let (a, c) = (m.leak_rate, m.storage_capacity);
    let up = m.charge_eff * m.charge_rate_max;
    let down = m.discharge_eff * m.charge_rate_max;
    let mut lo = m.initial_charge;
    let mut hi = m.initial_charge;
    (0..m.slot_count())
        .map(|_| {
            lo = (a * lo - down).max(0.0);
            hi = (a * hi + up).min(c);
            (lo, hi)
        })
        .collect()
}

/// Device decisions of one user over the day. Absent devices are all-zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSchedule {
    pub g: Vec<f64>,
    pub s_plus: Vec<f64>,
    pub s_minus: Vec<f64>,
}

impl DeviceSchedule {
    pub fn zeros(slots: usize) -> Self {
        Self {
            g: vec![0.0; slots],
            s_plus: vec![0.0; slots],
            s_minus: vec![0.0; slots],
        }
    }

    /// Net grid load implied by the schedule.
    pub fn load(&self, m: &UserModel) -> Vec<f64> {
        (0..m.slot_count())
            .map(|h| m.base_demand[h] - self.g[h] + self.s_plus[h] - self.s_minus[h])
            .collect()
    }

    /// Battery charge after each slot.
    pub fn state_of_charge(&self, m: &UserModel) -> Vec<f64> {
        let mut q = m.initial_charge;
        (0..m.slot_count())
            .map(|h| {
                q = m.leak_rate * q + m.charge_eff * self.s_plus[h]
                    - m.discharge_eff * self.s_minus[h];
                q
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub constraint: &'static str,
    /// 1-based slot, when the constraint is per slot.
    pub slot: Option<usize>,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

/// Checks every schedule constraint of `m` within [`FEASIBILITY_TOL`].
pub fn feasible_region_check(m: &UserModel, d: &DeviceSchedule) -> FeasibilityReport {
    let slots = m.slot_count();
    let mut v = Vec::new();
    let mut push = |constraint: &'static str, slot: Option<usize>, amount: f64| {
        if amount > FEASIBILITY_TOL {
            v.push(Violation {
                constraint,
                slot,
                amount,
            });
        }
    };
    if d.g.len() != slots || d.s_plus.len() != slots || d.s_minus.len() != slots {
        push("dimension", None, f64::INFINITY);
        return FeasibilityReport {
            feasible: false,
            violations: v,
        };
    }
    let gen = m.kind.has_generation();
    let store = m.kind.has_storage();
    for h in 0..slots {
        let s = Some(h + 1);
        if gen {
            push("gen_lower", s, -d.g[h]);
            push("gen_cap_hour", s, d.g[h] - m.gen_cap_hour);
        } else {
            push("gen_absent", s, d.g[h].abs());
        }
        if store {
            push("charge_lower", s, -d.s_plus[h]);
            push("charge_rate", s, d.s_plus[h] - m.charge_rate_max);
            push("discharge_lower", s, -d.s_minus[h]);
            push("discharge_rate", s, d.s_minus[h] - m.charge_rate_max);
        } else {
            push("charge_absent", s, d.s_plus[h].abs());
            push("discharge_absent", s, d.s_minus[h].abs());
        }
    }
    if gen {
        push("gen_cap_day", None, d.g.iter().sum::<f64>() - m.gen_cap_day);
    }
    if store {
        let q = d.state_of_charge(m);
        for (h, &qh) in q.iter().enumerate() {
            push("soc_lower", Some(h + 1), -qh);
            push("soc_upper", Some(h + 1), qh - m.storage_capacity);
        }
        push("soc_terminal", None, (q[slots - 1] - m.terminal_charge()).abs());
    }
    FeasibilityReport {
        feasible: v.is_empty(),
        violations: v,
    }
}

/// What user n sees from everyone else while optimizing: the others' total
/// load, the total error Σ_k δ_k(h) (own error included) and its own error.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseContext {
    pub others_load: Vec<f64>,
    pub total_error: Vec<f64>,
    pub own_error: Vec<f64>,
}

impl ResponseContext {
    pub fn from_profiles(n: usize, loads: &[LoadProfile], errors: &[ErrorProfile]) -> Result<Self> {
        if loads.len() != errors.len() || n >= loads.len() {
            return Err(DsmError::DimensionMismatch(format!(
                "user {n} with {} load and {} error profiles",
                loads.len(),
                errors.len()
            )));
        }
        let slots = loads[n].l.len();
        let mut others_load = vec![0.0; slots];
        let mut total_error = vec![0.0; slots];
        for (m, (lp, ep)) in loads.iter().zip(errors).enumerate() {
            if lp.l.len() != slots || ep.delta.len() != slots {
                return Err(DsmError::DimensionMismatch(format!("profile {m} length")));
            }
            for h in 0..slots {
                if m != n {
                    others_load[h] += lp.l[h];
                }
                total_error[h] += ep.delta[h];
            }
        }
        Ok(Self {
            others_load,
            total_error,
            own_error: errors[n].delta.clone(),
        })
    }
}

/// Value of f_n(l_n, l_−n, δ) + (τ/2)‖l_n − l̄_n‖².
pub fn response_objective(
    l: &[f64],
    ctx: &ResponseContext,
    centroid: &[f64],
    tau: f64,
    params: &GridCostParams,
) -> f64 {
    let mut v = 0.0;
    for h in 0..l.len() {
        let total = l[h] + ctx.others_load[h] + ctx.total_error[h];
        let d = l[h] - centroid[h];
        v += params.k[h] * total * (l[h] + ctx.own_error[h])
            + params.beta_m * ctx.own_error[h] * ctx.own_error[h]
            + 0.5 * tau * d * d;
    }
    v
}

#[derive(Debug, Clone)]
pub struct BestResponse {
    pub load: LoadProfile,
    pub schedule: DeviceSchedule,
    pub objective: f64,
    /// Scaled KKT residual of the QP solution.
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Variable layout of the device QP.
struct Layout {
    slots: usize,
    gen: Option<usize>,
    charge: Option<usize>,
    discharge: Option<usize>,
    dim: usize,
}

impl Layout {
    fn new(m: &UserModel) -> Self {
        let slots = m.slot_count();
        let mut dim = 0;
        let mut take = |present: bool| {
            present.then(|| {
                let off = dim;
                dim += slots;
                off
            })
        };
        let gen = take(m.kind.has_generation());
        let charge = take(m.kind.has_storage());
        let discharge = take(m.kind.has_storage());
        Self {
            slots,
            gen,
            charge,
            discharge,
            dim,
        }
    }

    /// (variable offset, sign in the load) for every device variable block.
    fn blocks(&self) -> Vec<(usize, f64)> {
        [(self.gen, -1.0), (self.charge, 1.0), (self.discharge, -1.0)]
            .into_iter()
            .filter_map(|(o, s)| o.map(|o| (o, s)))
            .collect()
    }

    fn schedule(&self, x: &[f64]) -> DeviceSchedule {
        let mut d = DeviceSchedule::zeros(self.slots);
        let copy = |off: Option<usize>, dst: &mut Vec<f64>| {
            if let Some(o) = off {
                dst.copy_from_slice(&x[o..o + self.slots]);
            }
        };
        copy(self.gen, &mut d.g);
        copy(self.charge, &mut d.s_plus);
        copy(self.discharge, &mut d.s_minus);
        d
    }
}

/// Constraint rows `Gx ≤ h`, `Ax = b` of the device polytope.
fn device_constraints(m: &UserModel, lay: &Layout) -> (Vec<SparseRow>, Vec<f64>, Vec<SparseRow>, Vec<f64>) {
    let slots = lay.slots;
    let mut g = Vec::new();
    let mut h = Vec::new();
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut bounds = |off: usize, hi: f64| {
        for t in 0..slots {
            g.push(SparseRow::single(off + t, 1.0));
            h.push(hi);
            g.push(SparseRow::single(off + t, -1.0));
            h.push(0.0);
        }
    };
    if let Some(o) = lay.gen {
        bounds(o, m.gen_cap_hour);
    }
    if let (Some(cp), Some(dc)) = (lay.charge, lay.discharge) {
        bounds(cp, m.charge_rate_max);
        bounds(dc, m.charge_rate_max);
    }
    if let Some(o) = lay.gen {
        g.push(SparseRow {
            idx: (o..o + slots).collect(),
            val: vec![1.0; slots],
        });
        h.push(m.gen_cap_day);
    }
    if let (Some(cp), Some(dc)) = (lay.charge, lay.discharge) {
        let a_leak = m.leak_rate;
        let mut decay = 1.0; // a^(t+1)
        for t in 0..slots {
            decay *= a_leak;
            let mut row = SparseRow::default();
            let mut w = 1.0;
            for k in (0..=t).rev() {
                row.push(cp + k, w * m.charge_eff);
                row.push(dc + k, -w * m.discharge_eff);
                w *= a_leak;
            }
            let base = decay * m.initial_charge;
            if t + 1 == slots {
                a.push(row);
                b.push(m.terminal_charge() - base);
            } else {
                h.push(m.storage_capacity - base);
                g.push(row.clone());
                h.push(base);
                g.push(row.negated());
            }
        }
    }
    (g, h, a, b)
}

/// Solves the proximal best response of user `m`:
/// `argmin_{l ∈ Ω_n} f_n(l, l_−n, δ) + (τ/2)‖l − l̄‖²`.
///
/// `tau = 0` is allowed; the problem stays strictly convex in the load
/// because every K_h is positive.
pub fn best_response(
    m: &UserModel,
    ctx: &ResponseContext,
    centroid: &[f64],
    tau: f64,
    params: &GridCostParams,
) -> Result<BestResponse> {
    let slots = m.slot_count();
    for (name, len) in [
        ("others_load", ctx.others_load.len()),
        ("total_error", ctx.total_error.len()),
        ("own_error", ctx.own_error.len()),
        ("centroid", centroid.len()),
        ("k", params.k.len()),
    ] {
        if len != slots {
            return Err(DsmError::DimensionMismatch(format!(
                "{name} has {len} slots, user {} has {slots}",
                m.user_id
            )));
        }
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(DsmError::InvalidParameter(format!("tau = {tau} must be >= 0")));
    }
    m.validate()?;

    if !m.kind.is_active() {
        let l = m.base_demand.clone();
        let objective = response_objective(&l, ctx, centroid, tau, params);
        return Ok(BestResponse {
            load: LoadProfile {
                user_id: m.user_id,
                l,
            },
            schedule: DeviceSchedule::zeros(slots),
            objective,
            kkt_residual: 0.0,
            iterations: 0,
        });
    }

    let q: Vec<f64> = (0..slots).map(|h| 2.0 * params.k[h] + tau).collect();
    let lin: Vec<f64> = (0..slots)
        .map(|h| {
            params.k[h] * (ctx.others_load[h] + ctx.total_error[h] + ctx.own_error[h])
                - tau * centroid[h]
        })
        .collect();
    let (schedule, kkt_residual, iterations) = solve_load_qp(m, &q, &lin)?;
    let l = schedule.load(m);
    let objective = response_objective(&l, ctx, centroid, tau, params);
    Ok(BestResponse {
        load: LoadProfile {
            user_id: m.user_id,
            l,
        },
        schedule,
        objective,
        kkt_residual,
        iterations,
    })
}

/// Minimizes `Σ_h ½ q_h l_h² + b_h l_h` over the feasible loads of an active
/// user. Returns the schedule, the scaled KKT residual and the iteration
/// count.
pub fn solve_load_qp(m: &UserModel, q: &[f64], b: &[f64]) -> Result<(DeviceSchedule, f64, usize)> {
    if !m.kind.is_active() {
        return Ok((DeviceSchedule::zeros(m.slot_count()), 0.0, 0));
    }
    let (lay, qp) = load_qp(m, q, b);
    let sol = solve_qp(&qp, None, &QpOptions::default())?;
    let mut schedule = lay.schedule(&sol.x);
    // interior-point iterates sit a hair inside the bounds; snap round-off
    clamp_schedule(m, &mut schedule);
    Ok((schedule, sol.kkt.max(), sol.iterations))
}

/// Like [`solve_load_qp`], also returning `∂l/∂b`, the derivative of the
/// optimal load with respect to the linear term.
///
/// The load minimizes a `q`-weighted quadratic over a polytope, so locally it
/// moves inside the face cut out by the strongly active constraints; with `U`
/// an orthonormal basis of the load directions along that face the
/// derivative is `−U (Uᵀ diag(q) U)⁻¹ Uᵀ`. At a degenerate point this is one
/// element of the generalized Jacobian.
pub fn solve_load_qp_with_sensitivity(m: &UserModel, q: &[f64], b: &[f64]) -> Result<(DeviceSchedule, DMatrix<f64>)> {
    let slots = m.slot_count();
    if !m.kind.is_active() {
        return Ok((DeviceSchedule::zeros(slots), DMatrix::zeros(slots, slots)));
    }
    let (lay, qp) = load_qp(m, q, b);
    let sol = solve_qp(&qp, None, &QpOptions::default())?;
    let mut active: Vec<&SparseRow> = qp.eq.iter().collect();
    for (i, row) in qp.ineq.iter().enumerate() {
        let slack = qp.ineq_rhs[i] - row.dot(&sol.x);
        if sol.z[i] > slack.max(0.0) {
            active.push(row);
        }
    }
    let mut rows = DMatrix::<f64>::zeros(active.len().max(1), lay.dim);
    for (r, row) in active.iter().enumerate() {
        for (&j, &v) in row.idx.iter().zip(&row.val) {
            rows[(r, j)] += v;
        }
    }
    // null space of the active rows
    let gram = rows.transpose() * &rows;
    let eig = gram.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let null: Vec<_> = (0..lay.dim)
        .filter(|&k| eig.eigenvalues[k] <= 1e-10 * (1.0 + top))
        .map(|k| eig.eigenvectors.column(k).into_owned())
        .collect();
    let mut v = DMatrix::<f64>::zeros(slots, null.len());
    for (k, z) in null.iter().enumerate() {
        for &(o, sign) in &lay.blocks() {
            for t in 0..slots {
                v[(t, k)] += sign * z[o + t];
            }
        }
    }
    let mut sensitivity = DMatrix::zeros(slots, slots);
    if v.ncols() > 0 {
        let svd = v.svd(true, false);
        let uv = svd.u.expect("left singular vectors requested");
        let vmax = svd.singular_values.amax();
        let cols: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > 1e-9 * (1.0 + vmax))
            .collect();
        if !cols.is_empty() {
            let basis: DMatrix<f64> = uv.select_columns(&cols);
            let weighted: DMatrix<f64> = DMatrix::from_fn(slots, cols.len(), |t, k| q[t] * basis[(t, k)]);
            let reduced: DMatrix<f64> = basis.transpose() * &weighted;
            if let Some(chol) = reduced.cholesky() {
                let inv = chol.inverse();
                sensitivity = -(&basis * inv * basis.transpose());
            }
        }
    }
    let mut schedule = lay.schedule(&sol.x);
    clamp_schedule(m, &mut schedule);
    Ok((schedule, sensitivity))
}

fn load_qp(m: &UserModel, q: &[f64], b: &[f64]) -> (Layout, QpProblem) {
    let slots = m.slot_count();
    let lay = Layout::new(m);
    let blocks = lay.blocks();
    let mut p = DMatrix::zeros(lay.dim, lay.dim);
    let mut c = vec![0.0; lay.dim];
    for t in 0..slots {
        for &(oi, si) in &blocks {
            c[oi + t] = si * (q[t] * m.base_demand[t] + b[t]);
            for &(oj, sj) in &blocks {
                p[(oi + t, oj + t)] = q[t] * si * sj;
            }
        }
    }
    let (ineq, ineq_rhs, eq, eq_rhs) = device_constraints(m, &lay);
    let qp = QpProblem {
        p,
        c,
        ineq,
        ineq_rhs,
        eq,
        eq_rhs,
    };
    (lay, qp)
}

fn clamp_schedule(m: &UserModel, d: &mut DeviceSchedule) {
    for v in d.g.iter_mut() {
        *v = v.clamp(0.0, m.gen_cap_hour.max(0.0));
    }
    for v in d.s_plus.iter_mut().chain(d.s_minus.iter_mut()) {
        *v = v.clamp(0.0, m.charge_rate_max.max(0.0));
    }
}

/// Draws a random schedule from the feasible region of `m`.
///
/// Storage trajectories are sampled forward inside the intersection of the
/// forward-reachable and backward-admissible charge intervals, so the
/// terminal condition always holds.
pub fn sample_feasible_schedule<R: Rng + ?Sized>(m: &UserModel, rng: &mut R) -> Result<DeviceSchedule> {
    m.validate()?;
    let slots = m.slot_count();
    let mut d = DeviceSchedule::zeros(slots);
    if m.kind.has_generation() {
        let mut g: Vec<f64> = (0..slots)
            .map(|_| rng.random::<f64>() * m.gen_cap_hour)
            .collect();
        let total: f64 = g.iter().sum();
        if total > m.gen_cap_day {
            let scale = m.gen_cap_day / total * rng.random_range(0.5..=1.0);
            g.iter_mut().for_each(|v| *v *= scale);
        }
        d.g = g;
    }
    if m.kind.has_storage() {
        let a = m.leak_rate;
        let c = m.storage_capacity;
        let up = m.charge_eff * m.charge_rate_max;
        let down = m.discharge_eff * m.charge_rate_max;
        // backward admissible intervals for q after slot t
        let mut admissible = vec![(0.0, 0.0); slots];
        admissible[slots - 1] = (m.terminal_charge(), m.terminal_charge());
        for t in (0..slots - 1).rev() {
            let (lo, hi) = admissible[t + 1];
            admissible[t] = (((lo - up) / a).max(0.0), ((hi + down) / a).min(c));
        }
        let mut q = m.initial_charge;
        for t in 0..slots {
            let (alo, ahi) = admissible[t];
            let lo = (a * q - down).max(0.0).max(alo);
            let hi = (a * q + up).min(c).min(ahi);
            let next = if hi > lo { rng.random_range(lo..=hi) } else { 0.5 * (lo + hi) };
            let u = next - a * q;
            if u >= 0.0 {
                d.s_plus[t] = (u / m.charge_eff).min(m.charge_rate_max);
            } else {
                d.s_minus[t] = (-u / m.discharge_eff).min(m.charge_rate_max);
            }
            q = a * q + m.charge_eff * d.s_plus[t] - m.discharge_eff * d.s_minus[t];
        }
    }
    Ok(d)
}
