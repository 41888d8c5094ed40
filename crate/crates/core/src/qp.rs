//! Dense primal-dual interior-point solver for small convex QPs
//!
//! ```text
//! minimize    ½ xᵀPx + cᵀx
//! subject to  Gx ≤ h,  Ax = b
//! ```
//!
//! with P positive semidefinite. Constraint rows are stored sparsely because
//! the per-user device polytopes are mostly simple bounds. Each Newton step
//! reduces to a Cholesky solve on `P + GᵀWG` plus a Schur complement for the
//! (few) equality rows. Mehrotra predictor-corrector steps are used.

use nalgebra::{DMatrix, DVector};

use crate::error::{DsmError, Result};

/// One constraint row `Σ val[k]·x[idx[k]]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn single(i: usize, v: f64) -> Self {
        Self {
            idx: vec![i],
            val: vec![v],
        }
    }

    pub fn push(&mut self, i: usize, v: f64) {
        self.idx.push(i);
        self.val.push(v);
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, &v)| v * x[i]).sum()
    }

    fn add_scaled_to(&self, w: f64, out: &mut [f64]) {
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            out[i] += w * v;
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            idx: self.idx.clone(),
            val: self.val.iter().map(|v| -v).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub c: Vec<f64>,
    pub ineq: Vec<SparseRow>,
    pub ineq_rhs: Vec<f64>,
    pub eq: Vec<SparseRow>,
    pub eq_rhs: Vec<f64>,
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut v = 0.0;
        for i in 0..n {
            let mut px = 0.0;
            for j in 0..n {
                px += self.p[(i, j)] * x[j];
            }
            v += x[i] * (0.5 * px + self.c[i]);
        }
        v
    }

    /// Gradient Px + c.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..n).map(|j| self.p[(i, j)] * x[j]).sum::<f64>() + self.c[i])
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 200,
        }
    }
}

/// Scaled KKT residuals of a primal-dual point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers of the inequality rows (≥ 0).
    pub z: Vec<f64>,
    /// Multipliers of the equality rows.
    pub y: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt: KktResidual,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// KKT residuals of `(x, z, y)` for `qp`, computed from scratch. Slacks are
/// implied by `h − Gx`, so primal infeasibility shows up directly.
pub fn kkt_residual(qp: &QpProblem, x: &[f64], z: &[f64], y: &[f64]) -> KktResidual {
    let (grad, scale_d) = dual_residual(qp, x, z, y);
    let mut primal = 0.0f64;
    let mut comp = 0.0f64;
    for ((row, &h), &zi) in qp.ineq.iter().zip(&qp.ineq_rhs).zip(z) {
        let slack = h - row.dot(x);
        primal = primal.max((-slack).max(0.0));
        comp = comp.max((zi * slack).abs());
        primal = primal.max((-zi).max(0.0));
    }
    for (row, &b) in qp.eq.iter().zip(&qp.eq_rhs) {
        primal = primal.max((row.dot(x) - b).abs());
    }
    let scale_h = 1.0 + inf_norm(&qp.ineq_rhs).max(inf_norm(&qp.eq_rhs));
    KktResidual {
        stationarity: inf_norm(&grad) / scale_d,
        primal: primal / scale_h,
        complementarity: comp / scale_d.max(scale_h),
    }
}

/// Re-solves the problem as an equality-constrained QP on the face picked
/// out by the interior-point solution (rows whose multiplier exceeds their
/// slack).
///
/// A small complementarity gap still leaves an `O(√gap)` error in directions
/// of weak curvature; on the right face the KKT system is linear and is
/// solved to round-off. The regularized system is used as a preconditioner
/// for iterative refinement, which keeps it solvable when `P` is singular on
/// the face or the active rows are dependent. Returns `None` when the
/// result is not primal and dual feasible.
fn polish(qp: &QpProblem, x: &[f64], s: &[f64], z: &[f64], y: &[f64]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut active: Vec<bool> = z.iter().zip(s).map(|(z, s)| z > s).collect();
    for _ in 0..POLISH_PASSES {
        let (px, pz, py, changed) = polish_face(qp, x, z, y, &mut active)?;
        if !changed {
            return Some((px, pz, py));
        }
    }
    None
}

const POLISH_PASSES: usize = 8;

/// One equality-constrained solve on the face `active`. Rows that end up
/// violated join the face and rows with negative multipliers leave it;
/// `changed` reports whether that happened.
fn polish_face(
    qp: &QpProblem,
    x: &[f64],
    z: &[f64],
    y: &[f64],
    active: &mut [bool],
) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>, bool)> {
    const STEPS: usize = 5;
    let n = qp.dim();
    let on: Vec<usize> = (0..qp.ineq.len()).filter(|&i| active[i]).collect();
    let rows: Vec<(&SparseRow, f64)> = on
        .iter()
        .map(|&i| (&qp.ineq[i], qp.ineq_rhs[i]))
        .chain(qp.eq.iter().zip(qp.eq_rhs.iter().copied()))
        .collect();
    let dim = n + rows.len();
    let diag_max = (0..n).fold(0.0f64, |m, i| m.max(qp.p[(i, i)].abs()));
    let rho = 1e-9 * (1.0 + diag_max);
    let mut exact = DMatrix::zeros(dim, dim);
    exact.view_mut((0, 0), (n, n)).copy_from(&qp.p);
    for (r, (row, _)) in rows.iter().enumerate() {
        for (&j, &v) in row.idx.iter().zip(&row.val) {
            exact[(n + r, j)] += v;
            exact[(j, n + r)] += v;
        }
    }
    let mut reg = exact.clone();
    for i in 0..dim {
        reg[(i, i)] += if i < n { rho } else { -rho };
    }
    let lu = reg.lu();
    let rhs = DVector::from_iterator(dim, qp.c.iter().map(|c| -c).chain(rows.iter().map(|(_, b)| *b)));
    let mut sol = DVector::from_iterator(
        dim,
        x.iter()
            .copied()
            .chain(on.iter().map(|&i| z[i]))
            .chain(y.iter().copied()),
    );
    for _ in 0..STEPS {
        let r = &rhs - &exact * &sol;
        sol += lu.solve(&r)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let px: Vec<f64> = sol.rows(0, n).iter().copied().collect();
    let scale_h = 1.0 + inf_norm(&qp.ineq_rhs).max(inf_norm(&qp.eq_rhs));
    let scale_z = 1.0 + inf_norm(z).max(inf_norm(y));
    let mut pz = vec![0.0; qp.ineq.len()];
    for (k, &i) in on.iter().enumerate() {
        pz[i] = sol[n + k];
    }
    let mut changed = false;
    for (i, (row, &h)) in qp.ineq.iter().zip(&qp.ineq_rhs).enumerate() {
        if !active[i] && row.dot(&px) - h > 1e-9 * scale_h {
            active[i] = true;
            changed = true;
        } else if active[i] && pz[i] < -1e-9 * scale_z {
            active[i] = false;
            changed = true;
        }
    }
    pz.iter_mut().for_each(|v| *v = v.max(0.0));
    let py = sol.rows(n + on.len(), qp.eq.len()).iter().copied().collect();
    Some((px, pz, py, changed))
}

/// `Px + c + Gᵀz + Aᵀy` and the magnitude of its largest term, so the
/// stationarity test is relative to the size of the multipliers.
fn dual_residual(qp: &QpProblem, x: &[f64], z: &[f64], y: &[f64]) -> (Vec<f64>, f64) {
    let n = qp.dim();
    let px = &qp.p * DVector::from_column_slice(x);
    let mut gz = vec![0.0; n];
    for (row, &zi) in qp.ineq.iter().zip(z) {
        row.add_scaled_to(zi, &mut gz);
    }
    let mut ay = vec![0.0; n];
    for (row, &yi) in qp.eq.iter().zip(y) {
        row.add_scaled_to(yi, &mut ay);
    }
    let r: Vec<f64> = (0..n).map(|i| px[i] + qp.c[i] + gz[i] + ay[i]).collect();
    let scale = 1.0
        + inf_norm(&qp.c)
            .max(inf_norm(px.as_slice()))
            .max(inf_norm(&gz))
            .max(inf_norm(&ay));
    (r, scale)
}

struct Step {
    dx: Vec<f64>,
    ds: Vec<f64>,
    dz: Vec<f64>,
    dy: Vec<f64>,
}

struct Factored {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// M⁻¹Aᵀ columns.
    minv_at: Vec<DVector<f64>>,
    schur: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

pub fn solve_qp(qp: &QpProblem, x0: Option<&[f64]>, opts: &QpOptions) -> Result<QpSolution> {
    let n = qp.dim();
    let m = qp.ineq.len();
    let me = qp.eq.len();
    if qp.p.nrows() != n || qp.p.ncols() != n {
        return Err(DsmError::DimensionMismatch("P must be n x n".into()));
    }
    if m != qp.ineq_rhs.len() || me != qp.eq_rhs.len() {
        return Err(DsmError::DimensionMismatch("constraint rows vs rhs".into()));
    }
    if m == 0 {
        return Err(DsmError::InvalidParameter(
            "interior-point solver needs at least one inequality".into(),
        ));
    }

    let mut x: Vec<f64> = match x0 {
        Some(v) => v.to_vec(),
        None => vec![0.0; n],
    };
    let mut s: Vec<f64> = qp
        .ineq
        .iter()
        .zip(&qp.ineq_rhs)
        .map(|(row, &h)| (h - row.dot(&x)).max(1.0))
        .collect();
    let mut z = vec![1.0; m];
    let mut y = vec![0.0; me];

    let scale_h = 1.0 + inf_norm(&qp.ineq_rhs).max(inf_norm(&qp.eq_rhs));

    let mut last = KktResidual::default();
    for iter in 0..opts.max_iter {
        // residuals
        let (r_d, scale_d) = dual_residual(qp, &x, &z, &y);
        let r_in: Vec<f64> = (0..m)
            .map(|i| qp.ineq[i].dot(&x) + s[i] - qp.ineq_rhs[i])
            .collect();
        let r_eq: Vec<f64> = (0..me).map(|i| qp.eq[i].dot(&x) - qp.eq_rhs[i]).collect();
        let mu = s.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / m as f64;

        last = KktResidual {
            stationarity: inf_norm(&r_d) / scale_d,
            primal: inf_norm(&r_in).max(inf_norm(&r_eq)) / scale_h,
            complementarity: mu / scale_d.max(scale_h),
        };
        if last.max() <= opts.tol {
            if let Some((px, pz, py)) = polish(qp, &x, &s, &z, &y) {
                x = px;
                z = pz;
                y = py;
            }
            let objective = qp.objective(&x);
            return Ok(QpSolution {
                kkt: kkt_residual(qp, &x, &z, &y),
                x,
                z,
                y,
                objective,
                iterations: iter,
            });
        }

        let w: Vec<f64> = z.iter().zip(&s).map(|(zi, si)| zi / si).collect();
        let fac = factor(qp, &w)?;

        // predictor
        let rc_aff: Vec<f64> = s.iter().zip(&z).map(|(a, b)| a * b).collect();
        let aff = newton_step(qp, &fac, &s, &z, &w, &r_d, &r_in, &r_eq, &rc_aff);
        let alpha_aff = max_step(&s, &aff.ds).min(max_step(&z, &aff.dz)).min(1.0);
        let mu_aff = (0..m)
            .map(|i| (s[i] + alpha_aff * aff.ds[i]) * (z[i] + alpha_aff * aff.dz[i]))
            .sum::<f64>()
            / m as f64;
        // never aim far below the target accuracy; tiny μ only inflates z/s
        let sigma = (mu_aff / mu)
            .clamp(0.0, 1.0)
            .powi(3)
            .max((1e-3 * opts.tol / mu).min(1.0));

        // corrector
        let rc: Vec<f64> = (0..m)
            .map(|i| s[i] * z[i] + aff.ds[i] * aff.dz[i] - sigma * mu)
            .collect();
        let step = newton_step(qp, &fac, &s, &z, &w, &r_d, &r_in, &r_eq, &rc);
        let alpha = (0.99 * max_step(&s, &step.ds).min(max_step(&z, &step.dz))).min(1.0);

        for i in 0..n {
            x[i] += alpha * step.dx[i];
        }
        for i in 0..m {
            s[i] += alpha * step.ds[i];
            z[i] += alpha * step.dz[i];
        }
        for i in 0..me {
            y[i] += alpha * step.dy[i];
        }
        if !x.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(DsmError::MaxIterationsExceeded {
        solver: "interior-point QP",
        iterations: opts.max_iter,
        residual: last.max(),
    })
}

fn factor(qp: &QpProblem, w: &[f64]) -> Result<Factored> {
    let n = qp.dim();
    let mut mat = qp.p.clone();
    for (row, &wi) in qp.ineq.iter().zip(w) {
        for (a, &i) in row.idx.iter().enumerate() {
            let vi = wi * row.val[a];
            for (b, &j) in row.idx.iter().enumerate() {
                mat[(i, j)] += vi * row.val[b];
            }
        }
    }
    // late iterations mix tiny and huge barrier weights; a diagonal shift
    // scaled to the matrix keeps the factorization alive without changing
    // the fixed point of the iteration
    let diag_max = (0..n).map(|i| mat[(i, i)].abs()).fold(0.0, f64::max);
    let mut shift = 0.0;
    let chol = loop {
        let mut shifted = mat.clone();
        for i in 0..n {
            shifted[(i, i)] += shift;
        }
        if let Some(c) = nalgebra::Cholesky::new(shifted) {
            break c;
        }
        shift = if shift == 0.0 { 1e-14 * (1.0 + diag_max) } else { shift * 100.0 };
        if shift > 1e-4 * (1.0 + diag_max) {
            return Err(DsmError::InvalidParameter(
                "reduced KKT matrix is not positive definite".into(),
            ));
        }
    };
    let minv_at: Vec<DVector<f64>> = qp
        .eq
        .iter()
        .map(|row| {
            let mut col = DVector::zeros(n);
            for (&i, &v) in row.idx.iter().zip(&row.val) {
                col[i] += v;
            }
            chol.solve(&col)
        })
        .collect();
    let me = qp.eq.len();
    let schur = if me > 0 {
        let mut sm = DMatrix::zeros(me, me);
        for (i, row) in qp.eq.iter().enumerate() {
            for (j, col) in minv_at.iter().enumerate() {
                sm[(i, j)] = row.dot(col.as_slice());
            }
        }
        Some(sm.lu())
    } else {
        None
    };
    Ok(Factored {
        chol,
        minv_at,
        schur,
    })
}

#[allow(clippy::too_many_arguments)]
fn newton_step(
    qp: &QpProblem,
    fac: &Factored,
    s: &[f64],
    z: &[f64],
    w: &[f64],
    r_d: &[f64],
    r_in: &[f64],
    r_eq: &[f64],
    r_c: &[f64],
) -> Step {
    let n = qp.dim();
    let m = s.len();
    // dz = W G dx + (z∘r_in − r_c)/s
    let corr: Vec<f64> = (0..m).map(|i| (z[i] * r_in[i] - r_c[i]) / s[i]).collect();
    let mut rhs = DVector::from_iterator(n, r_d.iter().map(|v| -v));
    for (row, &ci) in qp.ineq.iter().zip(&corr) {
        for (&i, &v) in row.idx.iter().zip(&row.val) {
            rhs[i] -= ci * v;
        }
    }
    let u = fac.chol.solve(&rhs);
    let mut dy = vec![0.0; qp.eq.len()];
    let mut dx = u.clone();
    if let Some(lu) = &fac.schur {
        let b = DVector::from_iterator(
            qp.eq.len(),
            qp.eq
                .iter()
                .zip(r_eq)
                .map(|(row, &r)| row.dot(u.as_slice()) + r),
        );
        let sol = lu.solve(&b).unwrap_or_else(|| DVector::zeros(qp.eq.len()));
        for (k, col) in fac.minv_at.iter().enumerate() {
            dx -= col * sol[k];
            dy[k] = sol[k];
        }
    }
    let dx: Vec<f64> = dx.iter().copied().collect();
    let mut ds = vec![0.0; m];
    let mut dz = vec![0.0; m];
    for i in 0..m {
        let gdx = qp.ineq[i].dot(&dx);
        ds[i] = -r_in[i] - gdx;
        dz[i] = w[i] * gdx + corr[i];
    }
    Step { dx, ds, dz, dy }
}

/// Largest α ≤ 1/0 with v + α·dv ≥ 0.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut a = f64::INFINITY;
    for (vi, di) in v.iter().zip(dv) {
        if *di < 0.0 {
            a = a.min(-vi / di);
        }
    }
    a
}
