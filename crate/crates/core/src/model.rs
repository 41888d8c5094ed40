//! Grid cost primitives: aggregate load, quadratic grid cost and the
//! proportional per-user day-ahead bill.
//!
//! Energies are in kWh and money in £. Aggregates are summed in user-index
//! order so that results are bit-stable on a given platform.

use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};

/// Division of the day into `slot_count` equal slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub slot_count: usize,
}

impl TimeGrid {
    pub fn new(slot_count: usize) -> Result<Self> {
        if slot_count == 0 {
            return Err(DsmError::InvalidParameter("slot_count must be >= 1".into()));
        }
        Ok(Self { slot_count })
    }

    /// Number of leading "night" slots, `|H| / 3` (slots 1..|H|/3 in 1-based terms).
    pub fn night_slot_count(&self) -> usize {
        self.slot_count / 3
    }

    pub fn is_night(&self, h: usize) -> bool {
        h < self.night_slot_count()
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self { slot_count: 24 }
    }
}

/// Supplier-side cost parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCostParams {
    /// Per-slot cost coefficient K_h (£/kWh²).
    pub k: Vec<f64>,
    /// Per-slot squared radius of the joint error ball (kWh²).
    pub alpha: Vec<f64>,
    /// Weight of the local deviation penalty β_m‖δ_n‖² (£/kWh²).
    pub beta_m: f64,
}

impl GridCostParams {
    pub fn new(k: Vec<f64>, alpha: Vec<f64>, beta_m: f64) -> Result<Self> {
        let p = Self { k, alpha, beta_m };
        p.validate()?;
        Ok(p)
    }

    pub fn slot_count(&self) -> usize {
        self.k.len()
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid {
            slot_count: self.k.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.is_empty() {
            return Err(DsmError::InvalidParameter("k must have at least one slot".into()));
        }
        if self.k.len() != self.alpha.len() {
            return Err(DsmError::DimensionMismatch(format!(
                "k has {} slots but alpha has {}",
                self.k.len(),
                self.alpha.len()
            )));
        }
        if let Some(h) = self.k.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(DsmError::InvalidParameter(format!(
                "k({}) = {} must be positive",
                h + 1,
                self.k[h]
            )));
        }
        if let Some(h) = self.alpha.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(DsmError::InvalidParameter(format!(
                "alpha({}) = {} must be positive",
                h + 1,
                self.alpha[h]
            )));
        }
        if !(self.beta_m >= 0.0 && self.beta_m.is_finite()) {
            return Err(DsmError::InvalidParameter(format!(
                "beta_m = {} must be nonnegative",
                self.beta_m
            )));
        }
        Ok(())
    }
}

/// Announced per-slot net energy exchanged with the grid (positive = drawing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub user_id: usize,
    pub l: Vec<f64>,
}

/// Per-slot deviation between announced and realised load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorProfile {
    pub user_id: usize,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateState {
    /// L(h) = Σ_n l_n(h).
    pub total_load: Vec<f64>,
    /// Σ_n δ_n(h).
    pub total_error: Vec<f64>,
}

impl AggregateState {
    /// Adds the per-slot error totals of `errors` (user-index order).
    pub fn with_errors(mut self, errors: &[ErrorProfile]) -> Result<Self> {
        let rows: Vec<&[f64]> = errors.iter().map(|e| e.delta.as_slice()).collect();
        self.total_error = column_sums(&rows, self.total_load.len())?;
        Ok(self)
    }
}

pub(crate) fn column_sums(rows: &[&[f64]], width: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; width];
    for (n, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(DsmError::DimensionMismatch(format!(
                "profile {} has {} slots, expected {}",
                n,
                row.len(),
                width
            )));
        }
        for (o, v) in out.iter_mut().zip(row.iter()) {
            *o += v;
        }
    }
    Ok(out)
}

/// Sums the load profiles slot by slot. The aggregate must be strictly
/// positive everywhere; a non-positive slot means the scenario is infeasible.
pub fn aggregate_load(profiles: &[LoadProfile]) -> Result<AggregateState> {
    let first = profiles.first().ok_or(DsmError::EmptyUserSet)?;
    let width = first.l.len();
    let rows: Vec<&[f64]> = profiles.iter().map(|p| p.l.as_slice()).collect();
    let total_load = column_sums(&rows, width)?;
    check_positive_aggregate(&total_load)?;
    Ok(AggregateState {
        total_error: vec![0.0; width],
        total_load,
    })
}

pub(crate) fn check_positive_aggregate(total_load: &[f64]) -> Result<()> {
    match total_load.iter().position(|&v| !(v > 0.0)) {
        Some(h) => Err(DsmError::NonPositiveAggregateLoad {
            slot: h + 1,
            value: total_load[h],
        }),
        None => Ok(()),
    }
}

/// Grid production cost of slot `h`: K_h·(L(h) + Σ_n δ_n(h))².
pub fn grid_cost(h: usize, total_load: f64, delta_sum: f64, params: &GridCostParams) -> f64 {
    let x = total_load + delta_sum;
    params.k[h] * x * x
}

/// Cumulative day-ahead bill of user `n`:
/// Σ_h K_h·(L(h) + 1ᵀδ(h))·(l_n(h) + δ_n(h)) + β_m‖δ_n‖².
pub fn user_day_ahead_cost(
    n: usize,
    loads: &[LoadProfile],
    errors: &[ErrorProfile],
    params: &GridCostParams,
) -> Result<f64> {
    let l: Vec<&[f64]> = loads.iter().map(|p| p.l.as_slice()).collect();
    let d: Vec<&[f64]> = errors.iter().map(|p| p.delta.as_slice()).collect();
    day_ahead_cost_raw(n, &l, &d, params)
}

pub(crate) fn day_ahead_cost_raw(
    n: usize,
    loads: &[&[f64]],
    errors: &[&[f64]],
    params: &GridCostParams,
) -> Result<f64> {
    let width = params.slot_count();
    if loads.len() != errors.len() {
        return Err(DsmError::DimensionMismatch(format!(
            "{} load profiles but {} error profiles",
            loads.len(),
            errors.len()
        )));
    }
    if n >= loads.len() {
        return Err(DsmError::DimensionMismatch(format!(
            "user {} out of range ({} users)",
            n,
            loads.len()
        )));
    }
    let total_load = column_sums(loads, width)?;
    let total_error = column_sums(errors, width)?;
    Ok(cost_with_totals(
        loads[n],
        errors[n],
        &total_load,
        &total_error,
        params,
    ))
}

/// Day-ahead bill given precomputed aggregates.
pub(crate) fn cost_with_totals(
    l_n: &[f64],
    delta_n: &[f64],
    total_load: &[f64],
    total_error: &[f64],
    params: &GridCostParams,
) -> f64 {
    let mut cost = 0.0;
    let mut sq = 0.0;
    for h in 0..l_n.len() {
        cost += params.k[h] * (total_load[h] + total_error[h]) * (l_n[h] + delta_n[h]);
        sq += delta_n[h] * delta_n[h];
    }
    cost + params.beta_m * sq
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lp(id: usize, l: &[f64]) -> LoadProfile {
        LoadProfile {
            user_id: id,
            l: l.to_vec(),
        }
    }

    fn ep(id: usize, d: &[f64]) -> ErrorProfile {
        ErrorProfile {
            user_id: id,
            delta: d.to_vec(),
        }
    }

    #[test]
    fn aggregate_sums_users() {
        let agg = aggregate_load(&[lp(0, &[3.0]), lp(1, &[4.0])]).unwrap();
        assert_eq!(agg.total_load, vec![7.0]);
        let agg = aggregate_load(&[lp(0, &[5.0, 5.0])]).unwrap();
        assert_eq!(agg.total_load, vec![5.0, 5.0]);
    }

    #[test]
    fn aggregate_rejects_non_positive_slot() {
        let err = aggregate_load(&[lp(0, &[1.0]), lp(1, &[-1.0])]).unwrap_err();
        assert_eq!(err, DsmError::NonPositiveAggregateLoad { slot: 1, value: 0.0 });
        assert_eq!(aggregate_load(&[]).unwrap_err(), DsmError::EmptyUserSet);
    }

    #[test]
    fn aggregate_rejects_ragged_profiles() {
        let err = aggregate_load(&[lp(0, &[1.0, 1.0]), lp(1, &[1.0])]).unwrap_err();
        assert!(matches!(err, DsmError::DimensionMismatch(_)));
    }

    #[test]
    fn grid_cost_values() {
        let p = GridCostParams::new(vec![0.1], vec![1.0], 0.0).unwrap();
        assert!((grid_cost(0, 10.0, 0.0, &p) - 10.0).abs() < 1e-12);
        let p = GridCostParams::new(vec![1.0], vec![1.0], 0.0).unwrap();
        assert_eq!(grid_cost(0, 2.0, 1.0, &p), 9.0);
    }

    #[test]
    fn day_slot_costs_one_and_a_half_night_slot() {
        let night = 0.01;
        let p = GridCostParams::new(vec![night, 1.5 * night], vec![1.0, 1.0], 0.0).unwrap();
        let c_night = grid_cost(0, 12.0, 0.7, &p);
        let c_day = grid_cost(1, 12.0, 0.7, &p);
        assert!((c_day / c_night - 1.5).abs() < 1e-14);
    }

    #[test]
    fn user_cost_examples() {
        let p = GridCostParams::new(vec![1.0], vec![1.0], 0.0).unwrap();
        let loads = [lp(0, &[1.0]), lp(1, &[1.0])];
        let f = user_day_ahead_cost(0, &loads, &[ep(0, &[0.0]), ep(1, &[0.0])], &p).unwrap();
        assert_eq!(f, 2.0);

        let p = GridCostParams::new(vec![1.0], vec![1.0], 0.001).unwrap();
        let f = user_day_ahead_cost(0, &loads, &[ep(0, &[0.1]), ep(1, &[-0.1])], &p).unwrap();
        assert!((f - 2.20001).abs() < 1e-12);
    }

    #[test]
    fn user_cost_dimension_mismatch() {
        let p = GridCostParams::new(vec![1.0, 1.0], vec![1.0, 1.0], 0.0).unwrap();
        let err = user_day_ahead_cost(0, &[lp(0, &[1.0])], &[ep(0, &[0.0])], &p).unwrap_err();
        assert!(matches!(err, DsmError::DimensionMismatch(_)));
    }

    #[test]
    fn params_validation() {
        assert!(GridCostParams::new(vec![0.0], vec![1.0], 0.0).is_err());
        assert!(GridCostParams::new(vec![1.0], vec![-1.0], 0.0).is_err());
        assert!(GridCostParams::new(vec![1.0], vec![1.0], -0.1).is_err());
        assert!(GridCostParams::new(vec![1.0], vec![1.0, 1.0], 0.0).is_err());
        assert!(TimeGrid::new(0).is_err());
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        (1usize..5, 1usize..6).prop_flat_map(|(slots, users)| {
            (
                prop::collection::vec(0.01f64..2.0, slots),
                prop::collection::vec(prop::collection::vec(0.1f64..5.0, slots), users),
                prop::collection::vec(prop::collection::vec(-0.5f64..0.5, slots), users),
            )
        })
    }

    proptest! {
        #[test]
        fn proportional_split_recovers_grid_cost((k, loads, errors) in instance()) {
            let slots = k.len();
            let p = GridCostParams::new(k, vec![1.0; slots], 0.0).unwrap();
            let l: Vec<&[f64]> = loads.iter().map(|v| v.as_slice()).collect();
            let d: Vec<&[f64]> = errors.iter().map(|v| v.as_slice()).collect();
            let split: f64 = (0..loads.len())
                .map(|n| day_ahead_cost_raw(n, &l, &d, &p).unwrap())
                .sum();
            // independent evaluation of the grid cost
            let mut direct = 0.0;
            for h in 0..slots {
                let lh: f64 = loads.iter().map(|v| v[h]).sum();
                let dh: f64 = errors.iter().map(|v| v[h]).sum();
                direct += grid_cost(h, lh, dh, &p);
            }
            prop_assert!((split - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }

        #[test]
        fn grid_cost_is_convex(k in 0.01f64..3.0, l1 in -10.0f64..10.0, l2 in -10.0f64..10.0, d in -1.0f64..1.0) {
            let p = GridCostParams::new(vec![k], vec![1.0], 0.0).unwrap();
            let mid = grid_cost(0, 0.5 * (l1 + l2), d, &p);
            let avg = 0.5 * (grid_cost(0, l1, d, &p) + grid_cost(0, l2, d, &p));
            prop_assert!(mid <= avg + 1e-12 * avg.abs().max(1.0));
        }

        #[test]
        fn user_cost_curvature_is_two_k((k, loads, errors) in instance(), slot_pick in 0usize..5) {
            let slots = k.len();
            let h = slot_pick % slots;
            let p = GridCostParams::new(k.clone(), vec![1.0; slots], 0.0).unwrap();
            let step = 1e-2;
            let eval = |shift: f64| {
                let mut ls = loads.clone();
                ls[0][h] += shift;
                let l: Vec<&[f64]> = ls.iter().map(|v| v.as_slice()).collect();
                let d: Vec<&[f64]> = errors.iter().map(|v| v.as_slice()).collect();
                day_ahead_cost_raw(0, &l, &d, &p).unwrap()
            };
            let second = (eval(step) - 2.0 * eval(0.0) + eval(-step)) / (step * step);
            prop_assert!((second - 2.0 * k[h]).abs() <= 1e-6 * (1.0 + 2.0 * k[h]) * 1e3);
            prop_assert!(second >= 0.0);
        }

        #[test]
        fn aggregate_is_permutation_invariant(loads in prop::collection::vec(prop::collection::vec(0.1f64..5.0, 3), 2..8), rot in 0usize..8) {
            let profiles: Vec<LoadProfile> = loads.iter().enumerate().map(|(i, l)| lp(i, l)).collect();
            let mut rotated = profiles.clone();
            let len = rotated.len();
            rotated.rotate_left(rot % len);
            let a = aggregate_load(&profiles).unwrap();
            let b = aggregate_load(&rotated).unwrap();
            for (x, y) in a.total_load.iter().zip(&b.total_load) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs());
            }
        }
    }
}
