//! Real-time settlement: the robust bill with its dead-band penalty, the
//! non-robust bill it is compared against, and the Monte Carlo harness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};
use crate::game::EquilibriumResult;
use crate::model::GridCostParams;

/// Per-slot weights of the real-time penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    /// Weight on consuming less than announced.
    pub nu: Vec<f64>,
    /// Weight on consuming more than announced.
    pub upsilon_penalty: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl PenaltyParams {
    /// `κ_h = √(|D|/α(h))`, with a fifth of κ on under-consumption during the
    /// night third of the day and four fifths otherwise.
    pub fn from_grid(grid: &GridCostParams, users: usize) -> Result<Self> {
        if users == 0 {
            return Err(DsmError::EmptyUserSet);
        }
        let slots = grid.slot_count();
        let night = slots / 3;
        let kappa: Vec<f64> = grid.alpha.iter().map(|a| (users as f64 / a).sqrt()).collect();
        let nu: Vec<f64> = kappa
            .iter()
            .enumerate()
            .map(|(h, k)| if h < night { 0.2 * k } else { 0.8 * k })
            .collect();
        let upsilon_penalty = kappa.iter().zip(&nu).map(|(k, v)| k - v).collect();
        Ok(Self {
            nu,
            upsilon_penalty,
            kappa,
        })
    }

    pub fn slot_count(&self) -> usize {
        self.nu.len()
    }
}

/// Penalty at slot `h` for realizing `l_rt` after announcing `l` with
/// margin `delta_star`; zero inside `[l − δ*, l + δ*]`.
pub fn penalty_psi(h: usize, l: f64, delta_star: f64, l_rt: f64, p: &PenaltyParams) -> f64 {
    p.nu[h] * (l - delta_star - l_rt).max(0.0) + p.upsilon_penalty[h] * (l_rt - l - delta_star).max(0.0)
}

fn check_lengths(slots: usize, named: &[(&str, usize)]) -> Result<()> {
    for (name, len) in named {
        if *len != slots {
            return Err(DsmError::DimensionMismatch(format!("{name} has {len} slots, expected {slots}")));
        }
    }
    Ok(())
}

/// Real-time bill of a robust user: priced at the robust aggregate
/// `L̂_r = L + Σ_n δ*_n`, penalized outside its margin, plus `β_m‖δ_n‖²`.
pub fn robust_rt_cost(
    l_star: &[f64],
    delta_star: &[f64],
    l_rt: &[f64],
    robust_aggregate: &[f64],
    grid: &GridCostParams,
    p: &PenaltyParams,
) -> Result<f64> {
    let slots = grid.slot_count();
    check_lengths(
        slots,
        &[
            ("l_star", l_star.len()),
            ("delta_star", delta_star.len()),
            ("l_rt", l_rt.len()),
            ("robust_aggregate", robust_aggregate.len()),
            ("penalty", p.slot_count()),
        ],
    )?;
    let bill: f64 = (0..slots)
        .map(|h| {
            let psi = penalty_psi(h, l_star[h], delta_star[h], l_rt[h], p);
            grid.k[h] * robust_aggregate[h] * (l_rt[h] + psi)
        })
        .sum();
    let margin: f64 = delta_star.iter().map(|d| d * d).sum();
    Ok(bill + grid.beta_m * margin)
}

/// Real-time bill of a naive user: priced at the supplier's worst-case
/// aggregate and penalized for any deviation.
pub fn nonrobust_rt_cost(
    l: &[f64],
    l_rt: &[f64],
    worst_aggregate: &[f64],
    grid: &GridCostParams,
    p: &PenaltyParams,
) -> Result<f64> {
    let slots = grid.slot_count();
    check_lengths(
        slots,
        &[
            ("l", l.len()),
            ("l_rt", l_rt.len()),
            ("worst_aggregate", worst_aggregate.len()),
            ("penalty", p.slot_count()),
        ],
    )?;
    Ok((0..slots)
        .map(|h| grid.k[h] * worst_aggregate[h] * (l_rt[h] + penalty_psi(h, l[h], 0.0, l_rt[h], p)))
        .sum())
}

/// Deviation draws `ε_n(h) ~ N(0, scale·α(h)/|D|)` for `users` users.
pub fn sample_rt_deviations(
    alpha: &[f64],
    users: usize,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    if users == 0 {
        return Err(DsmError::EmptyUserSet);
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(DsmError::InvalidParameter(format!("variance scale {scale}")));
    }
    let normals = alpha
        .iter()
        .map(|a| {
            Normal::new(0.0, (scale * a / users as f64).sqrt())
                .map_err(|e| DsmError::InvalidParameter(format!("deviation spread: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..users)
        .map(|_| normals.iter().map(|d| d.sample(rng)).collect())
        .collect())
}

/// `l_n + ε_n` for every user.
pub fn apply_deviations(loads: &[Vec<f64>], eps: &[Vec<f64>]) -> Vec<Vec<f64>> {
    loads
        .iter()
        .zip(eps)
        .map(|(l, e)| l.iter().zip(e).map(|(a, b)| a + b).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub runs: usize,
    pub seed: u64,
    /// Multiplies the deviation variance; 0 replays the announced loads.
    pub variance_scale: f64,
    /// Keep `β_m‖δ_n‖²` in the robust bill.
    pub include_margin_cost: bool,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            runs: 100,
            seed: 0,
            variance_scale: 1.0,
            include_margin_cost: false,
        }
    }
}

/// One Monte Carlo draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealTimeOutcome {
    pub run_id: usize,
    pub robust_costs: Vec<f64>,
    pub nonrobust_costs: Vec<f64>,
    /// `(Σ nonrobust − Σ robust)/Σ nonrobust` in %.
    pub mean_relative_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub users: usize,
    pub runs: Vec<RealTimeOutcome>,
    /// Total robust bill averaged over runs.
    pub mean_robust: f64,
    pub mean_nonrobust: f64,
    /// Gain of the averaged totals, in %.
    pub gain_pct: f64,
    /// Standard error of the per-run gain, in %.
    pub stderr: f64,
}

/// Averages both real-time bills over `config.runs` deviation draws.
///
/// Each run draws one set of deviations from its own ChaCha stream, keyed
/// by the run index, and applies it to both populations, so the outcome
/// does not depend on the thread count.
pub fn monte_carlo_compare(
    robust: &EquilibriumResult,
    naive: &EquilibriumResult,
    grid: &GridCostParams,
    config: &MonteCarloConfig,
) -> Result<MonteCarloSummary> {
    if config.runs == 0 {
        return Err(DsmError::InvalidParameter("runs must be at least 1".into()));
    }
    let users = robust.loads.len();
    if naive.loads.len() != users {
        return Err(DsmError::DimensionMismatch(format!(
            "robust run has {users} users, naive run has {}",
            naive.loads.len()
        )));
    }
    let penalty = PenaltyParams::from_grid(grid, users)?;
    let bill_grid = GridCostParams {
        beta_m: if config.include_margin_cost { grid.beta_m } else { 0.0 },
        ..grid.clone()
    };
    let robust_loads: Vec<Vec<f64>> = robust.loads.iter().map(|l| l.l.clone()).collect();
    let naive_loads: Vec<Vec<f64>> = naive.loads.iter().map(|l| l.l.clone()).collect();
    let runs = (0..config.runs)
        .into_par_iter()
        .map(|run_id| -> Result<RealTimeOutcome> {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(run_id as u64);
            let eps = sample_rt_deviations(&grid.alpha, users, config.variance_scale, &mut rng)?;
            let robust_rt = apply_deviations(&robust_loads, &eps);
            let naive_rt = apply_deviations(&naive_loads, &eps);
            let robust_costs = (0..users)
                .map(|n| {
                    robust_rt_cost(
                        &robust_loads[n],
                        &robust.errors[n].delta,
                        &robust_rt[n],
                        &robust.robust_aggregate,
                        &bill_grid,
                        &penalty,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let nonrobust_costs = (0..users)
                .map(|n| nonrobust_rt_cost(&naive_loads[n], &naive_rt[n], &naive.robust_aggregate, &bill_grid, &penalty))
                .collect::<Result<Vec<_>>>()?;
            let r: f64 = robust_costs.iter().sum();
            let nr: f64 = nonrobust_costs.iter().sum();
            Ok(RealTimeOutcome {
                run_id,
                robust_costs,
                nonrobust_costs,
                mean_relative_gain: 100.0 * (nr - r) / nr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let count = runs.len() as f64;
    let mean_robust = runs.iter().map(|o| o.robust_costs.iter().sum::<f64>()).sum::<f64>() / count;
    let mean_nonrobust = runs.iter().map(|o| o.nonrobust_costs.iter().sum::<f64>()).sum::<f64>() / count;
    let gains: Vec<f64> = runs.iter().map(|o| o.mean_relative_gain).collect();
    let mean_gain = gains.iter().sum::<f64>() / count;
    let stderr = if runs.len() > 1 {
        let var = gains.iter().map(|g| (g - mean_gain).powi(2)).sum::<f64>() / (count - 1.0);
        (var / count).sqrt()
    } else {
        0.0
    };
    Ok(MonteCarloSummary {
        users,
        runs,
        mean_robust,
        mean_nonrobust,
        gain_pct: 100.0 * (mean_nonrobust - mean_robust) / mean_nonrobust,
        stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat(k: f64, alpha: f64, beta: f64) -> GridCostParams {
        GridCostParams::new(vec![k; 3], vec![alpha; 3], beta).unwrap()
    }

    fn unit_penalty(nu: f64, ups: f64) -> PenaltyParams {
        PenaltyParams {
            nu: vec![nu; 3],
            upsilon_penalty: vec![ups; 3],
            kappa: vec![nu + ups; 3],
        }
    }

    #[test]
    fn penalty_examples() {
        let p = unit_penalty(3.0, 2.0);
        assert_eq!(penalty_psi(0, 1.0, 0.2, 1.1, &p), 0.0);
        assert!((penalty_psi(0, 1.0, 0.2, 1.5, &p) - 0.6).abs() < 1e-12);
        assert!((penalty_psi(0, 1.0, 0.2, 0.5, &p) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn penalty_weights_split_kappa() {
        let grid = GridCostParams::new(vec![1.0; 24], (1..=24).map(|h| 0.1 * h as f64).collect(), 0.0).unwrap();
        let p = PenaltyParams::from_grid(&grid, 20).unwrap();
        for h in 0..24 {
            assert!((p.nu[h] + p.upsilon_penalty[h] - p.kappa[h]).abs() < 1e-12);
            assert!((p.kappa[h] - (20.0 / grid.alpha[h]).sqrt()).abs() < 1e-12);
            let share = if h < 8 { 0.2 } else { 0.8 };
            assert!((p.nu[h] - share * p.kappa[h]).abs() < 1e-12);
        }
    }

    #[test]
    fn robust_cost_without_deviation_is_the_energy_bill() {
        let grid = flat(0.5, 1.0, 0.0);
        let p = unit_penalty(1.0, 1.0);
        let l = [1.0, 2.0, 0.5];
        let agg = [10.0, 12.0, 8.0];
        let c = robust_rt_cost(&l, &[0.0; 3], &l, &agg, &grid, &p).unwrap();
        assert!((c - 0.5 * (10.0 + 24.0 + 4.0)).abs() < 1e-12);
        let nr = nonrobust_rt_cost(&l, &l, &agg, &grid, &p).unwrap();
        assert!((c - nr).abs() < 1e-12);
    }

    #[test]
    fn margin_cost_is_added() {
        let grid = flat(0.5, 1.0, 0.25);
        let p = unit_penalty(1.0, 1.0);
        let c = robust_rt_cost(&[0.0; 3], &[1.0, 2.0, 0.0], &[0.0; 3], &[1.0; 3], &grid, &p).unwrap();
        assert!((c - 0.25 * 5.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let grid = flat(0.5, 1.0, 0.0);
        let p = unit_penalty(1.0, 1.0);
        assert!(matches!(
            nonrobust_rt_cost(&[0.0; 2], &[0.0; 3], &[1.0; 3], &grid, &p),
            Err(DsmError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn sampler_is_deterministic_and_calibrated() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let x = sample_rt_deviations(&[0.4, 1.0], 4, 1.0, &mut a).unwrap();
        let y = sample_rt_deviations(&[0.4, 1.0], 4, 1.0, &mut b).unwrap();
        assert_eq!(x, y);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let draws = sample_rt_deviations(&[0.4], n, 1.0, &mut rng).unwrap();
        let var = 0.4 / n as f64;
        let mean = draws.iter().map(|d| d[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 * var.sqrt() / (n as f64).sqrt());
        let sample_var = draws.iter().map(|d| (d[0] - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((sample_var / var - 1.0).abs() < 0.05);
    }

    proptest! {
        #[test]
        fn dead_band_is_exact(l in -2.0f64..2.0, d in 0.0f64..1.0, t in -1.0f64..1.0, nu in 0.1f64..5.0, ups in 0.1f64..5.0) {
            let p = unit_penalty(nu, ups);
            let inside = l + t * d;
            prop_assert_eq!(penalty_psi(0, l, d, inside, &p), 0.0);
            let above = l + d + 0.5;
            prop_assert!((penalty_psi(0, l, d, above, &p) - ups * 0.5).abs() < 1e-12);
            let below = l - d - 0.5;
            prop_assert!((penalty_psi(0, l, d, below, &p) - nu * 0.5).abs() < 1e-12);
        }

        #[test]
        fn nonrobust_bill_dominates_inside_the_band(
            l in proptest::collection::vec(-1.0f64..2.0, 3),
            d in proptest::collection::vec(0.0f64..0.5, 3),
            t in proptest::collection::vec(-1.0f64..1.0, 3),
        ) {
            let grid = flat(0.3, 1.0, 0.0);
            let p = unit_penalty(2.0, 3.0);
            let rt: Vec<f64> = (0..3).map(|h| l[h] + t[h] * d[h]).collect();
            let agg = [5.0, 6.0, 7.0];
            let r = robust_rt_cost(&l, &d, &rt, &agg, &grid, &p).unwrap();
            let nr = nonrobust_rt_cost(&l, &rt, &agg, &grid, &p).unwrap();
            prop_assert!(nr >= r - 1e-12);
            // inside the band the robust bill is linear in the realized load
            let linear: f64 = (0..3).map(|h| 0.3 * agg[h] * rt[h]).sum();
            prop_assert!((r - linear).abs() < 1e-12);
        }
    }
}
