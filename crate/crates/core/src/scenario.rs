//! Synthetic day-ahead scenarios: population mix, demand curves, device
//! parameters, error budgets and price calibration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};
use crate::model::{GridCostParams, TimeGrid};
use crate::region::{UserKind, UserModel};

/// Hourly share of daily consumption for a typical household: low at night,
/// a morning shoulder, a midday plateau and a 19:00–22:00 evening peak.
pub const TYPICAL_DAY: [f64; 24] = [
    0.55, 0.50, 0.45, 0.45, 0.45, 0.50, 0.70, 0.95, 1.00, 0.90, 0.85, 0.85, 0.90, 0.85, 0.80,
    0.85, 0.95, 1.15, 1.30, 1.40, 1.40, 1.35, 1.10, 0.80,
];

/// How the daily generation budget is derived from the hourly cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GenBudget {
    /// `0.8 · g_max · |H|` (kWh/day).
    #[default]
    Daily,
    /// `0.8 · g_max` taken literally as a daily total.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceParams {
    pub gen_cap_hour: f64,
    pub gen_budget_factor: f64,
    pub gen_budget: GenBudget,
    pub storage_capacity: f64,
    /// Maximum charge rate as a fraction of capacity.
    pub charge_rate_fraction: f64,
    /// Retention over a full day; per-slot leak is its |H|-th root.
    pub daily_retention: f64,
    pub charge_eff: f64,
    pub discharge_eff: f64,
    /// Initial charge as a fraction of capacity.
    pub initial_charge_fraction: f64,
    pub end_of_day_delta: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            gen_cap_hour: 0.4,
            gen_budget_factor: 0.8,
            gen_budget: GenBudget::Daily,
            storage_capacity: 4.0,
            charge_rate_fraction: 0.125,
            daily_retention: 0.9,
            charge_eff: 0.9,
            discharge_eff: 1.1,
            initial_charge_fraction: 0.25,
            end_of_day_delta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub user_count: usize,
    pub slot_count: usize,
    /// kWh per user per day.
    pub mean_daily_demand: f64,
    /// Per-slot Gaussian noise (kWh). `None` means 10% of the mean slot demand.
    pub demand_noise_std: Option<f64>,
    /// £/kWh at the unmanaged loads.
    pub target_avg_price: f64,
    pub day_night_ratio: f64,
    pub alpha_fraction: f64,
    pub beta_m: f64,
    pub rng_seed: u64,
    pub devices: DeviceParams,
    /// Overrides [`TYPICAL_DAY`]; any positive curve, resampled to |H|.
    pub template: Option<Vec<f64>>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            user_count: 20,
            slot_count: 24,
            mean_daily_demand: 4.5,
            demand_noise_std: None,
            target_avg_price: 0.1412,
            day_night_ratio: 1.5,
            alpha_fraction: 0.1,
            beta_m: 0.001,
            rng_seed: 0,
            devices: DeviceParams::default(),
            template: None,
        }
    }
}

/// Population split `(active, gen_only, store_only, gen_store)`.
pub fn population(user_count: usize) -> (usize, usize, usize, usize) {
    let active = user_count / 2;
    let g = active / 3;
    (active, g, g, active - 2 * g)
}

impl ScenarioSpec {
    pub fn with_users(user_count: usize, seed: u64) -> Self {
        Self {
            user_count,
            rng_seed: seed,
            ..Self::default()
        }
    }

    pub fn noise_std(&self) -> f64 {
        self.demand_noise_std
            .unwrap_or(0.1 * self.mean_daily_demand / self.slot_count as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DsmError::Config(m));
        if self.user_count < 2 {
            return bad(format!("user_count = {} must be at least 2", self.user_count));
        }
        if self.slot_count == 0 {
            return bad("slot_count must be positive".into());
        }
        for (name, v) in [
            ("mean_daily_demand", self.mean_daily_demand),
            ("target_avg_price", self.target_avg_price),
            ("day_night_ratio", self.day_night_ratio),
            ("alpha_fraction", self.alpha_fraction),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if !(self.beta_m >= 0.0) || !(self.noise_std() >= 0.0) {
            return bad("beta_m and demand_noise_std must be nonnegative".into());
        }
        if let Some(t) = &self.template {
            if t.len() < 2 || t.iter().any(|v| !(*v > 0.0)) {
                return bad("template needs at least two positive values".into());
            }
        }
        Ok(())
    }
}

/// Resamples a periodic daily curve to `slots` points and normalizes it to
/// unit sum.
pub fn resample_template(template: &[f64], slots: usize) -> Vec<f64> {
    let n = template.len();
    let w: Vec<f64> = (0..slots)
        .map(|h| {
            let pos = h as f64 * n as f64 / slots as f64;
            let i = pos.floor() as usize % n;
            let frac = pos - pos.floor();
            template[i] * (1.0 - frac) + template[(i + 1) % n] * frac
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Cost coefficients giving average price `target` at the given loads, with
/// `K_day = ratio · K_night` and night slots `1..|H|/3`.
pub fn calibrate_prices(demands: &[Vec<f64>], ratio: f64, target: f64) -> Result<Vec<f64>> {
    let slots = demands.first().map_or(0, |d| d.len());
    if slots == 0 || !(target > 0.0) || !(ratio > 0.0) {
        return Err(DsmError::InvalidParameter(
            "calibration needs demands, a positive target and a positive ratio".into(),
        ));
    }
    let grid = TimeGrid { slot_count: slots };
    let mut load = vec![0.0; slots];
    for d in demands {
        for (acc, v) in load.iter_mut().zip(d) {
            *acc += v;
        }
    }
    let weight = |h: usize| if grid.is_night(h) { 1.0 } else { ratio };
    let energy: f64 = load.iter().sum();
    let weighted: f64 = load.iter().enumerate().map(|(h, l)| weight(h) * l * l).sum();
    if !(energy > 0.0) {
        return Err(DsmError::InvalidParameter("zero total demand".into()));
    }
    let k_night = target * energy / weighted;
    Ok((0..slots).map(|h| weight(h) * k_night).collect())
}

/// Average price `Σ K L² / Σ L` at loads `load`.
pub fn average_price(k: &[f64], load: &[f64]) -> f64 {
    let cost: f64 = k.iter().zip(load).map(|(k, l)| k * l * l).sum();
    cost / load.iter().sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ScenarioMeta {
    pub seed: Option<u64>,
    pub spec: Option<ScenarioSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grid: GridCostParams,
    pub users: Vec<UserModel>,
    pub meta: ScenarioMeta,
}

#[derive(Serialize, Deserialize)]
struct GridDoc {
    slot_count: usize,
    k: Vec<f64>,
    alpha: Vec<f64>,
    beta_m: f64,
}

#[derive(Serialize, Deserialize)]
struct ScenarioDoc {
    grid: GridDoc,
    users: Vec<UserModel>,
    #[serde(default)]
    meta: ScenarioMeta,
}

impl Scenario {
    pub fn slot_count(&self) -> usize {
        self.grid.slot_count()
    }

    pub fn active_users(&self) -> impl Iterator<Item = &UserModel> {
        self.users.iter().filter(|u| u.kind.is_active())
    }

    /// Aggregate of the fixed demands.
    pub fn base_load(&self) -> Vec<f64> {
        let mut load = vec![0.0; self.slot_count()];
        for u in &self.users {
            for (acc, v) in load.iter_mut().zip(&u.base_demand) {
                *acc += v;
            }
        }
        load
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.users.is_empty() {
            return Err(DsmError::EmptyUserSet);
        }
        let slots = self.slot_count();
        for (i, u) in self.users.iter().enumerate() {
            if u.user_id != i {
                return Err(DsmError::Config(format!("user {i} has user_id {}", u.user_id)));
            }
            if u.slot_count() != slots {
                return Err(DsmError::DimensionMismatch(format!(
                    "user {i} has {} slots, grid has {slots}",
                    u.slot_count()
                )));
            }
            u.validate()?;
        }
        for (h, v) in self.base_load().into_iter().enumerate() {
            if !(v > 0.0) {
                return Err(DsmError::NonPositiveAggregateLoad { slot: h + 1, value: v });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ScenarioDoc {
            grid: GridDoc {
                slot_count: self.slot_count(),
                k: self.grid.k.clone(),
                alpha: self.grid.alpha.clone(),
                beta_m: self.grid.beta_m,
            },
            users: self.users.clone(),
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScenarioDoc =
            serde_json::from_str(text).map_err(|e| DsmError::Config(format!("scenario: {e}")))?;
        if doc.grid.k.len() != doc.grid.slot_count || doc.grid.alpha.len() != doc.grid.slot_count {
            return Err(DsmError::Config(format!(
                "grid.slot_count = {} but k has {} and alpha {} entries",
                doc.grid.slot_count,
                doc.grid.k.len(),
                doc.grid.alpha.len()
            )));
        }
        let s = Self {
            grid: GridCostParams::new(doc.grid.k, doc.grid.alpha, doc.grid.beta_m)?,
            users: doc.users,
            meta: doc.meta,
        };
        s.validate()?;
        Ok(s)
    }

    /// Same scenario with a different `β_m`.
    pub fn with_beta_m(mut self, beta_m: f64) -> Self {
        self.grid.beta_m = beta_m;
        self
    }
}

pub fn build_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let slots = spec.slot_count;
    let template = resample_template(spec.template.as_deref().unwrap_or(&TYPICAL_DAY), slots);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let noise = Normal::new(0.0, spec.noise_std())
        .map_err(|e| DsmError::Config(format!("noise: {e}")))?;
    let demands: Vec<Vec<f64>> = (0..spec.user_count)
        .map(|_| {
            template
                .iter()
                .map(|w| (spec.mean_daily_demand * w + noise.sample(&mut rng)).max(0.0))
                .collect()
        })
        .collect();

    let k = calibrate_prices(&demands, spec.day_night_ratio, spec.target_avg_price)?;
    let mut alpha = vec![0.0; slots];
    for d in &demands {
        for (a, v) in alpha.iter_mut().zip(d) {
            *a += spec.alpha_fraction * v;
        }
    }

    let dev = &spec.devices;
    let (_, g, s, gs) = population(spec.user_count);
    let gen_cap_day = match dev.gen_budget {
        GenBudget::Daily => dev.gen_budget_factor * dev.gen_cap_hour * slots as f64,
        GenBudget::Literal => dev.gen_budget_factor * dev.gen_cap_hour,
    };
    let users = demands
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let kind = if i < g {
                UserKind::GenOnly
            } else if i < g + s {
                UserKind::StoreOnly
            } else if i < g + s + gs {
                UserKind::GenStore
            } else {
                UserKind::Passive
            };
            let mut u = UserModel::passive(i, e);
            u.kind = kind;
            if kind.has_generation() {
                u.gen_cap_hour = dev.gen_cap_hour;
                u.gen_cap_day = gen_cap_day;
            }
            if kind.has_storage() {
                u.storage_capacity = dev.storage_capacity;
                u.charge_rate_max = dev.charge_rate_fraction * dev.storage_capacity;
                u.leak_rate = dev.daily_retention.powf(1.0 / slots as f64);
                u.charge_eff = dev.charge_eff;
                u.discharge_eff = dev.discharge_eff;
                u.initial_charge = dev.initial_charge_fraction * dev.storage_capacity;
                u.end_of_day_delta = dev.end_of_day_delta;
            }
            u
        })
        .collect();

    let scenario = Scenario {
        grid: GridCostParams::new(k, alpha, spec.beta_m)?,
        users,
        meta: ScenarioMeta {
            seed: Some(spec.rng_seed),
            spec: Some(spec.clone()),
        },
    };
    scenario.validate()?;
    Ok(scenario)
}
