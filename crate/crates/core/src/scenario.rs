//! Multi-year market scenarios from policy-style configurations.

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::data_io::residual_demand;
use crate::error::{CoreError, Result};
use crate::features::{seasonal::SeasonalModel, Calendar, RawSeries};
use crate::market::{MarketScenario, Technology, DEFAULT_EFFICIENCY};

pub type Capacities = BTreeMap<String, f64>;

/// Linear path from `start` (first year) to `end` (last year), one map per
/// year. Endpoints are returned exactly.
pub fn interpolate_capacities(start: &Capacities, end: &Capacities, years: usize) -> Result<Vec<Capacities>> {
    for k in start.keys().chain(end.keys()) {
        if !(start.contains_key(k) && end.contains_key(k)) {
            return Err(CoreError::InvalidInput(format!(
                "technology {k:?} appears in one endpoint only"
            )));
        }
    }
    if years == 0 {
        return Err(CoreError::InvalidInput("need at least one year".into()));
    }
    Ok((0..years)
        .map(|y| {
            start
                .iter()
                .map(|(k, s)| {
                    let e = end[k];
                    let v = if y == 0 {
                        *s
                    } else if y == years - 1 {
                        e
                    } else {
                        s + (e - s) * y as f64 / (years - 1) as f64
                    };
                    (k.clone(), v)
                })
                .collect()
        })
        .collect())
}

/// Ramp limits moved by the same percentage as capacity.
pub fn scale_ramps(ramp_start: &Capacities, cap_start: &Capacities, caps: &Capacities) -> Capacities {
    ramp_start
        .iter()
        .map(|(k, r)| {
            let base = cap_start.get(k).copied().unwrap_or(0.0);
            let now = caps.get(k).copied().unwrap_or(base);
            let v = if base > 0.0 { r * now / base } else { *r };
            (k.clone(), v)
        })
        .collect()
}

/// `years` yearly totals, the first equal to `base`, compounding at `rate`.
pub fn grow_demand(base: f64, rate: f64, years: usize) -> Result<Vec<f64>> {
    if !(rate > -1.0) {
        return Err(CoreError::InvalidInput(format!("growth rate {rate} must exceed -1")));
    }
    Ok((0..years).map(|y| base * (1.0 + rate).powi(y as i32)).collect())
}

/// Multiplies a monthly curve by a factor ramping linearly from 1 at the
/// first month to `1 + terminal_pct` at the last.
pub fn scale_fuel_curve(curve: &[f64], terminal_pct: f64) -> Result<Vec<f64>> {
    if let Some(k) = curve.iter().position(|v| !v.is_finite()) {
        return Err(CoreError::Data(format!("fuel curve has a gap at month {k}")));
    }
    let n = curve.len();
    Ok(curve
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let frac = if n > 1 { k as f64 / (n - 1) as f64 } else { 1.0 };
            v * (1.0 + terminal_pct * frac)
        })
        .collect())
}

/// Default firm capacity factors.
pub fn default_firm_factors() -> Capacities {
    [
        ("solar", 0.255),
        ("wind", 0.235),
        ("hydro", 0.121),
        ("gas", 0.31),
        ("coal", 0.192),
        ("nuclear", 0.90),
        ("pumped_storage", 0.244),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageConfig {
    pub technology: String,
    /// Energy capacity as hours at full power.
    pub energy_hours: f64,
    #[serde(default = "default_efficiency")]
    pub efficiency: f64,
}

fn default_efficiency() -> f64 {
    DEFAULT_EFFICIENCY
}

/// Monthly price curves starting at January of `start_year`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuelCurves {
    pub start_year: i32,
    pub series: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOverride {
    pub name: String,
    /// Share of the planned renewable additions that materializes.
    pub renewable_share: f64,
    pub demand_growth: f64,
    pub fuel_terminal_pct: f64,
    /// Keep the demand to firm capacity ratio of the reference path.
    pub firm_rule: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub start_year: i32,
    pub end_year: i32,
    pub base_demand_twh: f64,
    /// Installed GW in the first year.
    pub capacities_start: Capacities,
    /// Planned GW in the last year.
    pub capacities_end: Capacities,
    /// Technologies with exogenous output; each needs a capacity-factor model.
    pub renewables: Vec<String>,
    /// Dispatchable technologies in model order.
    pub conventional: Vec<String>,
    pub storage: StorageConfig,
    /// Ramp limits in GW per hour at first-year capacity.
    pub ramp_start: Capacities,
    #[serde(default = "default_firm_factors")]
    pub firm_capacity_factors: Capacities,
    /// Technologies adjusted, in order, to meet the firm capacity target.
    pub firm_priority: Vec<String>,
    /// Demand growth of the reference path that sets the firm ratio.
    pub demand_growth: f64,
    pub fuel_curves: FuelCurves,
    pub scenario_overrides: Vec<ScenarioOverride>,
}

impl ScenarioConfig {
    pub fn years(&self) -> Vec<i32> {
        (self.start_year..=self.end_year).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.end_year < self.start_year {
            return Err(CoreError::InvalidInput(format!(
                "end year {} precedes start year {}",
                self.end_year, self.start_year
            )));
        }
        if self.fuel_curves.start_year > self.start_year {
            return Err(CoreError::InvalidInput("fuel curves start after the scenario".into()));
        }
        let months = ((self.end_year - self.fuel_curves.start_year + 1) * 12) as usize;
        for (name, curve) in &self.fuel_curves.series {
            if curve.len() < months {
                return Err(CoreError::InvalidInput(format!(
                    "fuel curve {name:?} has {} months, {months} needed",
                    curve.len()
                )));
            }
        }
        for t in self
            .renewables
            .iter()
            .chain(&self.conventional)
            .chain([&self.storage.technology])
        {
            if !self.capacities_start.contains_key(t) {
                return Err(CoreError::InvalidInput(format!("no capacity for {t:?}")));
            }
        }
        for t in &self.conventional {
            if !self.ramp_start.contains_key(t) {
                return Err(CoreError::InvalidInput(format!("no ramp limit for {t:?}")));
            }
        }
        Ok(())
    }
}

fn firm(caps: &Capacities, factors: &Capacities) -> f64 {
    caps.iter()
        .map(|(k, c)| c * factors.get(k).copied().unwrap_or(0.0))
        .sum()
}

/// Yearly capacities and demand of one scenario before hourly expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearPlan {
    pub year: i32,
    pub demand_twh: f64,
    pub capacities: Capacities,
    pub ramps: Capacities,
    /// Demand (TWh) per GW of firm capacity.
    pub firm_ratio: f64,
}

pub fn plan_scenario(config: &ScenarioConfig, ov: &ScenarioOverride) -> Result<Vec<YearPlan>> {
    config.validate()?;
    let n = config.years().len();
    let reference = interpolate_capacities(&config.capacities_start, &config.capacities_end, n)?;
    let ref_demand = grow_demand(config.base_demand_twh, config.demand_growth, n)?;
    let demand = grow_demand(config.base_demand_twh, ov.demand_growth, n)?;
    let f = &config.firm_capacity_factors;

    let mut end = config.capacities_end.clone();
    for r in &config.renewables {
        let s = config.capacities_start[r];
        end.insert(r.clone(), s + ov.renewable_share * (config.capacities_end[r] - s));
    }
    let path = interpolate_capacities(&config.capacities_start, &end, n)?;

    let mut plans = Vec::with_capacity(n);
    for (y, year) in config.years().into_iter().enumerate() {
        let ratio = ref_demand[y] / firm(&reference[y], f);
        let mut caps = path[y].clone();
        if ov.firm_rule {
            let mut gap = demand[y] / ratio - firm(&caps, f);
            let last = config.firm_priority.len().saturating_sub(1);
            for (k, tech) in config.firm_priority.iter().enumerate() {
                let cf = f.get(tech).copied().unwrap_or(0.0);
                if cf <= 0.0 {
                    continue;
                }
                let now = caps.get(tech).copied().unwrap_or(0.0);
                let ceiling = if k == last {
                    f64::INFINITY
                } else {
                    config.capacities_start.get(tech).copied().unwrap_or(0.0).max(now)
                };
                let new = (now + gap / cf).clamp(0.0, ceiling);
                gap -= (new - now) * cf;
                caps.insert(tech.clone(), new);
            }
            if gap.abs() > 1e-9 {
                log::warn!("{}: firm capacity target missed by {gap} GW in {year}", ov.name);
            }
        }
        plans.push(YearPlan {
            year,
            demand_twh: demand[y],
            ramps: scale_ramps(&config.ramp_start, &config.capacities_start, &caps),
            firm_ratio: demand[y] / firm(&caps, f),
            capacities: caps,
        });
    }
    Ok(plans)
}

/// Seasonal models for hourly shapes: `load` plus one capacity-factor model
/// per renewable technology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalBundle {
    pub models: BTreeMap<String, SeasonalModel>,
    pub calendar: Calendar,
}

pub const LOAD: &str = "load";

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioYear {
    pub plan: YearPlan,
    pub market: MarketScenario,
    /// Hourly fuel and carbon prices.
    pub exogenous: RawSeries,
    pub load: Vec<f64>,
    pub renewable_output: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltScenario {
    pub name: String,
    pub years: Vec<ScenarioYear>,
}

pub fn year_timestamps(year: i32) -> Vec<DateTime<Utc>> {
    let start = Utc.with_ymd_and_hms(year, 1, 1, 0, 0, 0).unwrap();
    let end = Utc.with_ymd_and_hms(year + 1, 1, 1, 0, 0, 0).unwrap();
    let hours = (end - start).num_hours();
    (0..hours).map(|h| start + Duration::hours(h)).collect()
}

fn build_year(
    config: &ScenarioConfig,
    ov: &ScenarioOverride,
    plan: YearPlan,
    shapes: &SeasonalBundle,
) -> Result<ScenarioYear> {
    let model = |name: &str| {
        shapes
            .models
            .get(name)
            .ok_or_else(|| CoreError::InvalidInput(format!("no seasonal model for {name:?}")))
    };
    let ts = year_timestamps(plan.year);
    let hours = ts.len();
    let shape: Vec<f64> = ts
        .iter()
        .map(|t| model(LOAD).map(|m| m.predict_at(*t, &shapes.calendar).max(0.0)))
        .collect::<Result<_>>()?;
    let total: f64 = shape.iter().sum();
    if !(total > 0.0) {
        return Err(CoreError::Data("load shape sums to zero".into()));
    }
    let scale = plan.demand_twh * 1000.0 / total;
    let load: Vec<f64> = shape.iter().map(|s| s * scale).collect();

    let mut renewable_output = BTreeMap::new();
    for r in &config.renewables {
        let m = model(r)?;
        let cap = plan.capacities[r];
        let out: Vec<f64> = ts
            .iter()
            .map(|t| cap * m.predict_at(*t, &shapes.calendar).clamp(0.0, 1.0))
            .collect();
        renewable_output.insert(r.clone(), out);
    }
    let ren: Vec<&[f64]> = renewable_output.values().map(|v| v.as_slice()).collect();
    let zeros = vec![0.0; hours];
    let demand = residual_demand(&load, &ren, &zeros, &zeros)?;

    let n = config.conventional.len();
    let mut market = MarketScenario::simple(
        config
            .conventional
            .iter()
            .map(|c| Technology::conventional(c))
            .collect(),
        demand,
        config
            .conventional
            .iter()
            .map(|c| vec![plan.capacities[c]; hours])
            .collect(),
    );
    market.timestamps = ts.clone();
    market.ramp_up = config.conventional.iter().map(|c| vec![plan.ramps[c]; hours]).collect();
    market.ramp_down = market.ramp_up.clone();
    debug_assert_eq!(market.ramp_up.len(), n);
    let power = plan.capacities[&config.storage.technology];
    market.storage_energy_cap = vec![power * config.storage.energy_hours; hours];
    market.storage_charge_cap = vec![power; hours];
    market.storage_discharge_cap = vec![power; hours];
    market.storage_efficiency = config.storage.efficiency;
    market.initial_storage = 0.5 * power * config.storage.energy_hours;

    let curve_start = config.fuel_curves.start_year;
    let total_months = ((config.end_year - curve_start + 1) * 12) as usize;
    let first_month = ((config.start_year - curve_start) * 12) as usize;
    let mut series = Vec::new();
    for (name, curve) in &config.fuel_curves.series {
        let window = &curve[first_month..total_months];
        let scaled = scale_fuel_curve(window, ov.fuel_terminal_pct)?;
        let hourly = ts
            .iter()
            .map(|t| scaled[((t.year() - config.start_year) * 12) as usize + t.month0() as usize])
            .collect();
        series.push((name.clone(), hourly));
    }
    Ok(ScenarioYear {
        plan,
        market,
        exogenous: RawSeries { timestamps: ts, series },
        load,
        renewable_output,
    })
}

/// Builds every scenario in `config.scenario_overrides`, year by year.
pub fn build_market_scenarios(config: &ScenarioConfig, shapes: &SeasonalBundle) -> Result<Vec<BuiltScenario>> {
    config
        .scenario_overrides
        .iter()
        .map(|ov| {
            let years = plan_scenario(config, ov)?
                .into_iter()
                .map(|plan| build_year(config, ov, plan, shapes))
                .collect::<Result<Vec<_>>>()?;
            Ok(BuiltScenario {
                name: ov.name.clone(),
                years,
            })
        })
        .collect()
}

/// The Spanish plan: 2023 installed capacities, 2030 targets, and three
/// scenarios (ambitious, intermediate, business as usual). Fuel curves are
/// flat at the given levels.
pub fn spain_like_config(fuel_levels: &[(&str, f64)]) -> ScenarioConfig {
    let caps = |v: [f64; 7]| -> Capacities {
        ["solar", "wind", "hydro", "gas", "coal", "nuclear", "pumped_storage"]
            .iter()
            .zip(v)
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    };
    let months = 8 * 12;
    ScenarioConfig {
        start_year: 2023,
        end_year: 2030,
        base_demand_twh: 247.64,
        capacities_start: caps([24.0, 30.0, 16.0, 29.9, 3.22, 7.1, 3.42]),
        capacities_end: caps([46.0, 50.0, 16.0, 27.0, 0.0, 3.0, 9.5]),
        renewables: vec!["hydro".into(), "solar".into(), "wind".into()],
        conventional: vec!["nuclear".into(), "coal".into(), "gas".into()],
        storage: StorageConfig {
            technology: "pumped_storage".into(),
            energy_hours: 27.0 / 3.42,
            efficiency: DEFAULT_EFFICIENCY,
        },
        ramp_start: [("nuclear", 0.6), ("coal", 1.2), ("gas", 9.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        firm_capacity_factors: default_firm_factors(),
        firm_priority: vec!["nuclear".into(), "gas".into()],
        demand_growth: 0.03,
        fuel_curves: FuelCurves {
            start_year: 2023,
            series: fuel_levels
                .iter()
                .map(|(k, v)| (k.to_string(), vec![*v; months]))
                .collect(),
        },
        scenario_overrides: vec![
            ScenarioOverride {
                name: "ambitious".into(),
                renewable_share: 1.0,
                demand_growth: 0.03,
                fuel_terminal_pct: -0.10,
                firm_rule: false,
            },
            ScenarioOverride {
                name: "intermediate".into(),
                renewable_share: 0.6,
                demand_growth: 0.02,
                // Halfway between the ambitious decline and flat business as usual.
                fuel_terminal_pct: -0.05,
                firm_rule: true,
            },
            ScenarioOverride {
                name: "bau".into(),
                renewable_share: 0.3,
                demand_growth: 0.01,
                fuel_terminal_pct: 0.0,
                firm_rule: true,
            },
        ],
    }
}
