//! Synthetic market resembling the Spanish system, for tests and demos.
//!
//! Demand, renewable capacity factors and fuel prices are drawn from simple
//! seasonal processes. Conventional costs are linear in fuel and carbon
//! prices, and the observed dispatch is the rolling-horizon solution of the
//! dispatch model with those costs.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::features::{Calendar, RawSeries};
use crate::market::{
    rolling_horizon_dispatch, CostCurves, DispatchSettings, DispatchSolution, MarketScenario, NegativeDemand,
    Technology,
};

pub const GAS: &str = "gas_price";
pub const COAL: &str = "coal_price";
pub const CARBON: &str = "carbon_price";
pub const FUELS: [&str; 3] = [GAS, COAL, CARBON];

/// Linear cost law of one technology in GW units (costs in EUR/MWh).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueCost {
    pub intercept: f64,
    pub gas: f64,
    pub coal: f64,
    pub carbon: f64,
    pub c2: f64,
    pub k: f64,
}

impl TrueCost {
    pub fn c1(&self, gas: f64, coal: f64, carbon: f64) -> f64 {
        self.intercept + self.gas * gas + self.coal * coal + self.carbon * carbon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTech {
    pub id: String,
    pub capacity_gw: f64,
    pub ramp_gw: f64,
    pub cost: TrueCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub start: DateTime<Utc>,
    pub days: usize,
    pub conventional: Vec<SynthTech>,
    pub solar_gw: f64,
    pub wind_gw: f64,
    pub hydro_gw: f64,
    pub storage_power_gw: f64,
    pub storage_energy_gwh: f64,
    pub storage_efficiency: f64,
    pub annual_demand_twh: f64,
    /// Starting fuel prices: gas and coal in EUR/MWh, carbon in EUR/t.
    pub fuel_start: [f64; 3],
    /// Daily log-volatility of the fuel prices.
    pub fuel_volatility: [f64; 3],
    /// Multiplies every fuel price path.
    pub fuel_multiplier: [f64; 3],
    /// Dispatch window; calibrate with the same block length.
    pub window_hours: usize,
}

impl SynthConfig {
    /// Spain-like defaults: 2023 capacities, nuclear, coal and gas as the
    /// conventional fleet.
    pub fn spain_like(seed: u64, days: usize) -> Self {
        Self {
            seed,
            start: Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap(),
            days,
            conventional: vec![
                SynthTech {
                    id: "nuclear".into(),
                    capacity_gw: 7.1,
                    ramp_gw: 0.6,
                    cost: TrueCost {
                        intercept: 9.0,
                        gas: 0.0,
                        coal: 0.0,
                        carbon: 0.0,
                        c2: 0.3,
                        k: 3.0,
                    },
                },
                SynthTech {
                    id: "coal".into(),
                    capacity_gw: 3.22,
                    ramp_gw: 1.2,
                    cost: TrueCost {
                        intercept: 6.0,
                        gas: 0.0,
                        coal: 2.4,
                        carbon: 0.9,
                        c2: 1.5,
                        k: 1.5,
                    },
                },
                SynthTech {
                    id: "gas".into(),
                    capacity_gw: 29.9,
                    ramp_gw: 9.0,
                    cost: TrueCost {
                        intercept: 4.0,
                        gas: 1.8,
                        coal: 0.0,
                        carbon: 0.36,
                        c2: 0.6,
                        k: 0.5,
                    },
                },
            ],
            solar_gw: 24.0,
            wind_gw: 30.0,
            hydro_gw: 16.0,
            storage_power_gw: 3.42,
            storage_energy_gwh: 27.0,
            storage_efficiency: 0.9,
            annual_demand_twh: 247.64,
            fuel_start: [40.0, 14.0, 85.0],
            fuel_volatility: [0.03, 0.02, 0.015],
            fuel_multiplier: [1.0; 3],
            window_hours: 168,
        }
    }

    /// Three conventional technologies of similar size, each marginal for a
    /// share of the hours, with nearly linear costs (`c2 = 0.01`).
    pub fn three_tech(seed: u64, days: usize) -> Self {
        let tech = |id: &str, capacity_gw: f64, cost: TrueCost| SynthTech {
            id: id.into(),
            capacity_gw,
            ramp_gw: 8.0,
            cost,
        };
        Self {
            conventional: vec![
                tech(
                    "base",
                    8.0,
                    TrueCost {
                        intercept: 20.0,
                        gas: 0.0,
                        coal: 1.0,
                        carbon: 0.1,
                        c2: 0.01,
                        k: 0.2,
                    },
                ),
                tech(
                    "mid",
                    10.0,
                    TrueCost {
                        intercept: 10.0,
                        gas: 0.5,
                        coal: 1.5,
                        carbon: 0.3,
                        c2: 0.01,
                        k: 0.2,
                    },
                ),
                tech(
                    "peak",
                    25.0,
                    TrueCost {
                        intercept: 15.0,
                        gas: 2.0,
                        coal: 0.0,
                        carbon: 0.4,
                        c2: 0.01,
                        k: 0.2,
                    },
                ),
            ],
            storage_power_gw: 0.0,
            storage_energy_gwh: 0.0,
            hydro_gw: 6.0,
            ..Self::spain_like(seed, days)
        }
    }

    pub fn hours(&self) -> usize {
        self.days * 24
    }
}

/// National holidays with fixed dates.
pub fn spanish_calendar(years: std::ops::RangeInclusive<i32>) -> Calendar {
    let fixed = [
        (1, 1),
        (1, 6),
        (5, 1),
        (8, 15),
        (10, 12),
        (11, 1),
        (12, 6),
        (12, 8),
        (12, 25),
    ];
    let mut holidays = BTreeSet::new();
    for y in years {
        for (m, d) in fixed {
            holidays.insert(NaiveDate::from_ymd_opt(y, m, d).expect("valid date"));
        }
    }
    Calendar { holidays }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub calendar: Calendar,
    /// Fuel and carbon prices.
    pub exogenous: RawSeries,
    pub load: Vec<f64>,
    pub solar_cf: Vec<f64>,
    pub wind_cf: Vec<f64>,
    pub hydro_cf: Vec<f64>,
    pub scenario: MarketScenario,
    pub true_costs: CostCurves,
    pub dispatch: DispatchSolution,
}

impl SynthDataset {
    pub fn solar_output(&self) -> Vec<f64> {
        self.solar_cf.iter().map(|c| c * self.config.solar_gw).collect()
    }
}

fn day_of_year(ts: DateTime<Utc>) -> f64 {
    ts.ordinal0() as f64
}

/// Clear-sky solar shape with seasonal day length.
pub fn clear_sky(ts: DateTime<Utc>) -> f64 {
    let doy = day_of_year(ts);
    let day_length = 12.0 + 2.5 * (2.0 * PI * (doy - 80.0) / 365.0).sin();
    let sunrise = 13.0 - day_length / 2.0;
    let h = ts.hour() as f64 + 0.5;
    if h <= sunrise || h >= sunrise + day_length {
        return 0.0;
    }
    let elevation = (PI * (h - sunrise) / day_length).sin();
    let season = 0.8 + 0.2 * (2.0 * PI * (doy - 80.0) / 365.0).sin();
    0.85 * season * elevation.powf(1.3)
}

/// Load shape relative to the annual mean.
pub fn load_shape(ts: DateTime<Utc>, calendar: &Calendar) -> f64 {
    let doy = day_of_year(ts);
    let h = ts.hour() as f64;
    let daily = 0.86 + 0.12 * (-((h - 11.0) / 3.5).powi(2)).exp() + 0.16 * (-((h - 20.5) / 2.5).powi(2)).exp()
        - 0.08 * (-((h - 4.0) / 3.0).powi(2)).exp();
    let seasonal =
        1.0 + 0.07 * (2.0 * PI * (doy - 15.0) / 365.0).cos() + 0.05 * (4.0 * PI * (doy - 200.0) / 365.0).cos();
    let weekday = match ts.weekday().num_days_from_monday() {
        5 => 0.92,
        6 => 0.86,
        _ => 1.0,
    };
    let holiday = if calendar.is_holiday(ts.date_naive()) {
        0.88
    } else {
        1.0
    };
    daily * seasonal * weekday * holiday
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    if config.days == 0 {
        return Err(CoreError::InvalidInput("synthetic horizon must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let hours = config.hours();
    let timestamps: Vec<DateTime<Utc>> = (0..hours).map(|h| config.start + Duration::hours(h as i64)).collect();
    let last_year = timestamps.last().expect("non-empty").year();
    let calendar = spanish_calendar(config.start.year()..=last_year);
    let std = Normal::new(0.0, 1.0).expect("unit normal");

    // Daily fuel paths.
    let mut fuel = [Vec::new(), Vec::new(), Vec::new()];
    let mut level = config.fuel_start.map(f64::ln);
    for _ in 0..config.days {
        for f in 0..3 {
            level[f] += config.fuel_volatility[f] * std.sample(&mut rng);
            fuel[f].push(level[f].exp() * config.fuel_multiplier[f]);
        }
    }

    let mean_load = config.annual_demand_twh * 1000.0 / 8760.0;
    let mut cloud = 0.0f64;
    let mut wind_state = 0.0f64;
    let mut load_noise = 0.0f64;
    let mut load = Vec::with_capacity(hours);
    let mut solar_cf = Vec::with_capacity(hours);
    let mut wind_cf = Vec::with_capacity(hours);
    let mut hydro_cf = Vec::with_capacity(hours);
    for ts in &timestamps {
        if ts.hour() == 0 {
            cloud = 0.6 * cloud + 0.8 * std.sample(&mut rng);
        }
        wind_state = 0.97 * wind_state + 0.25 * std.sample(&mut rng);
        load_noise = 0.9 * load_noise + 0.01 * std.sample(&mut rng);
        let doy = day_of_year(*ts);
        let clouds = 1.0 - 0.45 / (1.0 + (-1.5 * cloud).exp());
        solar_cf.push(clear_sky(*ts) * clouds);
        let winter = 1.0 + 0.2 * (2.0 * PI * (doy - 15.0) / 365.0).cos();
        let logistic = 1.0 / (1.0 + (-(wind_state - 0.9)).exp());
        wind_cf.push((0.03 + 0.62 * logistic * winter).min(0.95));
        hydro_cf.push(0.24 + 0.08 * (2.0 * PI * (doy - 60.0) / 365.0).cos() + 0.01 * rng.random::<f64>());
        load.push(mean_load * load_shape(*ts, &calendar) * (1.0 + load_noise));
    }

    let residual: Vec<f64> = (0..hours)
        .map(|t| load[t] - solar_cf[t] * config.solar_gw - wind_cf[t] * config.wind_gw - hydro_cf[t] * config.hydro_gw)
        .collect();

    let n = config.conventional.len();
    let mut scenario = MarketScenario::simple(
        config
            .conventional
            .iter()
            .map(|c| Technology::conventional(&c.id))
            .collect(),
        residual,
        config.conventional.iter().map(|c| vec![c.capacity_gw; hours]).collect(),
    );
    scenario.timestamps = timestamps.clone();
    scenario.ramp_up = config.conventional.iter().map(|c| vec![c.ramp_gw; hours]).collect();
    scenario.ramp_down = scenario.ramp_up.clone();
    scenario.storage_energy_cap = vec![config.storage_energy_gwh; hours];
    scenario.storage_charge_cap = vec![config.storage_power_gw; hours];
    scenario.storage_discharge_cap = vec![config.storage_power_gw; hours];
    scenario.storage_efficiency = config.storage_efficiency;
    scenario.initial_storage = 0.5 * config.storage_energy_gwh;

    let day = |t: usize| t / 24;
    let mut c1 = vec![vec![0.0; hours]; n];
    for (i, tech) in config.conventional.iter().enumerate() {
        for t in 0..hours {
            c1[i][t] = tech.cost.c1(fuel[0][day(t)], fuel[1][day(t)], fuel[2][day(t)]);
        }
    }
    let true_costs = CostCurves {
        c1,
        c2: config.conventional.iter().map(|c| vec![c.cost.c2; hours]).collect(),
        k: config.conventional.iter().map(|c| vec![c.cost.k; hours]).collect(),
    };
    let settings = DispatchSettings {
        negative_demand: NegativeDemand::Curtail,
        ..Default::default()
    };
    let dispatch = rolling_horizon_dispatch(&scenario, &true_costs, &settings, config.window_hours, true)?;

    let exogenous = RawSeries {
        timestamps,
        series: FUELS
            .iter()
            .enumerate()
            .map(|(f, name)| (name.to_string(), (0..hours).map(|t| fuel[f][day(t)]).collect()))
            .collect(),
    };
    Ok(SynthDataset {
        config: config.clone(),
        calendar,
        exogenous,
        load,
        solar_cf,
        wind_cf,
        hydro_cf,
        scenario,
        true_costs,
        dispatch,
    })
}
