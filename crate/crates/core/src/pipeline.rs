//! End-to-end workflow: datasets on disk, calibration, forecasting,
//! backtests, penalty tuning, sensitivity sweeps and the scenario study.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data_io::{fill_gaps, format_value, load_hourly_csv, residual_demand, FillPolicy, HourlyData, TIMESTAMP};
use crate::error::{CoreError, Result};
use crate::features::{
    build_features_from, fit_seasonal, transform_features, Calendar, FeatureMatrix, RawSeries, SeasonalOptions,
};
use crate::inverse::{
    calibrate, infer_ramp_limits, infer_storage_power, predict_costs, CalibratedModel, CalibrationProblem,
    ObservedDispatch, RegressionDesign, TechDesign, DEFAULT_BLOCK_HOURS,
};
use crate::learn::{cmaes_minimize, cross_validate, fit_lasso_cd, lambda_max, log_grid, CmaesOptions, LassoModel};
use crate::market::{
    rolling_horizon_dispatch, CostCurves, DispatchSettings, DispatchSolution, MarketScenario, NegativeDemand,
    Technology,
};
use crate::scenario::{build_market_scenarios, ScenarioConfig, SeasonalBundle, LOAD};
use crate::synth::{generate, SynthConfig, SynthDataset};
use crate::valuation::{
    backtest, capture_price, sensitivity_sweep, BacktestReport, SensitivityFactor, SensitivityGrid,
};

pub const SYSTEM_FILE: &str = "system.json";
pub const HOURLY_FILE: &str = "hourly.csv";
pub const PRICE: &str = "price";
pub const STORAGE_LEVEL: &str = "storage_level";
pub const CHARGE: &str = "charge";
pub const DISCHARGE: &str = "discharge";
pub const IMPORTS: &str = "imports";
pub const EXPORTS: &str = "exports";

/// Static description of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDescription {
    /// Conventional technologies; output columns are `x_<id>`.
    pub technologies: Vec<String>,
    /// Installed capacity per technology, renewables included.
    pub capacities: BTreeMap<String, f64>,
    /// Renewable output columns.
    pub renewables: Vec<String>,
    /// Exogenous cost drivers.
    pub features: Vec<String>,
    pub storage_energy: f64,
    pub storage_efficiency: f64,
    /// Known ramp limit per technology (both directions); technologies not
    /// listed get the largest observed change.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ramp_limits: BTreeMap<String, f64>,
    /// Known storage power limit; the largest observed flow when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage_power: Option<f64>,
    #[serde(default)]
    pub calendar: Calendar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub system: SystemDescription,
    pub hourly: HourlyData,
}

fn x_col(id: &str) -> String {
    format!("x_{id}")
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.hourly.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hourly.is_empty()
    }

    pub fn slice(&self, range: Range<usize>) -> Self {
        let mut hourly = self.hourly.clone();
        hourly.timestamps = hourly.timestamps[range.clone()].to_vec();
        for (_, v) in &mut hourly.columns {
            *v = v[range.clone()].to_vec();
        }
        Self {
            system: self.system.clone(),
            hourly,
        }
    }

    pub fn residual_demand(&self) -> Result<Vec<f64>> {
        let h = &self.hourly;
        let ren = self
            .system
            .renewables
            .iter()
            .map(|r| h.require(r))
            .collect::<Result<Vec<_>>>()?;
        let zeros = vec![0.0; h.len()];
        residual_demand(
            h.require(LOAD)?,
            &ren,
            h.get(IMPORTS).unwrap_or(&zeros),
            h.get(EXPORTS).unwrap_or(&zeros),
        )
    }

    pub fn observed(&self) -> Result<ObservedDispatch> {
        let h = &self.hourly;
        Ok(ObservedDispatch {
            x: self
                .system
                .technologies
                .iter()
                .map(|id| h.require(&x_col(id)).map(<[f64]>::to_vec))
                .collect::<Result<_>>()?,
            s: h.require(STORAGE_LEVEL)?.to_vec(),
            y_plus: h.require(CHARGE)?.to_vec(),
            y_minus: h.require(DISCHARGE)?.to_vec(),
            initial_output: None,
            observed_price: h.get(PRICE).map(<[f64]>::to_vec),
        })
    }

    /// Market scenario with ramp limits and storage power inferred from the
    /// observed dispatch.
    pub fn scenario(&self) -> Result<MarketScenario> {
        let obs = self.observed()?;
        let t = self.len();
        let sys = &self.system;
        let caps = sys
            .technologies
            .iter()
            .map(|id| {
                sys.capacities
                    .get(id)
                    .map(|c| vec![*c; t])
                    .ok_or_else(|| CoreError::Data(format!("no capacity for {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut sc = MarketScenario::simple(
            sys.technologies.iter().map(|id| Technology::conventional(id)).collect(),
            self.residual_demand()?,
            caps,
        );
        sc.timestamps = self.hourly.timestamps.clone();
        let (up, down) = infer_ramp_limits(&obs);
        let declared = |k: usize, inferred: f64| *sys.ramp_limits.get(&sys.technologies[k]).unwrap_or(&inferred);
        sc.ramp_up = up.iter().enumerate().map(|(k, r)| vec![declared(k, *r); t]).collect();
        sc.ramp_down = down.iter().enumerate().map(|(k, r)| vec![declared(k, *r); t]).collect();
        let (yp, ym) = match sys.storage_power {
            Some(p) => (p, p),
            None => infer_storage_power(&obs),
        };
        sc.storage_energy_cap = vec![sys.storage_energy; t];
        sc.storage_charge_cap = vec![yp; t];
        sc.storage_discharge_cap = vec![ym; t];
        sc.storage_efficiency = sys.storage_efficiency;
        sc.initial_storage = obs.s.first().copied().unwrap_or(0.0);
        Ok(sc)
    }

    pub fn raw_features(&self) -> Result<RawSeries> {
        Ok(RawSeries {
            timestamps: self.hourly.timestamps.clone(),
            series: self
                .system
                .features
                .iter()
                .map(|f| Ok((f.clone(), self.hourly.require(f)?.to_vec())))
                .collect::<Result<_>>()?,
        })
    }

    /// Capacity factor of a renewable column.
    pub fn capacity_factor(&self, name: &str) -> Result<Vec<f64>> {
        let cap = self
            .system
            .capacities
            .get(name)
            .copied()
            .filter(|c| *c > 0.0)
            .ok_or_else(|| CoreError::Data(format!("no positive capacity for {name:?}")))?;
        Ok(self.hourly.require(name)?.iter().map(|v| v / cap).collect())
    }
}

pub fn load_dataset(dir: &Path, fill: FillPolicy) -> Result<Dataset> {
    let system: SystemDescription = serde_json::from_str(&fs::read_to_string(dir.join(SYSTEM_FILE))?)?;
    let mut required: Vec<String> = vec![
        LOAD.into(),
        PRICE.into(),
        STORAGE_LEVEL.into(),
        CHARGE.into(),
        DISCHARGE.into(),
    ];
    required.extend(system.renewables.iter().cloned());
    required.extend(system.features.iter().cloned());
    required.extend(system.technologies.iter().map(|t| x_col(t)));
    let names: Vec<&str> = required.iter().map(String::as_str).collect();
    let hourly = fill_gaps(&load_hourly_csv(&dir.join(HOURLY_FILE), &names)?, fill)?;
    if hourly.is_empty() {
        return Err(CoreError::Data("dataset has no rows".into()));
    }
    Ok(Dataset { system, hourly })
}

/// Dataset view of a synthetic run.
pub fn synth_to_dataset(ds: &SynthDataset) -> Dataset {
    let cfg = &ds.config;
    let mut capacities: BTreeMap<String, f64> =
        cfg.conventional.iter().map(|c| (c.id.clone(), c.capacity_gw)).collect();
    capacities.insert("solar".into(), cfg.solar_gw);
    capacities.insert("wind".into(), cfg.wind_gw);
    capacities.insert("hydro".into(), cfg.hydro_gw);
    let system = SystemDescription {
        technologies: cfg.conventional.iter().map(|c| c.id.clone()).collect(),
        capacities,
        renewables: vec!["solar".into(), "wind".into(), "hydro".into()],
        features: ds.exogenous.series.iter().map(|(n, _)| n.clone()).collect(),
        storage_energy: cfg.storage_energy_gwh,
        storage_efficiency: cfg.storage_efficiency,
        ramp_limits: cfg.conventional.iter().map(|c| (c.id.clone(), c.ramp_gw)).collect(),
        storage_power: Some(cfg.storage_power_gw),
        calendar: ds.calendar.clone(),
    };
    let d = &ds.dispatch;
    let scale = |cf: &[f64], cap: f64| cf.iter().map(|v| v * cap).collect::<Vec<_>>();
    let mut columns: Vec<(String, Vec<f64>)> = vec![
        (LOAD.into(), ds.load.clone()),
        ("solar".into(), scale(&ds.solar_cf, cfg.solar_gw)),
        ("wind".into(), scale(&ds.wind_cf, cfg.wind_gw)),
        ("hydro".into(), scale(&ds.hydro_cf, cfg.hydro_gw)),
    ];
    columns.extend(ds.exogenous.series.iter().cloned());
    columns.push((PRICE.into(), d.price.clone()));
    for (c, x) in cfg.conventional.iter().zip(&d.x) {
        columns.push((x_col(&c.id), x.clone()));
    }
    columns.push((STORAGE_LEVEL.into(), d.s.clone()));
    columns.push((CHARGE.into(), d.y_plus.clone()));
    columns.push((DISCHARGE.into(), d.y_minus.clone()));
    Dataset {
        system,
        hourly: HourlyData {
            timestamps: ds.exogenous.timestamps.clone(),
            columns,
            gaps: Vec::new(),
        },
    }
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SYSTEM_FILE), serde_json::to_string_pretty(&ds.system)? + "\n")?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(dir.join(HOURLY_FILE))?;
    let mut header = vec![TIMESTAMP.to_string()];
    header.extend(ds.hourly.columns.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    for (t, ts) in ds.hourly.timestamps.iter().enumerate() {
        let mut row = vec![ts.to_rfc3339()];
        row.extend(ds.hourly.columns.iter().map(|(_, v)| format_value(v[t])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    #[default]
    Base,
    Solar,
    Wind,
}

impl WeightKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Self::Base),
            "solar" => Ok(Self::Solar),
            "wind" => Ok(Self::Wind),
            _ => Err(CoreError::InvalidInput(format!("unknown weighting {s:?}"))),
        }
    }

    pub fn weights(self, ds: &Dataset) -> Result<Vec<f64>> {
        match self {
            Self::Base => Ok(vec![1.0; ds.len()]),
            Self::Solar => ds.capacity_factor("solar"),
            Self::Wind => ds.capacity_factor("wind"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// One `[lambda1, lambda2, lambda3]` per technology, or a single entry
    /// applied to all.
    pub lambdas: Vec<[f64; 3]>,
    pub binding_tol: f64,
    pub block_hours: usize,
    pub pin_prices: bool,
    pub weights: WeightKind,
    /// Columns of `Z1`; base features plus intercept when absent.
    pub z1: Option<Vec<String>>,
    /// Columns of `Z2`; intercept only when absent.
    pub z2: Option<Vec<String>>,
    /// Columns of `Z3`; intercept only when absent.
    pub z3: Option<Vec<String>>,
    /// Hours of the dataset used for training; all when absent.
    pub train_hours: Option<Range<usize>>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![[1e-3; 3]],
            binding_tol: 1e-6,
            block_hours: DEFAULT_BLOCK_HOURS,
            pin_prices: true,
            weights: WeightKind::Base,
            z1: None,
            z2: None,
            z3: None,
            train_hours: None,
        }
    }
}

impl CalibrationConfig {
    fn lambdas_for(&self, n: usize) -> Result<Vec<[f64; 3]>> {
        match self.lambdas.len() {
            1 => Ok(vec![self.lambdas[0]; n]),
            k if k == n => Ok(self.lambdas.clone()),
            k => Err(CoreError::InvalidInput(format!(
                "{k} penalty triples for {n} technologies"
            ))),
        }
    }
}

fn group_design(fm: &FeatureMatrix, columns: Option<&Vec<String>>, default_base: bool) -> Result<RegressionDesign> {
    match columns {
        Some(c) => RegressionDesign::from_features(fm, c),
        None if default_base => {
            let mut c = fm.schema.base.clone();
            c.push(crate::features::INTERCEPT.to_string());
            RegressionDesign::from_features(fm, &c)
        }
        None => Ok(RegressionDesign::constant(fm.n_rows())),
    }
}

/// Feature matrix, designs and calibration problem for a dataset.
pub fn calibration_problem(ds: &Dataset, cfg: &CalibrationConfig) -> Result<(CalibrationProblem, FeatureMatrix)> {
    let ds = match &cfg.train_hours {
        Some(r) if r.end <= ds.len() && r.start < r.end => ds.slice(r.clone()),
        Some(r) => {
            return Err(CoreError::InvalidInput(format!(
                "training hours {r:?} outside the dataset"
            )))
        }
        None => ds.clone(),
    };
    let raw = ds.raw_features()?;
    let fm = build_features_from(&raw, &ds.system.features, &ds.system.calendar)?;
    let n = ds.system.technologies.len();
    let design = TechDesign {
        groups: [
            group_design(&fm, cfg.z1.as_ref(), true)?,
            group_design(&fm, cfg.z2.as_ref(), false)?,
            group_design(&fm, cfg.z3.as_ref(), false)?,
        ],
    };
    let mut problem = CalibrationProblem::new(ds.scenario()?, ds.observed()?, vec![design; n]);
    problem.weights = cfg.weights.weights(&ds)?;
    problem.lambdas = cfg.lambdas_for(n)?;
    problem.binding_tol = cfg.binding_tol;
    problem.block_hours = cfg.block_hours;
    problem.pin_prices = cfg.pin_prices;
    Ok((problem, fm))
}

pub fn calibrate_dataset(
    ds: &Dataset,
    cfg: &CalibrationConfig,
    settings: &ppa_qp::SolverSettings,
) -> Result<CalibratedModel> {
    let (problem, fm) = calibration_problem(ds, cfg)?;
    let mut model = calibrate(&problem, settings)?;
    model.feature_schema = Some(fm.schema);
    Ok(model)
}

/// Designs for new data laid out like the model's training designs.
pub fn model_designs(model: &CalibratedModel, raw: &RawSeries, calendar: &Calendar) -> Result<Vec<TechDesign>> {
    let schema = model
        .feature_schema
        .as_ref()
        .ok_or_else(|| CoreError::Data("model carries no feature schema".into()))?;
    let fm = transform_features(raw, schema, calendar)?;
    model
        .technologies
        .iter()
        .map(|tm| {
            let g = |j: usize| RegressionDesign::from_features(&fm, &tm.groups[j].columns);
            Ok(TechDesign {
                groups: [g(0)?, g(1)?, g(2)?],
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastSettings {
    pub window_hours: usize,
    pub negative_demand: NegativeDemand,
    /// Price of an always-available backstop; `None` lets shortages fail.
    pub scarcity_price: Option<f64>,
}

impl Default for ForecastSettings {
    fn default() -> Self {
        Self {
            window_hours: 168,
            negative_demand: NegativeDemand::Curtail,
            scarcity_price: Some(3000.0),
        }
    }
}

pub const SCARCITY: &str = "scarcity";

fn with_backstop(sc: &MarketScenario, costs: &CostCurves, price: f64) -> (MarketScenario, CostCurves) {
    let t = sc.n_periods();
    let mut sc = sc.clone();
    let mut costs = costs.clone();
    let peak = sc.demand.iter().fold(0.0f64, |a, b| a.max(*b)) + 1.0;
    sc.technologies.push(Technology {
        id: SCARCITY.into(),
        is_conventional: false,
    });
    sc.capacity.push(vec![peak; t]);
    sc.ramp_up.push(vec![f64::INFINITY; t]);
    sc.ramp_down.push(vec![f64::INFINITY; t]);
    if let Some(x0) = &mut sc.initial_output {
        x0.push(0.0);
    }
    costs.c1.push(vec![price; t]);
    costs.c2.push(vec![0.0; t]);
    costs.k.push(vec![0.0; t]);
    (sc, costs)
}

/// Predicts costs from exogenous series and dispatches the scenario.
pub fn forecast(
    model: &CalibratedModel,
    scenario: &MarketScenario,
    exogenous: &RawSeries,
    calendar: &Calendar,
    settings: &ForecastSettings,
) -> Result<DispatchSolution> {
    let ids: Vec<&str> = scenario.technologies.iter().map(|t| t.id.as_str()).collect();
    let model_ids = model.technology_ids();
    if ids != model_ids.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(CoreError::Data(format!(
            "scenario technologies {ids:?} differ from model {model_ids:?}"
        )));
    }
    let costs = predict_costs(model, &model_designs(model, exogenous, calendar)?)?;
    let dispatch = DispatchSettings {
        negative_demand: settings.negative_demand,
        ..Default::default()
    };
    match settings.scarcity_price {
        Some(p) => {
            let (sc, costs) = with_backstop(scenario, &costs, p);
            let mut sol = rolling_horizon_dispatch(&sc, &costs, &dispatch, settings.window_hours, true)?;
            let backstop: f64 = sol.x.last().map_or(0.0, |x| x.iter().sum());
            if backstop > 1e-6 {
                log::warn!("backstop supplied {backstop} over the horizon");
            }
            for series in [
                &mut sol.x,
                &mut sol.r_plus,
                &mut sol.r_minus,
                &mut sol.alpha_upper,
                &mut sol.alpha_lower,
                &mut sol.delta_upper,
                &mut sol.delta_lower,
                &mut sol.theta_upper,
                &mut sol.theta_lower,
                &mut sol.mu,
            ] {
                series.pop();
            }
            Ok(sol)
        }
        None => rolling_horizon_dispatch(scenario, &costs, &dispatch, settings.window_hours, true),
    }
}

/// Forecast over the dataset's own hours compared with observed prices.
pub fn backtest_dataset(
    model: &CalibratedModel,
    ds: &Dataset,
    settings: &ForecastSettings,
) -> Result<(BacktestReport, Vec<f64>)> {
    let sol = forecast(
        model,
        &ds.scenario()?,
        &ds.raw_features()?,
        &ds.system.calendar,
        settings,
    )?;
    let actual = ds.hourly.require(PRICE)?;
    let solar = ds.capacity_factor("solar").ok();
    let wind = ds.capacity_factor("wind").ok();
    let flat = vec![1.0; actual.len()];
    let mut profiles: Vec<(&str, &[f64])> = vec![("base", &flat)];
    if let Some(s) = &solar {
        profiles.push(("solar", s));
    }
    if let Some(w) = &wind {
        profiles.push(("wind", w));
    }
    Ok((backtest(&sol.price, actual, &profiles)?, sol.price))
}

/// LASSO price regression on the feature matrix, penalty by 5-fold CV.
pub fn lasso_price_baseline(train: &FeatureMatrix, price: &[f64], weights: &[f64]) -> Result<LassoModel> {
    let x = feature_design(train);
    let hi = lambda_max(&x, price, weights)?;
    let grid = log_grid(hi.max(1e-12), 1e-4, 12);
    let cv = cross_validate(fit_lasso_cd, &x, price, weights, 5, &grid)?;
    fit_lasso_cd(&x, price, weights, cv.best_lambda)
}

/// Feature columns as a design matrix, intercept column dropped.
pub fn feature_design(fm: &FeatureMatrix) -> DMatrix<f64> {
    let keep: Vec<usize> = (0..fm.column_names().len())
        .filter(|&c| fm.column_names()[c] != crate::features::INTERCEPT)
        .collect();
    DMatrix::from_fn(fm.n_rows(), keep.len(), |r, c| fm.values[r][keep[c]])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    /// `log10 lambda` per technology and group.
    pub best_log_lambdas: Vec<[f64; 3]>,
    pub best_validation_nmae: f64,
    pub evaluations: usize,
    pub trace: Vec<f64>,
}

/// CMA-ES over `log10 lambda` in `[-6, 3]` for all technologies and groups.
/// Each candidate calibrates on the first `train_share` of the hours and is
/// scored by the validation NMAE of the remaining hours.
pub fn tune_lambdas(
    ds: &Dataset,
    base: &CalibrationConfig,
    train_share: f64,
    budget: usize,
    seed: u64,
    forecast_settings: &ForecastSettings,
) -> Result<TuneReport> {
    let n = ds.system.technologies.len();
    let split = ((ds.len() as f64) * train_share).round() as usize;
    if split < 24 || ds.len() - split < 24 {
        return Err(CoreError::InvalidInput(
            "training and validation need at least a day each".into(),
        ));
    }
    let valid = ds.slice(split..ds.len());
    let weights = base.weights.weights(&valid)?;
    let actual = valid.hourly.require(PRICE)?.to_vec();
    let settings = ppa_qp::SolverSettings::default();
    let objective = |z: &[f64]| -> f64 {
        let mut cfg = base.clone();
        cfg.train_hours = Some(0..split);
        cfg.lambdas = z
            .chunks(3)
            .map(|c| [10f64.powf(c[0]), 10f64.powf(c[1]), 10f64.powf(c[2])])
            .collect();
        let run = || -> Result<f64> {
            let model = calibrate_dataset(ds, &cfg, &settings)?;
            let sol = forecast(
                &model,
                &valid.scenario()?,
                &valid.raw_features()?,
                &valid.system.calendar,
                forecast_settings,
            )?;
            crate::valuation::nmae(&sol.price, &actual, &weights)
        };
        run().unwrap_or(f64::INFINITY)
    };
    let dim = 3 * n;
    let opts = CmaesOptions {
        sigma0: 1.5,
        budget,
        seed,
        bounds: Some((vec![-6.0; dim], vec![3.0; dim])),
        population: None,
    };
    let r = cmaes_minimize(objective, &vec![-3.0; dim], &opts)?;
    Ok(TuneReport {
        best_log_lambdas: r.best_point.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
        best_validation_nmae: r.best_value,
        evaluations: r.evaluations_used,
        trace: r.trace,
    })
}

/// A forecast input: hourly system, exogenous drivers and the series that
/// sensitivity factors act on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    /// Residual demand is recomputed from `load` and `renewables`.
    pub market: MarketScenario,
    pub load: Vec<f64>,
    pub renewables: BTreeMap<String, Vec<f64>>,
    pub exogenous: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub calendar: Calendar,
    #[serde(default)]
    pub forecast: ForecastSettings,
}

impl ScenarioFile {
    pub fn market_scenario(&self) -> Result<MarketScenario> {
        let zeros = vec![0.0; self.load.len()];
        let ren: Vec<&[f64]> = self.renewables.values().map(|v| v.as_slice()).collect();
        let mut sc = self.market.clone();
        sc.demand = residual_demand(&self.load, &ren, &zeros, &zeros)?;
        Ok(sc)
    }

    pub fn raw(&self) -> RawSeries {
        RawSeries {
            timestamps: self.market.timestamps.clone(),
            series: self.exogenous.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }

    /// Copy with one factor scaled by `m`.
    pub fn scaled(&self, factor: SensitivityFactor, m: f64) -> Result<Self> {
        let mut s = self.clone();
        let scale = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x *= m);
        let key = |map: &mut BTreeMap<String, Vec<f64>>, name: &str| -> Result<()> {
            let v = map
                .get_mut(name)
                .ok_or_else(|| CoreError::Data(format!("scenario has no {name:?} series")))?;
            v.iter_mut().for_each(|x| *x *= m);
            Ok(())
        };
        match factor {
            SensitivityFactor::GasPrice => key(&mut s.exogenous, "gas_price")?,
            SensitivityFactor::CoalPrice => key(&mut s.exogenous, "coal_price")?,
            SensitivityFactor::CarbonPrice => key(&mut s.exogenous, "carbon_price")?,
            SensitivityFactor::Demand => scale(&mut s.load),
            SensitivityFactor::WindOutput => key(&mut s.renewables, "wind")?,
            SensitivityFactor::SolarOutput => key(&mut s.renewables, "solar")?,
        }
        Ok(s)
    }

    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let h = &ds.hourly;
        Ok(Self {
            market: ds.scenario()?,
            load: h.require(LOAD)?.to_vec(),
            renewables: ds
                .system
                .renewables
                .iter()
                .map(|r| Ok((r.clone(), h.require(r)?.to_vec())))
                .collect::<Result<_>>()?,
            exogenous: ds
                .system
                .features
                .iter()
                .map(|f| Ok((f.clone(), h.require(f)?.to_vec())))
                .collect::<Result<_>>()?,
            calendar: ds.system.calendar.clone(),
            forecast: ForecastSettings::default(),
        })
    }
}

pub fn forecast_scenario(model: &CalibratedModel, scenario: &ScenarioFile) -> Result<DispatchSolution> {
    forecast(
        model,
        &scenario.market_scenario()?,
        &scenario.raw(),
        &scenario.calendar,
        &scenario.forecast,
    )
}

/// Capture price of `volume` under the scenario scaled by each multiplier.
pub fn run_sensitivity(
    model: &CalibratedModel,
    scenario: &ScenarioFile,
    factor: SensitivityFactor,
    volume: &[f64],
) -> Result<SensitivityGrid> {
    if volume.len() != scenario.load.len() {
        return Err(CoreError::Dimension(format!(
            "PPA volume covers {} hours, scenario {}",
            volume.len(),
            scenario.load.len()
        )));
    }
    sensitivity_sweep(factor, |m| {
        let s = if m == 1.0 {
            scenario.clone()
        } else {
            scenario.scaled(factor, m)?
        };
        let sol = forecast_scenario(model, &s)?;
        capture_price(volume, &sol.price)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyConfig {
    pub seed: u64,
    /// Days of synthetic history (at least 365 for the seasonal models).
    pub history_days: usize,
    /// Hours at the start of the history used for calibration.
    pub train_hours: usize,
    pub calibration: CalibrationConfig,
    pub seasonal: SeasonalOptions,
    /// Weeks dispatched per scenario year, spread evenly over the year.
    pub weeks_per_year: usize,
    pub forecast: ForecastSettings,
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            history_days: 365,
            train_hours: 8 * 168,
            calibration: CalibrationConfig {
                block_hours: 168,
                ..Default::default()
            },
            seasonal: SeasonalOptions {
                harmonics: 12,
                grid_size: 8,
                ..Default::default()
            },
            weeks_per_year: 4,
            forecast: ForecastSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCapture {
    pub name: String,
    /// Solar capture price over all dispatched hours.
    pub capture_price: f64,
    pub mean_price: f64,
    pub per_year: Vec<(i32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyReport {
    pub scenarios: Vec<ScenarioCapture>,
    pub model: CalibratedModel,
}

/// Case study settings and policy scenarios in one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyFile {
    pub case_study: CaseStudyConfig,
    pub scenarios: ScenarioConfig,
}

impl CaseStudyFile {
    /// Defaults with fuel curves anchored at the synthetic starting prices.
    pub fn spain_like() -> Self {
        let start = SynthConfig::spain_like(0, 1).fuel_start;
        let levels: Vec<(&str, f64)> = crate::synth::FUELS.iter().copied().zip(start).collect();
        Self {
            case_study: CaseStudyConfig::default(),
            scenarios: crate::scenario::spain_like_config(&levels),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// First hour of each sampled week in a year of `hours` hours.
pub fn sample_weeks(hours: usize, weeks: usize) -> Vec<Range<usize>> {
    let slots = hours / 168;
    let weeks = weeks.clamp(1, slots.max(1));
    (0..weeks)
        .map(|k| {
            let w = (2 * k + 1) * slots / (2 * weeks);
            let a = (w * 168).min(hours.saturating_sub(168));
            a..(a + 168).min(hours)
        })
        .collect()
}

/// Synthetic history, calibration, seasonal shapes and the three policy
/// scenarios; returns solar capture prices per scenario.
pub fn run_case_study(cfg: &CaseStudyConfig, scenarios: &ScenarioConfig) -> Result<CaseStudyReport> {
    let mut synth = SynthConfig::spain_like(cfg.seed, cfg.history_days);
    synth.window_hours = cfg.calibration.block_hours;
    let hist = generate(&synth)?;
    let ds = synth_to_dataset(&hist);

    let mut cal = cfg.calibration.clone();
    cal.train_hours = Some(0..cfg.train_hours.min(ds.len()));
    log::info!("case study: history generated");
    let model = calibrate_dataset(&ds, &cal, &ppa_qp::SolverSettings::default())?;
    log::info!("case study: calibrated");

    let ts = &hist.exogenous.timestamps;
    let mut models = BTreeMap::new();
    models.insert(
        LOAD.to_string(),
        fit_seasonal(ts, &hist.load, &cfg.seasonal, &hist.calendar)?,
    );
    for (name, cf) in [
        ("solar", &hist.solar_cf),
        ("wind", &hist.wind_cf),
        ("hydro", &hist.hydro_cf),
    ] {
        models.insert(name.to_string(), fit_seasonal(ts, cf, &cfg.seasonal, &hist.calendar)?);
    }
    let last_year = scenarios.end_year;
    let shapes = SeasonalBundle {
        models,
        calendar: crate::synth::spanish_calendar(scenarios.start_year..=last_year),
    };
    log::info!("case study: seasonal models fitted");
    let built = build_market_scenarios(scenarios, &shapes)?;

    let mut out = Vec::new();
    for sc in &built {
        let (mut num, mut den, mut psum, mut count) = (0.0, 0.0, 0.0, 0usize);
        let mut per_year = Vec::new();
        for year in &sc.years {
            let (mut yn, mut yd) = (0.0, 0.0);
            for range in sample_weeks(year.market.n_periods(), cfg.weeks_per_year) {
                let market = year.market.slice(range.clone());
                let raw = RawSeries {
                    timestamps: year.exogenous.timestamps[range.clone()].to_vec(),
                    series: year
                        .exogenous
                        .series
                        .iter()
                        .map(|(n, v)| (n.clone(), v[range.clone()].to_vec()))
                        .collect(),
                };
                let sol = forecast(&model, &market, &raw, &shapes.calendar, &cfg.forecast)?;
                let solar = &year.renewable_output["solar"][range];
                for (q, p) in solar.iter().zip(&sol.price) {
                    yn += q * p;
                    yd += q;
                    psum += p;
                    count += 1;
                }
            }
            num += yn;
            den += yd;
            per_year.push((year.plan.year, yn / yd));
            log::info!("case study: {} {} dispatched", sc.name, year.plan.year);
        }
        out.push(ScenarioCapture {
            name: sc.name.clone(),
            capture_price: num / den,
            mean_price: psum / count as f64,
            per_year,
        });
    }
    Ok(CaseStudyReport { scenarios: out, model })
}
