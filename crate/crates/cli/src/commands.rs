use std::fs;
use std::path::Path;

use ppa_core::data_io::{export_results, format_value, load_hourly_csv, FillPolicy, RunArtifacts};
use ppa_core::error::{CoreError, Result};
use ppa_core::inverse::CalibratedModel;
use ppa_core::pipeline::{
    backtest_dataset, calibrate_dataset, forecast_scenario, load_dataset, run_case_study, run_sensitivity,
    synth_to_dataset, tune_lambdas, write_dataset, CalibrationConfig, CaseStudyFile, ForecastSettings, ScenarioFile,
};
use ppa_core::synth::{generate, SynthConfig};
use ppa_core::valuation::{break_even_price, capture_price, indifference_price, ppa_value, PpaContract};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::{
    BacktestArgs, CalibrateArgs, CaseStudyArgs, Command, ForecastArgs, Gaps, SensitivityArgs, SynthArgs, SynthSystem,
    TuneArgs, ValueArgs, Weights,
};

/// Runs a command; the returned code is the process exit status.
pub fn run(command: Command) -> Result<u8> {
    match command {
        Command::Calibrate(a) => calibrate(a),
        Command::Backtest(a) => backtest(a),
        Command::Forecast(a) => forecast(a),
        Command::Value(a) => value(a),
        Command::Sensitivity(a) => sensitivity(a),
        Command::Tune(a) => tune(a),
        Command::Selftest(a) => return Ok(crate::selftest::run(a.seed, a.cases)),
        Command::Synth(a) => synth(a),
        Command::CaseStudy(a) => case_study(a),
    }?;
    Ok(0)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CoreError::Data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn read_model(path: &Path) -> Result<CalibratedModel> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::Data(format!("{}: {e}", path.display())))?;
    CalibratedModel::from_json(&text)
}

fn fill_policy(f: Gaps) -> FillPolicy {
    match f {
        Gaps::Fail => FillPolicy::Fail,
        Gaps::ForwardFill => FillPolicy::ForwardFill,
        Gaps::Linear => FillPolicy::Linear,
    }
}

fn config_or_default(path: Option<&Path>) -> Result<CalibrationConfig> {
    path.map_or_else(|| Ok(CalibrationConfig::default()), read_json)
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let ds = load_dataset(&a.data, fill_policy(a.fill))?;
    let cfg = config_or_default(a.config.as_deref())?;
    let mut model = calibrate_dataset(&ds, &cfg, &ppa_qp::SolverSettings::default())?;
    if a.no_fitted {
        model.fitted = None;
    }
    log::info!(
        "calibrated {} technologies, objective {:?}",
        model.technologies.len(),
        model.objective
    );
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, model.to_json()? + "\n")?;
    Ok(())
}

fn backtest(a: BacktestArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let ds = load_dataset(&a.data, fill_policy(a.fill))?;
    let settings = ForecastSettings {
        window_hours: a.window,
        ..Default::default()
    };
    let (report, predicted) = backtest_dataset(&model, &ds, &settings)?;
    let key = match a.weights {
        Weights::Base => "base",
        Weights::Solar => "solar",
        Weights::Wind => "wind",
    };
    let nmae = *report
        .nmae
        .get(key)
        .ok_or_else(|| CoreError::Data(format!("dataset has no {key} profile")))?;
    write_json(
        &a.out,
        &json!({
            "weights": key,
            "nmae": nmae,
            "nmae_by_profile": report.nmae,
            "mean_price": report.mean_price,
            "hours": predicted.len(),
        }),
    )
}

fn forecast(a: ForecastArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let scenario: ScenarioFile = read_json(&a.scenario)?;
    let sol = forecast_scenario(&model, &scenario)?;
    let run = RunArtifacts {
        timestamps: scenario.market.timestamps.clone(),
        prices: sol.price.clone(),
        technology_ids: scenario.market.technologies.iter().map(|t| t.id.clone()).collect(),
        dispatch: Some(sol),
        valuation: None,
        sensitivity: Vec::new(),
    };
    for f in export_results(&run, &a.out)? {
        log::info!("wrote {}", f.display());
    }
    Ok(())
}

fn read_prices(path: &Path) -> Result<Vec<f64>> {
    let data = load_hourly_csv(path, &["price"])?;
    if !data.gaps.is_empty() {
        return Err(CoreError::Data(format!(
            "{}: {} missing hours",
            path.display(),
            data.gaps.len()
        )));
    }
    Ok(data.require("price")?.to_vec())
}

fn value(a: ValueArgs) -> Result<()> {
    let prices = read_prices(&a.prices)?;
    let contract: PpaContract = read_json(&a.ppa)?;
    contract.validate()?;
    if contract.horizon() != prices.len() {
        return Err(CoreError::Dimension(format!(
            "PPA covers {} hours, price file {}",
            contract.horizon(),
            prices.len()
        )));
    }
    let q = &contract.volume;
    let premium = if contract.green_premium.is_empty() {
        vec![0.0; q.len()]
    } else {
        contract.green_premium.clone()
    };
    let r = contract.annual_discount_rate;
    write_json(
        &a.out,
        &json!({
            "hours": prices.len(),
            "volume": q.iter().sum::<f64>(),
            "capture_price": capture_price(q, &prices)?,
            "indifference_price": indifference_price(q, &prices, &premium, r)?,
            "break_even_price": break_even_price(q, &prices, r)?,
            "contract_value": ppa_value(&contract, &prices)?,
        }),
    )
}

fn sensitivity(a: SensitivityArgs) -> Result<()> {
    let factor = a.factor.parse()?;
    let model = read_model(&a.model)?;
    let scenario: ScenarioFile = read_json(&a.base)?;
    let contract: PpaContract = read_json(&a.ppa)?;
    contract.validate()?;
    let grid = run_sensitivity(&model, &scenario, factor, &contract.volume)?;
    let mut out = String::from("factor,multiplier,capture_price\n");
    for (m, cp) in grid.multipliers.iter().zip(&grid.capture_prices) {
        let cp = cp.map(format_value).unwrap_or_default();
        out += &format!("{factor},{},{cp}\n", format_value(*m));
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, out)?;
    if grid.capture_prices.iter().any(Option::is_none) {
        log::warn!("some sweep points failed; their capture price is left empty");
    }
    Ok(())
}

fn tune(a: TuneArgs) -> Result<()> {
    let ds = load_dataset(&a.data, fill_policy(a.fill))?;
    let cfg = config_or_default(a.config.as_deref())?;
    let settings = ForecastSettings {
        window_hours: a.window,
        ..Default::default()
    };
    let report = tune_lambdas(&ds, &cfg, a.train_share, a.budget, a.seed, &settings)?;
    let lambdas: Vec<[f64; 3]> = report
        .best_log_lambdas
        .iter()
        .map(|l| l.map(|v| 10f64.powf(v)))
        .collect();
    let mut tuned = cfg;
    tuned.lambdas = lambdas;
    write_json(
        &a.out,
        &json!({
            "seed": a.seed,
            "budget": a.budget,
            "report": report,
            "config": tuned,
        }),
    )
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match a.system {
        SynthSystem::SpainLike => SynthConfig::spain_like(a.seed, a.days),
        SynthSystem::ThreeTech => SynthConfig::three_tech(a.seed, a.days),
    };
    cfg.window_hours = a.window;
    let ds = synth_to_dataset(&generate(&cfg)?);
    write_dataset(&ds, &a.out)?;
    let mut scenario = ScenarioFile::from_dataset(&ds)?;
    scenario.forecast.window_hours = a.window;
    write_json(&a.out.join("scenario.json"), &scenario)?;
    let contract = PpaContract {
        fixed_price: a.ppa_price,
        volume: scenario.renewables["solar"].clone(),
        annual_discount_rate: 0.11,
        green_premium: Vec::new(),
    };
    write_json(&a.out.join("ppa.json"), &contract)?;
    fs::write(
        a.out.join("prices.csv"),
        std::iter::once("timestamp,price\n".to_string())
            .chain(
                ds.hourly
                    .timestamps
                    .iter()
                    .zip(ds.hourly.require("price")?)
                    .map(|(t, p)| format!("{},{}\n", t.to_rfc3339(), format_value(*p))),
            )
            .collect::<String>(),
    )?;
    Ok(())
}

fn case_study(a: CaseStudyArgs) -> Result<()> {
    let mut file = match &a.config {
        Some(p) => CaseStudyFile::load(p).map_err(|e| CoreError::Data(format!("{}: {e}", p.display())))?,
        None => CaseStudyFile::spain_like(),
    };
    if let Some(seed) = a.seed {
        file.case_study.seed = seed;
    }
    let report = run_case_study(&file.case_study, &file.scenarios)?;
    for s in &report.scenarios {
        log::info!("{}: capture price {:.2}", s.name, s.capture_price);
    }
    write_json(
        &a.out,
        &json!({
            "seed": file.case_study.seed,
            "scenarios": report.scenarios,
        }),
    )
}
