//! PPA economics: capture, indifference and break-even prices, NMAE
//! backtests and one-factor sensitivity sweeps.
//!
//! Discounting uses the compounding factor `g_t = (1 + r)^(t / 8760)` with
//! `t` the hour since contract start. Present values divide by `g_t`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const HOURS_PER_YEAR: f64 = 8760.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpaContract {
    /// EUR/MWh
    pub fixed_price: f64,
    /// MWh per hour
    pub volume: Vec<f64>,
    pub annual_discount_rate: f64,
    /// EUR/MWh per hour; empty means zero.
    #[serde(default)]
    pub green_premium: Vec<f64>,
}

impl PpaContract {
    pub fn horizon(&self) -> usize {
        self.volume.len()
    }

    pub fn validate(&self) -> Result<()> {
        validate_volumes(&self.volume)?;
        if !(self.annual_discount_rate >= 0.0) {
            return Err(CoreError::InvalidInput("discount rate must be non-negative".into()));
        }
        if !self.green_premium.is_empty() && self.green_premium.len() != self.volume.len() {
            return Err(CoreError::Dimension("green premium length differs from volume".into()));
        }
        Ok(())
    }

    fn premium(&self) -> Vec<f64> {
        if self.green_premium.is_empty() {
            vec![0.0; self.volume.len()]
        } else {
            self.green_premium.clone()
        }
    }
}

fn validate_volumes(q: &[f64]) -> Result<()> {
    if q.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(CoreError::InvalidInput(
            "volumes must be finite and non-negative".into(),
        ));
    }
    if q.iter().sum::<f64>() <= 0.0 {
        return Err(CoreError::InvalidInput("total volume is zero".into()));
    }
    Ok(())
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(CoreError::Dimension(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

/// `(1 + r)^(t / 8760)`.
pub fn growth_factor(hour: usize, annual_rate: f64) -> f64 {
    (1.0 + annual_rate).powf(hour as f64 / HOURS_PER_YEAR)
}

pub fn capture_price(q: &[f64], p: &[f64]) -> Result<f64> {
    same_len(q.len(), p.len(), "volumes and prices")?;
    validate_volumes(q)?;
    let num: f64 = q.iter().zip(p).map(|(q, p)| q * p).sum();
    Ok(num / q.iter().sum::<f64>())
}

/// `sum rho_t q_t (p^E_t - p) + sum rho_t q_t p^G_t` for explicit discount
/// factors `rho`.
pub fn ppa_value_with_factors(
    fixed_price: f64,
    q: &[f64],
    market: &[f64],
    premium: &[f64],
    rho: &[f64],
) -> Result<f64> {
    same_len(q.len(), market.len(), "volumes and prices")?;
    same_len(q.len(), premium.len(), "volumes and premium")?;
    same_len(q.len(), rho.len(), "volumes and discount factors")?;
    Ok((0..q.len())
        .map(|t| rho[t] * q[t] * (market[t] - fixed_price + premium[t]))
        .sum())
}

pub fn ppa_value(contract: &PpaContract, market_prices: &[f64]) -> Result<f64> {
    contract.validate()?;
    let rho: Vec<f64> = (0..contract.horizon())
        .map(|t| 1.0 / growth_factor(t, contract.annual_discount_rate))
        .collect();
    ppa_value_with_factors(
        contract.fixed_price,
        &contract.volume,
        market_prices,
        &contract.premium(),
        &rho,
    )
}

/// Fixed price at which [`ppa_value`] vanishes.
pub fn indifference_price(q: &[f64], market: &[f64], premium: &[f64], annual_rate: f64) -> Result<f64> {
    same_len(q.len(), market.len(), "volumes and prices")?;
    same_len(q.len(), premium.len(), "volumes and premium")?;
    validate_volumes(q)?;
    let (mut num, mut den) = (0.0, 0.0);
    for t in 0..q.len() {
        let w = q[t] / growth_factor(t, annual_rate);
        num += w * (market[t] + premium[t]);
        den += w;
    }
    if den <= 0.0 {
        return Err(CoreError::InvalidInput("discounted volume is zero".into()));
    }
    Ok(num / den)
}

/// Price `P` with `sum Q_t (P - p_t) / g_t = 0`.
pub fn break_even_price(q: &[f64], predicted: &[f64], annual_rate: f64) -> Result<f64> {
    indifference_price(q, predicted, &vec![0.0; q.len()], annual_rate)
}

/// Net present value `sum Q_t (P - p_t) / g_t` of selling at `price`.
pub fn npv(q: &[f64], predicted: &[f64], price: f64, annual_rate: f64) -> Result<f64> {
    same_len(q.len(), predicted.len(), "volumes and prices")?;
    Ok((0..q.len())
        .map(|t| q[t] * (price - predicted[t]) / growth_factor(t, annual_rate))
        .sum())
}

/// `sum w |p_hat - p| / (mean(p) sum w)`.
pub fn nmae(predicted: &[f64], actual: &[f64], weights: &[f64]) -> Result<f64> {
    same_len(predicted.len(), actual.len(), "predicted and actual")?;
    same_len(predicted.len(), weights.len(), "prices and weights")?;
    let wsum: f64 = weights.iter().sum();
    if weights.iter().any(|w| *w < 0.0) || wsum <= 0.0 {
        return Err(CoreError::InvalidInput(
            "weights must be non-negative with positive sum".into(),
        ));
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    if mean == 0.0 || !mean.is_finite() {
        return Err(CoreError::InvalidInput(
            "mean actual price is zero; NMAE undefined".into(),
        ));
    }
    let err: f64 = (0..actual.len())
        .map(|t| weights[t] * (predicted[t] - actual[t]).abs())
        .sum();
    Ok(err / (mean * wsum))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    /// NMAE per weighting profile (e.g. `base`, `solar`, `wind`).
    pub nmae: BTreeMap<String, f64>,
    /// `predicted - actual` per period.
    pub errors: Vec<f64>,
    pub mean_price: f64,
}

pub fn backtest(predicted: &[f64], actual: &[f64], profiles: &[(&str, &[f64])]) -> Result<BacktestReport> {
    same_len(predicted.len(), actual.len(), "predicted and actual")?;
    let mut out = BTreeMap::new();
    for (name, w) in profiles {
        out.insert(name.to_string(), nmae(predicted, actual, w)?);
    }
    Ok(BacktestReport {
        nmae: out,
        errors: predicted.iter().zip(actual).map(|(a, b)| a - b).collect(),
        mean_price: actual.iter().sum::<f64>() / actual.len().max(1) as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityFactor {
    GasPrice,
    CoalPrice,
    CarbonPrice,
    Demand,
    WindOutput,
    SolarOutput,
}

impl SensitivityFactor {
    pub const ALL: [SensitivityFactor; 6] = [
        SensitivityFactor::GasPrice,
        SensitivityFactor::CoalPrice,
        SensitivityFactor::CarbonPrice,
        SensitivityFactor::Demand,
        SensitivityFactor::WindOutput,
        SensitivityFactor::SolarOutput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SensitivityFactor::GasPrice => "gas_price",
            SensitivityFactor::CoalPrice => "coal_price",
            SensitivityFactor::CarbonPrice => "carbon_price",
            SensitivityFactor::Demand => "demand",
            SensitivityFactor::WindOutput => "wind_output",
            SensitivityFactor::SolarOutput => "solar_output",
        }
    }
}

impl fmt::Display for SensitivityFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SensitivityFactor {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| CoreError::InvalidInput(format!("unknown sensitivity factor {s:?}")))
    }
}

/// `0.70, 0.75, ..., 1.30`.
pub fn sensitivity_multipliers() -> Vec<f64> {
    (0..13).map(|k| (70 + 5 * k) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityGrid {
    pub factor: SensitivityFactor,
    pub multipliers: Vec<f64>,
    /// `None` where the run failed (e.g. infeasible dispatch).
    pub capture_prices: Vec<Option<f64>>,
    pub base_capture_price: f64,
}

/// Evaluates `run(multiplier)` on the 13-point grid. A failing run leaves a
/// gap; a failing base run is an error.
pub fn sensitivity_sweep<F>(factor: SensitivityFactor, run: F) -> Result<SensitivityGrid>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let base_capture_price = run(1.0)?;
    let multipliers = sensitivity_multipliers();
    let capture_prices = multipliers
        .par_iter()
        .map(|&m| match run(m) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("sensitivity run {factor} x{m} failed: {e}");
                None
            }
        })
        .collect();
    Ok(SensitivityGrid {
        factor,
        multipliers,
        capture_prices,
        base_capture_price,
    })
}
