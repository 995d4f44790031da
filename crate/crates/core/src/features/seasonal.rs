//! Hour-of-day seasonal regressions
//!
//! ```text
//!     Y_dh = b0_h + b1_h d + sum_j b2_hj [weekday j] + b3_h [holiday]
//!            + sum_i b4_hi sin(2 pi i d / 365) + b5_hi cos(2 pi i d / 365)
//! ```
//!
//! one model per hour, fitted by cross-validated LASSO. `d` counts days from
//! the first training day; the trigonometric phase uses `d mod 365` so that
//! models without trend and calendar terms repeat exactly every 365 days.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{DateTime, Datelike, NaiveDate, Timelike, Utc};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Calendar, QuantileTransform};
use crate::error::{CoreError, Result};
use crate::learn::{cross_validate, fit_lasso_cd, lambda_max, log_grid};

pub const MAX_HARMONICS: usize = 180;
const CYCLE_DAYS: i64 = 365;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalOptions {
    pub harmonics: usize,
    pub with_calendar: bool,
    pub with_trend: bool,
    /// Fit on the empirical-CDF scale of the target and map predictions back.
    pub quantile_target: bool,
    pub cv_folds: usize,
    /// Number of positive penalties in the CV grid (zero is always added).
    pub grid_size: usize,
}

impl Default for SeasonalOptions {
    fn default() -> Self {
        Self {
            harmonics: MAX_HARMONICS,
            with_calendar: false,
            with_trend: true,
            quantile_target: false,
            cv_folds: 5,
            grid_size: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourModel {
    pub intercept: f64,
    /// Per day.
    pub trend: f64,
    /// Tuesday..Sunday relative to Monday.
    pub weekday: Vec<f64>,
    pub holiday: f64,
    pub sin: Vec<f64>,
    pub cos: Vec<f64>,
    pub lambda: f64,
    /// On the original scale.
    pub metrics: FitMetrics,
    /// On the fitting scale (equal to `metrics` without a target transform).
    pub metrics_transformed: FitMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalModel {
    pub harmonics: usize,
    pub includes_calendar: bool,
    pub origin: NaiveDate,
    pub hours: Vec<HourModel>,
    pub target_transform: Option<QuantileTransform>,
}

fn regressors(d: i64, date: NaiveDate, harmonics: usize, opts: (bool, bool), cal: &Calendar) -> Vec<f64> {
    let (with_trend, with_calendar) = opts;
    let mut row = Vec::with_capacity(2 + 7 + 2 * harmonics);
    if with_trend {
        // Scaled to years to keep columns comparable under the L1 penalty.
        row.push(d as f64 / CYCLE_DAYS as f64);
    }
    if with_calendar {
        let dow = date.weekday().num_days_from_monday() as usize;
        row.extend((1..7).map(|j| if j == dow { 1.0 } else { 0.0 }));
        row.push(if cal.is_holiday(date) { 1.0 } else { 0.0 });
    }
    let phase = d.rem_euclid(CYCLE_DAYS) as f64;
    for i in 1..=harmonics {
        let a = 2.0 * PI * i as f64 * phase / CYCLE_DAYS as f64;
        row.push(a.sin());
        row.push(a.cos());
    }
    row
}

fn metrics(pred: &[f64], actual: &[f64]) -> FitMetrics {
    let n = actual.len().max(1) as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let (mut sse, mut sae, mut sst) = (0.0, 0.0, 0.0);
    for (p, a) in pred.iter().zip(actual) {
        sse += (p - a).powi(2);
        sae += (p - a).abs();
        sst += (a - mean).powi(2);
    }
    FitMetrics {
        rmse: (sse / n).sqrt(),
        mae: sae / n,
        r2: if sst > 0.0 { 1.0 - sse / sst } else { 1.0 },
    }
}

/// Fits 24 hourly models to an hourly series. Refuses series spanning less
/// than 365 days.
pub fn fit_seasonal(
    timestamps: &[DateTime<Utc>],
    values: &[f64],
    options: &SeasonalOptions,
    calendar: &Calendar,
) -> Result<SeasonalModel> {
    if timestamps.len() != values.len() {
        return Err(CoreError::Dimension("timestamps and values differ in length".into()));
    }
    if options.harmonics == 0 || options.harmonics > MAX_HARMONICS {
        return Err(CoreError::InvalidInput(format!(
            "harmonics must be in 1..={MAX_HARMONICS}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Data("seasonal series contains non-finite values".into()));
    }
    let (first, last) = match (timestamps.iter().min(), timestamps.iter().max()) {
        (Some(a), Some(b)) => (a.date_naive(), b.date_naive()),
        _ => return Err(CoreError::Data("empty series".into())),
    };
    let span = (last - first).num_days() + 1;
    if span < CYCLE_DAYS {
        return Err(CoreError::Data(format!(
            "series covers {span} days; at least {CYCLE_DAYS} are required"
        )));
    }

    let target_transform = if options.quantile_target {
        Some(QuantileTransform::fit(values)?)
    } else {
        None
    };
    let mut by_hour: BTreeMap<u32, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    for (ts, v) in timestamps.iter().zip(values) {
        by_hour.entry(ts.hour()).or_default().push((ts.date_naive(), *v));
    }
    if by_hour.len() != 24 {
        return Err(CoreError::Data("series does not cover all 24 hours".into()));
    }
    let flags = (options.with_trend, options.with_calendar);

    let hours = (0..24u32)
        .into_par_iter()
        .map(|h| {
            let obs = &by_hour[&h];
            let rows: Vec<Vec<f64>> = obs
                .iter()
                .map(|(date, _)| regressors((*date - first).num_days(), *date, options.harmonics, flags, calendar))
                .collect();
            let raw_y: Vec<f64> = obs.iter().map(|(_, v)| *v).collect();
            let y: Vec<f64> = match &target_transform {
                Some(q) => raw_y.iter().map(|v| q.forward(*v)).collect(),
                None => raw_y.clone(),
            };
            let p = rows[0].len();
            let x = DMatrix::from_fn(rows.len(), p, |r, c| rows[r][c]);
            let w = vec![1.0; y.len()];
            let hi = lambda_max(&x, &y, &w)?;
            let grid = log_grid(hi, 1e-4, options.grid_size);
            let cv = cross_validate(fit_lasso_cd, &x, &y, &w, options.cv_folds, &grid)?;
            let m = fit_lasso_cd(&x, &y, &w, cv.best_lambda)?;

            let mut k = 0;
            let mut take = |count: usize| {
                let s = m.coefficients[k..k + count].to_vec();
                k += count;
                s
            };
            let trend = if options.with_trend {
                take(1)[0] / CYCLE_DAYS as f64
            } else {
                0.0
            };
            let (weekday, holiday) = if options.with_calendar {
                (take(6), take(1)[0])
            } else {
                (vec![0.0; 6], 0.0)
            };
            let mut sin = Vec::with_capacity(options.harmonics);
            let mut cos = Vec::with_capacity(options.harmonics);
            for _ in 0..options.harmonics {
                let pair = take(2);
                sin.push(pair[0]);
                cos.push(pair[1]);
            }
            let fitted = m.predict(&x);
            let metrics_transformed = metrics(&fitted, &y);
            let metrics = match &target_transform {
                Some(q) => metrics(&fitted.iter().map(|u| q.inverse(*u)).collect::<Vec<_>>(), &raw_y),
                None => metrics_transformed,
            };
            Ok(HourModel {
                intercept: m.intercept,
                trend,
                weekday,
                holiday,
                sin,
                cos,
                lambda: cv.best_lambda,
                metrics,
                metrics_transformed,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SeasonalModel {
        harmonics: options.harmonics,
        includes_calendar: options.with_calendar,
        origin: first,
        hours,
        target_transform,
    })
}

impl SeasonalModel {
    pub fn predict_at(&self, ts: DateTime<Utc>, calendar: &Calendar) -> f64 {
        let date = ts.date_naive();
        let d = (date - self.origin).num_days();
        let m = &self.hours[ts.hour() as usize];
        let mut y = m.intercept + m.trend * d as f64;
        if self.includes_calendar {
            let dow = date.weekday().num_days_from_monday() as usize;
            if dow > 0 {
                y += m.weekday[dow - 1];
            }
            if calendar.is_holiday(date) {
                y += m.holiday;
            }
        }
        let phase = d.rem_euclid(CYCLE_DAYS) as f64;
        for i in 0..self.harmonics {
            let a = 2.0 * PI * (i + 1) as f64 * phase / CYCLE_DAYS as f64;
            y += m.sin[i] * a.sin() + m.cos[i] * a.cos();
        }
        match &self.target_transform {
            Some(q) => q.inverse(y),
            None => y,
        }
    }
}

pub fn predict_seasonal(model: &SeasonalModel, timestamps: &[DateTime<Utc>], calendar: &Calendar) -> Vec<f64> {
    timestamps.iter().map(|ts| model.predict_at(*ts, calendar)).collect()
}
