//! Feature matrices for the cost regressions and seasonal models for
//! exogenous hourly series.
//!
//! Column order of a [`FeatureMatrix`]: base numeric series in input order,
//! pairwise products `a*b` for `a <= b` (squares included), hour dummies
//! `hour_1..hour_23`, weekday dummies `dow_tue..dow_sun`, `holiday`,
//! `intercept`. Numeric columns are min-max scaled with the training range;
//! dummies and the intercept are not.

pub mod seasonal;

use std::collections::BTreeSet;

use chrono::{DateTime, Datelike, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

pub use seasonal::{fit_seasonal, predict_seasonal, FitMetrics, HourModel, SeasonalModel, SeasonalOptions};

pub const INTERCEPT: &str = "intercept";
pub const HOLIDAY: &str = "holiday";
const WEEKDAYS: [&str; 6] = ["dow_tue", "dow_wed", "dow_thu", "dow_fri", "dow_sat", "dow_sun"];

/// Set of holiday dates (UTC calendar days).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    pub holidays: BTreeSet<NaiveDate>,
}

impl Calendar {
    pub fn is_holiday(&self, date: NaiveDate) -> bool {
        self.holidays.contains(&date)
    }
}

/// Named hourly series on a shared timestamp grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub timestamps: Vec<DateTime<Utc>>,
    pub series: Vec<(String, Vec<f64>)>,
}

impl RawSeries {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.series.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

/// Column names plus the training-range scaler. Stored inside calibrated
/// models so that test data is transformed identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub base: Vec<String>,
    pub column_names: Vec<String>,
    /// Per column: whether it is min-max scaled.
    pub scaled: Vec<bool>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub schema_hash: String,
}

impl FeatureSchema {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    fn range(&self, c: usize) -> f64 {
        let r = self.max[c] - self.min[c];
        if r > 0.0 {
            r
        } else {
            1.0
        }
    }

    pub fn scale(&self, c: usize, v: f64) -> f64 {
        if self.scaled[c] {
            (v - self.min[c]) / self.range(c)
        } else {
            v
        }
    }

    pub fn unscale(&self, c: usize, v: f64) -> f64 {
        if self.scaled[c] {
            v * self.range(c) + self.min[c]
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub schema: FeatureSchema,
    /// Row per period.
    pub values: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn column_names(&self) -> &[String] {
        &self.schema.column_names
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.schema.column(name)?;
        Some(self.values.iter().map(|r| r[c]).collect())
    }

    /// Unscaled values (the inverse of the min-max transform).
    pub fn unscaled(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .map(|r| r.iter().enumerate().map(|(c, v)| self.schema.unscale(c, *v)).collect())
            .collect()
    }
}

pub fn schema_hash(columns: &[String]) -> String {
    let mut h = Sha256::new();
    for c in columns {
        h.update(c.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn column_layout(base: &[String]) -> (Vec<String>, Vec<bool>) {
    let mut names: Vec<String> = base.to_vec();
    for i in 0..base.len() {
        for j in i..base.len() {
            names.push(format!("{}*{}", base[i], base[j]));
        }
    }
    let numeric = names.len();
    names.extend((1..24).map(|h| format!("hour_{h}")));
    names.extend(WEEKDAYS.iter().map(|s| s.to_string()));
    names.push(HOLIDAY.into());
    names.push(INTERCEPT.into());
    let scaled = (0..names.len()).map(|c| c < numeric).collect();
    (names, scaled)
}

fn raw_rows(raw: &RawSeries, base: &[String], calendar: &Calendar) -> Result<Vec<Vec<f64>>> {
    let t = raw.timestamps.len();
    let mut cols = Vec::with_capacity(base.len());
    for name in base {
        let s = raw
            .get(name)
            .ok_or_else(|| CoreError::Data(format!("missing series {name:?}")))?;
        if s.len() != t {
            return Err(CoreError::Dimension(format!(
                "series {name:?} has {} values for {t} timestamps",
                s.len()
            )));
        }
        let bad: Vec<usize> = (0..t).filter(|&k| !s[k].is_finite()).take(10).collect();
        if !bad.is_empty() {
            return Err(CoreError::Data(format!(
                "series {name:?} has non-finite values at rows {bad:?}"
            )));
        }
        cols.push(s);
    }
    let n = base.len();
    Ok((0..t)
        .map(|k| {
            let mut row: Vec<f64> = cols.iter().map(|c| c[k]).collect();
            for i in 0..n {
                for j in i..n {
                    row.push(cols[i][k] * cols[j][k]);
                }
            }
            let ts = raw.timestamps[k];
            let hour = ts.hour() as usize;
            row.extend((1..24).map(|h| if h == hour { 1.0 } else { 0.0 }));
            let dow = ts.weekday().num_days_from_monday() as usize;
            row.extend((1..7).map(|d| if d == dow { 1.0 } else { 0.0 }));
            row.push(if calendar.is_holiday(ts.date_naive()) { 1.0 } else { 0.0 });
            row.push(1.0);
            row
        })
        .collect())
}

/// Builds features from every series in `raw` and fits the scaler on them.
pub fn build_features(raw: &RawSeries, calendar: &Calendar) -> Result<FeatureMatrix> {
    let base: Vec<String> = raw.series.iter().map(|(n, _)| n.clone()).collect();
    build_features_from(raw, &base, calendar)
}

/// Builds features from the named `base` series and fits the scaler.
pub fn build_features_from(raw: &RawSeries, base: &[String], calendar: &Calendar) -> Result<FeatureMatrix> {
    let rows = raw_rows(raw, base, calendar)?;
    let (names, scaled) = column_layout(base);
    let p = names.len();
    let mut min = vec![f64::INFINITY; p];
    let mut max = vec![f64::NEG_INFINITY; p];
    for row in &rows {
        for c in 0..p {
            min[c] = min[c].min(row[c]);
            max[c] = max[c].max(row[c]);
        }
    }
    for c in 0..p {
        if !scaled[c] || rows.is_empty() {
            min[c] = 0.0;
            max[c] = 1.0;
        }
    }
    let schema = FeatureSchema {
        base: base.to_vec(),
        schema_hash: schema_hash(&names),
        column_names: names,
        scaled,
        min,
        max,
    };
    Ok(apply(schema, rows))
}

/// Builds features for new data with a stored schema. Values outside the
/// training range are not clipped.
pub fn transform_features(raw: &RawSeries, schema: &FeatureSchema, calendar: &Calendar) -> Result<FeatureMatrix> {
    let (names, _) = column_layout(&schema.base);
    let hash = schema_hash(&names);
    if hash != schema.schema_hash {
        return Err(CoreError::SchemaMismatch {
            expected: schema.schema_hash.clone(),
            found: hash,
        });
    }
    let rows = raw_rows(raw, &schema.base, calendar)?;
    Ok(apply(schema.clone(), rows))
}

fn apply(schema: FeatureSchema, mut rows: Vec<Vec<f64>>) -> FeatureMatrix {
    for row in &mut rows {
        for (c, v) in row.iter_mut().enumerate() {
            *v = schema.scale(c, *v);
        }
    }
    FeatureMatrix { schema, values: rows }
}

/// Empirical CDF transform to `[0, 1]` with linear interpolation between
/// stored breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTransform {
    /// Sorted, deduplicated sample values.
    pub breakpoints: Vec<f64>,
}

impl QuantileTransform {
    pub fn fit(sample: &[f64]) -> Result<Self> {
        let mut b: Vec<f64> = sample.iter().copied().filter(|v| v.is_finite()).collect();
        if b.is_empty() {
            return Err(CoreError::InvalidInput("quantile transform needs finite data".into()));
        }
        b.sort_by(f64::total_cmp);
        b.dedup();
        Ok(Self { breakpoints: b })
    }

    pub fn forward(&self, v: f64) -> f64 {
        let b = &self.breakpoints;
        if b.len() == 1 {
            return 0.5;
        }
        if v <= b[0] {
            return 0.0;
        }
        if v >= b[b.len() - 1] {
            return 1.0;
        }
        let k = b.partition_point(|x| *x <= v) - 1;
        let frac = (v - b[k]) / (b[k + 1] - b[k]);
        (k as f64 + frac) / (b.len() - 1) as f64
    }

    pub fn inverse(&self, u: f64) -> f64 {
        let b = &self.breakpoints;
        if b.len() == 1 {
            return b[0];
        }
        let pos = u.clamp(0.0, 1.0) * (b.len() - 1) as f64;
        let k = (pos.floor() as usize).min(b.len() - 2);
        b[k] + (pos - k as f64) * (b[k + 1] - b[k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn raw(n: usize, names: &[&str]) -> RawSeries {
        let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        RawSeries {
            timestamps: (0..n).map(|h| t0 + chrono::Duration::hours(h as i64)).collect(),
            series: names
                .iter()
                .enumerate()
                .map(|(k, s)| (s.to_string(), (0..n).map(|h| (h + k) as f64).collect()))
                .collect(),
        }
    }

    #[test]
    fn three_features_give_six_products() {
        let f = build_features(&raw(5, &["a", "b", "c"]), &Calendar::default()).unwrap();
        assert_eq!(f.schema.scaled.iter().filter(|s| **s).count(), 9);
        assert_eq!(f.column_names().len(), 9 + 23 + 6 + 2);
        assert_eq!(f.column_names()[3], "a*a");
        assert_eq!(f.column_names().last().unwrap(), INTERCEPT);
    }

    #[test]
    fn min_max_examples() {
        let mut r = raw(3, &["a"]);
        r.series[0].1 = vec![1.0, 3.0, 2.0];
        let f = build_features(&r, &Calendar::default()).unwrap();
        assert_eq!(f.values[2][0], 0.5);
        r.series[0].1 = vec![4.0, 1.0, 1.0];
        let g = transform_features(&r, &f.schema, &Calendar::default()).unwrap();
        assert_eq!(g.values[0][0], 1.5);
    }

    #[test]
    fn nan_is_reported() {
        let mut r = raw(3, &["a"]);
        r.series[0].1[1] = f64::NAN;
        let e = build_features(&r, &Calendar::default()).unwrap_err();
        assert!(e.to_string().contains("[1]"));
    }

    #[test]
    fn quantile_transform_interpolates() {
        let q = QuantileTransform::fit(&[0.0, 10.0, 20.0]).unwrap();
        assert_eq!(q.forward(5.0), 0.25);
        assert_eq!(q.inverse(0.25), 5.0);
        assert_eq!(q.forward(-1.0), 0.0);
    }
}
