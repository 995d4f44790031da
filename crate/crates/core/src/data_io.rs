//! Hourly CSV ingestion, residual demand and result export.
//!
//! Input files have a header row whose first column is `timestamp`
//! (RFC 3339, UTC) followed by numeric columns.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::market::DispatchSolution;
use crate::valuation::SensitivityGrid;

pub const TIMESTAMP: &str = "timestamp";

#[derive(Debug, Clone, PartialEq)]
pub struct HourlyData {
    pub timestamps: Vec<DateTime<Utc>>,
    pub columns: Vec<(String, Vec<f64>)>,
    /// Hours missing between the first and last timestamp.
    pub gaps: Vec<DateTime<Utc>>,
}

impl HourlyData {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[f64]> {
        self.get(name)
            .ok_or_else(|| CoreError::Data(format!("column {name:?} missing")))
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    #[default]
    Fail,
    ForwardFill,
    Linear,
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| CoreError::Data(format!("bad timestamp {s:?}: {e}")))
}

/// Reads an hourly CSV. `required` lists columns that must be present.
/// Duplicate or decreasing timestamps are errors; missing hours are
/// reported in `gaps`.
pub fn load_hourly_csv(path: &Path, required: &[&str]) -> Result<HourlyData> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.first().map(String::as_str) != Some(TIMESTAMP) {
        return Err(CoreError::Data(format!(
            "{}: first column must be {TIMESTAMP:?}",
            path.display()
        )));
    }
    for r in required {
        if !headers.iter().any(|h| h == r) {
            return Err(CoreError::Data(format!("{}: column {r:?} missing", path.display())));
        }
    }
    let mut timestamps: Vec<DateTime<Utc>> = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); headers.len() - 1];
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row = line + 2;
        if record.len() != headers.len() {
            return Err(CoreError::Data(format!(
                "{}:{row}: expected {} fields",
                path.display(),
                headers.len()
            )));
        }
        let ts = parse_timestamp(&record[0]).map_err(|e| CoreError::Data(format!("{}:{row}: {e}", path.display())))?;
        if let Some(prev) = timestamps.last() {
            if ts == *prev {
                return Err(CoreError::Data(format!(
                    "{}:{row}: duplicate timestamp {ts}",
                    path.display()
                )));
            }
            if ts < *prev {
                return Err(CoreError::Data(format!(
                    "{}:{row}: timestamps not increasing at {ts}",
                    path.display()
                )));
            }
        }
        timestamps.push(ts);
        for (c, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CoreError::Data(format!(
                    "{}:{row}: column {:?} value {field:?} is not a number",
                    path.display(),
                    headers[c + 1]
                ))
            })?;
            values[c].push(v);
        }
    }
    let mut gaps = Vec::new();
    for w in timestamps.windows(2) {
        let mut t = w[0] + Duration::hours(1);
        while t < w[1] {
            gaps.push(t);
            t += Duration::hours(1);
        }
    }
    if !gaps.is_empty() {
        log::warn!("{}: {} missing hours, first at {}", path.display(), gaps.len(), gaps[0]);
    }
    Ok(HourlyData {
        timestamps,
        columns: headers.into_iter().skip(1).zip(values).collect(),
        gaps,
    })
}

/// Completes the hourly grid according to `policy`.
pub fn fill_gaps(data: &HourlyData, policy: FillPolicy) -> Result<HourlyData> {
    if data.gaps.is_empty() {
        return Ok(data.clone());
    }
    if policy == FillPolicy::Fail {
        let shown: Vec<String> = data.gaps.iter().take(5).map(|t| t.to_rfc3339()).collect();
        return Err(CoreError::Data(format!(
            "{} missing hours (first: {})",
            data.gaps.len(),
            shown.join(", ")
        )));
    }
    let start = data.timestamps[0];
    let hours = (*data.timestamps.last().unwrap() - start).num_hours() as usize + 1;
    let timestamps: Vec<DateTime<Utc>> = (0..hours).map(|h| start + Duration::hours(h as i64)).collect();
    let pos: Vec<usize> = data
        .timestamps
        .iter()
        .map(|t| (*t - start).num_hours() as usize)
        .collect();
    let columns = data
        .columns
        .iter()
        .map(|(name, v)| {
            let mut out = vec![0.0; hours];
            for k in 0..pos.len() {
                out[pos[k]] = v[k];
                if k + 1 < pos.len() {
                    let (a, b) = (pos[k], pos[k + 1]);
                    for h in a + 1..b {
                        out[h] = match policy {
                            FillPolicy::ForwardFill => v[k],
                            _ => v[k] + (v[k + 1] - v[k]) * (h - a) as f64 / (b - a) as f64,
                        };
                    }
                }
            }
            (name.clone(), out)
        })
        .collect();
    Ok(HourlyData {
        timestamps,
        columns,
        gaps: Vec::new(),
    })
}

/// `load - sum(renewables) - (imports - exports)`. Negative values pass
/// through with a warning.
pub fn residual_demand(load: &[f64], renewables: &[&[f64]], imports: &[f64], exports: &[f64]) -> Result<Vec<f64>> {
    let n = load.len();
    if renewables.iter().any(|r| r.len() != n) || imports.len() != n || exports.len() != n {
        return Err(CoreError::Dimension("residual demand inputs are not aligned".into()));
    }
    let out: Vec<f64> = (0..n)
        .map(|t| load[t] - renewables.iter().map(|r| r[t]).sum::<f64>() - (imports[t] - exports[t]))
        .collect();
    let negative = out.iter().filter(|v| **v < 0.0).count();
    if negative > 0 {
        log::warn!("residual demand negative in {negative} hours");
    }
    Ok(out)
}

/// Formats with 9 significant digits, plain notation where reasonable.
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-5..15).contains(&mag) {
        return format!("{v:.8e}");
    }
    // Round through scientific notation so the digit count is exact.
    let rounded: f64 = format!("{v:.8e}").parse().expect("valid float");
    let decimals = (8 - rounded.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{rounded:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

/// Everything a run may export. Missing parts still produce files with
/// headers only.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub timestamps: Vec<DateTime<Utc>>,
    pub prices: Vec<f64>,
    pub technology_ids: Vec<String>,
    pub dispatch: Option<DispatchSolution>,
    pub valuation: Option<serde_json::Value>,
    pub sensitivity: Vec<SensitivityGrid>,
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_results(run: &RunArtifacts, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let ts = |t: usize| run.timestamps.get(t).map(|t| t.to_rfc3339()).unwrap_or_default();

    let prices = out_dir.join("prices.csv");
    write_csv(
        &prices,
        &[TIMESTAMP.into(), "price".into()],
        run.prices
            .iter()
            .enumerate()
            .map(|(t, p)| vec![ts(t), format_value(*p)]),
    )?;

    let dispatch = out_dir.join("dispatch.csv");
    let mut header: Vec<String> = vec![TIMESTAMP.into()];
    header.extend(run.technology_ids.iter().map(|id| format!("x_{id}")));
    header.extend(["storage_level", "charge", "discharge", "curtailment"].map(String::from));
    let rows: Vec<Vec<String>> = match &run.dispatch {
        Some(d) => (0..d.n_periods())
            .map(|t| {
                let mut r = vec![ts(t)];
                r.extend(d.x.iter().map(|row| format_value(row[t])));
                r.push(format_value(d.s[t]));
                r.push(format_value(d.y_plus[t]));
                r.push(format_value(d.y_minus[t]));
                r.push(format_value(d.curtailment.get(t).copied().unwrap_or(0.0)));
                r
            })
            .collect(),
        None => Vec::new(),
    };
    write_csv(&dispatch, &header, rows.into_iter())?;

    let valuation = out_dir.join("valuation.json");
    let body = match &run.valuation {
        Some(v) => serde_json::to_string_pretty(v)?,
        None => "{}".into(),
    };
    fs::write(&valuation, body + "\n")?;

    let sensitivity = out_dir.join("sensitivity.csv");
    let rows = run.sensitivity.iter().flat_map(|g| {
        g.multipliers.iter().zip(&g.capture_prices).map(move |(m, c)| {
            vec![
                g.factor.name().to_string(),
                format_value(*m),
                c.map(format_value).unwrap_or_default(),
            ]
        })
    });
    write_csv(
        &sensitivity,
        &["factor".into(), "multiplier".into(), "capture_price".into()],
        rows,
    )?;
    Ok(vec![prices, dispatch, valuation, sensitivity])
}
