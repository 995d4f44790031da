use std::fs;

use chrono::{Duration, TimeZone, Utc};
use ppa_core::data_io::*;
use ppa_core::market::{solve_dispatch, CostCurves, DispatchSettings, MarketScenario, Technology};
use ppa_core::valuation::{sensitivity_sweep, SensitivityFactor};
use proptest::prelude::*;

fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn well_formed_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        &dir,
        "a.csv",
        "timestamp,load,wind\n2023-01-01T00:00:00Z,10,1.5\n2023-01-01T01:00:00Z,11,2\n2023-01-01T02:00:00+00:00,12,-0.25\n",
    );
    let d = load_hourly_csv(&p, &["load"]).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d.require("wind").unwrap(), &[1.5, 2.0, -0.25]);
    assert!(d.gaps.is_empty());
    assert!(load_hourly_csv(&p, &["price"]).is_err());
}

#[test]
fn gaps_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        &dir,
        "g.csv",
        "timestamp,load\n2023-01-01T00:00:00Z,10\n2023-01-01T03:00:00Z,40\n",
    );
    let d = load_hourly_csv(&p, &[]).unwrap();
    let t0 = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
    assert_eq!(d.gaps, vec![t0 + Duration::hours(1), t0 + Duration::hours(2)]);
    assert!(fill_gaps(&d, FillPolicy::Fail).is_err());
    let ff = fill_gaps(&d, FillPolicy::ForwardFill).unwrap();
    assert_eq!(ff.require("load").unwrap(), &[10.0, 10.0, 10.0, 40.0]);
    let lin = fill_gaps(&d, FillPolicy::Linear).unwrap();
    assert_eq!(lin.require("load").unwrap(), &[10.0, 20.0, 30.0, 40.0]);
    assert!(lin.gaps.is_empty());
}

#[test]
fn duplicates_and_disorder_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let dup = write(
        &dir,
        "d.csv",
        "timestamp,load\n2023-01-01T00:00:00Z,1\n2023-01-01T00:00:00Z,2\n",
    );
    assert!(load_hourly_csv(&dup, &[])
        .unwrap_err()
        .to_string()
        .contains("duplicate"));
    let back = write(
        &dir,
        "b.csv",
        "timestamp,load\n2023-01-01T05:00:00Z,1\n2023-01-01T00:00:00Z,2\n",
    );
    assert!(load_hourly_csv(&back, &[]).is_err());
    let header = write(&dir, "h.csv", "time,load\n2023-01-01T00:00:00Z,1\n");
    assert!(load_hourly_csv(&header, &[]).is_err());
    let text = write(&dir, "t.csv", "timestamp,load\n2023-01-01T00:00:00Z,abc\n");
    assert!(load_hourly_csv(&text, &[]).is_err());
}

#[test]
fn residual_demand_rules() {
    assert_eq!(
        residual_demand(&[100.0], &[&[30.0]], &[10.0], &[5.0]).unwrap(),
        vec![65.0]
    );
    assert_eq!(
        residual_demand(&[100.0, 7.0], &[], &[0.0; 2], &[0.0; 2]).unwrap(),
        vec![100.0, 7.0]
    );
    assert_eq!(
        residual_demand(&[10.0], &[&[30.0]], &[0.0], &[0.0]).unwrap(),
        vec![-20.0]
    );
    assert!(residual_demand(&[10.0, 1.0], &[&[30.0]], &[0.0; 2], &[0.0; 2]).is_err());
}

fn sample_run() -> RunArtifacts {
    let t = 5;
    let sc = MarketScenario::simple(
        vec![Technology::conventional("base"), Technology::conventional("peak")],
        vec![20.0, 35.0, 50.0, 65.0, 30.0],
        vec![vec![40.0; t], vec![40.0; t]],
    );
    let costs = CostCurves::linear(&[12.5, 71.25], t);
    let sol = solve_dispatch(&sc, &costs, &DispatchSettings::default()).unwrap();
    let grid = sensitivity_sweep(SensitivityFactor::GasPrice, |m| Ok(50.0 * m)).unwrap();
    RunArtifacts {
        timestamps: sc.timestamps.clone(),
        prices: sol.price.clone(),
        technology_ids: vec!["base".into(), "peak".into()],
        dispatch: Some(sol),
        valuation: Some(serde_json::json!({"capture_price": 41.5})),
        sensitivity: vec![grid],
    }
}

#[test]
fn export_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let files_a = export_results(&sample_run(), a.path()).unwrap();
    let files_b = export_results(&sample_run(), b.path()).unwrap();
    assert_eq!(files_a.len(), 4);
    for (x, y) in files_a.iter().zip(&files_b) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
    let names: Vec<_> = files_a
        .iter()
        .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
        .collect();
    assert_eq!(
        names,
        ["prices.csv", "dispatch.csv", "valuation.json", "sensitivity.csv"]
    );
}

#[test]
fn export_round_trips_prices() {
    let dir = tempfile::tempdir().unwrap();
    let run = sample_run();
    export_results(&run, dir.path()).unwrap();
    let back = load_hourly_csv(&dir.path().join("prices.csv"), &["price"]).unwrap();
    assert_eq!(back.timestamps, run.timestamps);
    for (a, b) in back.require("price").unwrap().iter().zip(&run.prices) {
        assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
    }
    let dispatch = load_hourly_csv(&dir.path().join("dispatch.csv"), &["x_base", "x_peak", "storage_level"]).unwrap();
    assert_eq!(dispatch.len(), 5);
}

#[test]
fn empty_run_writes_headers() {
    let dir = tempfile::tempdir().unwrap();
    export_results(&RunArtifacts::default(), dir.path()).unwrap();
    assert_eq!(
        fs::read_to_string(dir.path().join("prices.csv")).unwrap(),
        "timestamp,price\n"
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("sensitivity.csv")).unwrap(),
        "factor,multiplier,capture_price\n"
    );
    assert_eq!(fs::read_to_string(dir.path().join("valuation.json")).unwrap(), "{}\n");
}

proptest! {
    #[test]
    fn csv_round_trip(values in prop::collection::vec(-1e6f64..1e6, 1..50)) {
        let dir = tempfile::tempdir().unwrap();
        let t0 = Utc.with_ymd_and_hms(2024, 3, 30, 22, 0, 0).unwrap();
        let mut body = String::from("timestamp,v\n");
        for (k, v) in values.iter().enumerate() {
            body += &format!("{},{}\n", (t0 + Duration::hours(k as i64)).to_rfc3339(), format_value(*v));
        }
        let p = write(&dir, "r.csv", &body);
        let d = load_hourly_csv(&p, &["v"]).unwrap();
        for (a, b) in d.require("v").unwrap().iter().zip(&values) {
            prop_assert!((a - b).abs() <= 5e-9 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn residual_demand_is_linear(a in prop::collection::vec(-100.0f64..100.0, 4), b in prop::collection::vec(-100.0f64..100.0, 4), k in -3.0f64..3.0) {
        let z = [0.0; 4];
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + k * y).collect();
        let lhs = residual_demand(&z, &[&sum], &z, &z).unwrap();
        let ra = residual_demand(&z, &[&a], &z, &z).unwrap();
        let rb = residual_demand(&z, &[&b], &z, &z).unwrap();
        for i in 0..4 {
            prop_assert!((lhs[i] - (ra[i] + k * rb[i])).abs() < 1e-9);
        }
    }
}
