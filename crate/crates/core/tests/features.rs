use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use ppa_core::features::*;
use ppa_core::CoreError;
use proptest::prelude::*;

fn hourly(start: DateTime<Utc>, hours: usize) -> Vec<DateTime<Utc>> {
    (0..hours).map(|h| start + Duration::hours(h as i64)).collect()
}

fn start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2021, 1, 4, 0, 0, 0).unwrap()
}

fn raw(values: &[(&str, Vec<f64>)]) -> RawSeries {
    let t = values[0].1.len();
    RawSeries {
        timestamps: hourly(start(), t),
        series: values.iter().map(|(n, v)| (n.to_string(), v.clone())).collect(),
    }
}

#[test]
fn column_count_and_order() {
    let r = raw(&[("a", vec![1.0, 2.0]), ("b", vec![3.0, 5.0]), ("c", vec![0.0, 1.0])]);
    let fm = build_features(&r, &Calendar::default()).unwrap();
    let names = fm.column_names();
    assert_eq!(names.len(), 3 + 6 + 23 + 6 + 1 + 1);
    assert_eq!(&names[..9], ["a", "b", "c", "a*a", "a*b", "a*c", "b*b", "b*c", "c*c"]);
    assert_eq!(names.last().unwrap(), INTERCEPT);
    let numeric = fm.schema.scaled.iter().filter(|s| **s).count();
    assert_eq!(numeric, 9);
}

#[test]
fn min_max_scaling_is_not_clipped() {
    let train = raw(&[("a", vec![1.0, 3.0, 2.0])]);
    let fm = build_features(&train, &Calendar::default()).unwrap();
    assert_eq!(fm.column("a").unwrap(), vec![0.0, 1.0, 0.5]);
    let test = raw(&[("a", vec![4.0])]);
    let tf = transform_features(&test, &fm.schema, &Calendar::default()).unwrap();
    assert_eq!(tf.column("a").unwrap(), vec![1.5]);
    assert_eq!(tf.column(INTERCEPT).unwrap(), vec![1.0]);
}

#[test]
fn dummies_follow_the_clock_and_calendar() {
    let r = raw(&[("a", (0..48).map(f64::from).collect())]);
    let mut cal = Calendar::default();
    cal.holidays.insert(NaiveDate::from_ymd_opt(2021, 1, 5).unwrap());
    let fm = build_features(&r, &cal).unwrap();
    let h5 = fm.column("hour_5").unwrap();
    assert_eq!(h5[5], 1.0);
    assert_eq!(h5[6], 0.0);
    let tue = fm.column("dow_tue").unwrap();
    assert_eq!(tue[0], 0.0);
    assert_eq!(tue[24], 1.0);
    let hol = fm.column(HOLIDAY).unwrap();
    assert_eq!(hol[23], 0.0);
    assert_eq!(hol[30], 1.0);
}

#[test]
fn bad_inputs_are_reported() {
    let r = raw(&[("a", vec![1.0, f64::NAN, 2.0])]);
    match build_features(&r, &Calendar::default()) {
        Err(CoreError::Data(msg)) => assert!(msg.contains("[1]"), "{msg}"),
        other => panic!("{other:?}"),
    }
    let r = raw(&[("a", vec![1.0, 2.0])]);
    assert!(build_features_from(&r, &["b".to_string()], &Calendar::default()).is_err());
    let fm = build_features(&r, &Calendar::default()).unwrap();
    let mut schema = fm.schema.clone();
    schema.base.push("a2".into());
    let r2 = raw(&[("a", vec![1.0]), ("a2", vec![1.0])]);
    assert!(matches!(
        transform_features(&r2, &schema, &Calendar::default()),
        Err(CoreError::SchemaMismatch { .. })
    ));
}

#[test]
fn schema_hash_is_deterministic() {
    let a = raw(&[("x", vec![1.0, 2.0]), ("y", vec![2.0, 0.0])]);
    let b = raw(&[("y", vec![2.0, 0.0]), ("x", vec![1.0, 2.0])]);
    let h1 = build_features(&a, &Calendar::default()).unwrap().schema.schema_hash;
    let h2 = build_features(&a, &Calendar::default()).unwrap().schema.schema_hash;
    let h3 = build_features(&b, &Calendar::default()).unwrap().schema.schema_hash;
    assert_eq!(h1, h2);
    assert_ne!(h1, h3);
    assert_eq!(h1.len(), 64);
}

fn daily_series(days: usize, f: impl Fn(usize) -> f64) -> (Vec<DateTime<Utc>>, Vec<f64>) {
    let ts = hourly(start(), days * 24);
    let v = (0..days * 24).map(|h| f(h / 24)).collect();
    (ts, v)
}

fn options(harmonics: usize, trend: bool, calendar: bool) -> SeasonalOptions {
    SeasonalOptions {
        harmonics,
        with_trend: trend,
        with_calendar: calendar,
        grid_size: 6,
        ..Default::default()
    }
}

#[test]
fn seasonal_fits_a_cosine() {
    let (ts, v) = daily_series(730, |d| {
        5.0 + 2.0 * (2.0 * std::f64::consts::PI * d as f64 / 365.0).cos()
    });
    let m = fit_seasonal(&ts, &v, &options(2, true, false), &Calendar::default()).unwrap();
    assert_eq!(m.hours.len(), 24);
    for h in &m.hours {
        assert!(h.metrics.r2 >= 0.999, "{}", h.metrics.r2);
    }
    let pred = predict_seasonal(&m, &ts, &Calendar::default());
    for (p, a) in pred.iter().zip(&v) {
        assert!((p - a).abs() < 0.05);
    }
}

#[test]
fn seasonal_constant_series() {
    let (ts, v) = daily_series(400, |_| 7.5);
    let m = fit_seasonal(&ts, &v, &options(3, true, true), &Calendar::default()).unwrap();
    for h in &m.hours {
        assert!((h.intercept - 7.5).abs() <= 1e-6);
        let others = h
            .sin
            .iter()
            .chain(&h.cos)
            .chain(&h.weekday)
            .chain([&h.trend, &h.holiday]);
        for c in others {
            assert!(c.abs() <= 1e-6);
        }
    }
}

#[test]
fn seasonal_without_trend_repeats_yearly() {
    let (ts, v) = daily_series(400, |d| 3.0 + (d as f64 * 0.37).sin() + (d % 7) as f64 * 0.1);
    let m = fit_seasonal(&ts, &v, &options(6, false, false), &Calendar::default()).unwrap();
    let t0 = Utc.with_ymd_and_hms(2022, 3, 1, 13, 0, 0).unwrap();
    let later = t0 + Duration::days(365);
    assert_eq!(
        m.predict_at(t0, &Calendar::default()),
        m.predict_at(later, &Calendar::default())
    );
}

#[test]
fn seasonal_trend_extrapolates_linearly() {
    let (ts, v) = daily_series(730, |d| {
        10.0 + 0.01 * d as f64 + (2.0 * std::f64::consts::PI * d as f64 / 365.0).sin()
    });
    let m = fit_seasonal(&ts, &v, &options(2, true, false), &Calendar::default()).unwrap();
    let t0 = Utc.with_ymd_and_hms(2030, 6, 1, 9, 0, 0).unwrap();
    let t1 = t0 + Duration::days(365 * 4);
    let diff = m.predict_at(t1, &Calendar::default()) - m.predict_at(t0, &Calendar::default());
    let slope = m.hours[9].trend;
    assert!((diff - slope * 365.0 * 4.0).abs() < 1e-9);
    assert!((slope - 0.01).abs() < 1e-3, "{slope}");
}

#[test]
fn holiday_effect_is_the_holiday_coefficient() {
    let mut cal = Calendar::default();
    let mut d = NaiveDate::from_ymd_opt(2021, 1, 6).unwrap();
    while d < NaiveDate::from_ymd_opt(2023, 1, 1).unwrap() {
        cal.holidays.insert(d);
        d += Duration::days(23);
    }
    let base = start().date_naive();
    let ts = hourly(start(), 730 * 24);
    let v: Vec<f64> = ts
        .iter()
        .map(|t| {
            let date = t.date_naive();
            20.0 + (date - base).num_days() as f64 % 5.0 * 0.1 - if cal.is_holiday(date) { 4.0 } else { 0.0 }
        })
        .collect();
    let m = fit_seasonal(&ts, &v, &options(2, true, true), &cal).unwrap();
    let t = Utc.with_ymd_and_hms(2024, 2, 7, 18, 0, 0).unwrap();
    let mut holiday = Calendar::default();
    holiday.holidays.insert(t.date_naive());
    let gap = m.predict_at(t, &holiday) - m.predict_at(t, &Calendar::default());
    assert!((gap - m.hours[18].holiday).abs() < 1e-12);
    assert!(m.hours[18].holiday < -3.0);
}

#[test]
fn seasonal_refuses_short_series() {
    let (ts, v) = daily_series(200, |_| 1.0);
    assert!(fit_seasonal(&ts, &v, &options(2, true, false), &Calendar::default()).is_err());
    let (ts, v) = daily_series(400, |_| 1.0);
    assert!(fit_seasonal(&ts, &v, &options(181, true, false), &Calendar::default()).is_err());
}

#[test]
fn quantile_transform_round_trip() {
    let q = QuantileTransform::fit(&[3.0, 1.0, 2.0, 2.0, 10.0]).unwrap();
    assert_eq!(q.forward(1.0), 0.0);
    assert_eq!(q.forward(10.0), 1.0);
    for v in [1.0, 1.5, 2.0, 7.0, 10.0] {
        assert!((q.inverse(q.forward(v)) - v).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaling_round_trip(a in prop::collection::vec(-1e3f64..1e3, 2..40), b in prop::collection::vec(-10.0f64..10.0, 40)) {
        let b = b[..a.len()].to_vec();
        let r = raw(&[("a", a.clone()), ("b", b.clone())]);
        let fm = build_features(&r, &Calendar::default()).unwrap();
        let back = fm.unscaled();
        for (k, row) in back.iter().enumerate() {
            prop_assert!((row[0] - a[k]).abs() <= 1e-12 * (1.0 + a[k].abs()) * 1e3);
            prop_assert!((row[1] - b[k]).abs() <= 1e-12 * (1.0 + b[k].abs()) * 1e3);
        }
        for (c, scaled) in fm.schema.scaled.iter().enumerate() {
            if *scaled {
                for row in &fm.values {
                    prop_assert!(row[c] >= -1e-12 && row[c] <= 1.0 + 1e-12);
                }
            }
        }
    }
}
