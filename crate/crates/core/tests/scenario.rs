use std::collections::BTreeMap;

use ppa_core::features::{fit_seasonal, Calendar, SeasonalOptions};
use ppa_core::scenario::*;
use proptest::prelude::*;

fn fuels() -> Vec<(&'static str, f64)> {
    vec![("gas_price", 40.0), ("coal_price", 14.0), ("carbon_price", 85.0)]
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn caps(pairs: &[(&str, f64)]) -> Capacities {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[test]
fn capacity_interpolation_spot_checks() {
    let path = interpolate_capacities(
        &caps(&[("solar", 24.0), ("coal", 3.22)]),
        &caps(&[("solar", 46.0), ("coal", 0.0)]),
        8,
    )
    .unwrap();
    assert_eq!(round2(path[1]["solar"]), 27.14);
    assert_eq!(round2(path[6]["coal"]), 0.46);
    assert_eq!(path[0]["solar"], 24.0);
    assert_eq!(path[7]["coal"], 0.0);
    let flat = interpolate_capacities(&caps(&[("gas", 5.0)]), &caps(&[("gas", 5.0)]), 4).unwrap();
    assert!(flat.iter().all(|c| c["gas"] == 5.0));
    assert!(interpolate_capacities(&caps(&[("gas", 5.0)]), &caps(&[("wind", 5.0)]), 4).is_err());
}

#[test]
fn demand_growth_examples() {
    let d = grow_demand(247.64, 0.03, 8).unwrap();
    assert_eq!(round2(d[1]), 255.07);
    assert_eq!(grow_demand(100.0, 0.0, 3).unwrap(), vec![100.0; 3]);
    let two = grow_demand(100.0, 0.01, 3).unwrap();
    assert!((two[2] - 100.0 * 1.01 * 1.01).abs() < 1e-12);
    assert!(grow_demand(100.0, -1.0, 3).is_err());
}

#[test]
fn fuel_curve_scaling_examples() {
    let months = 96;
    let down = scale_fuel_curve(&vec![1.0; months], -0.10).unwrap();
    assert_eq!(down[0], 1.0);
    assert!((down[months - 1] - 0.90).abs() < 1e-12);
    let odd = scale_fuel_curve(&[1.0; 9], -0.10).unwrap();
    assert!((odd[4] - 0.95).abs() < 1e-12);
    let up = scale_fuel_curve(&vec![1.0; months], 0.05).unwrap();
    assert!((up[months - 1] - 1.05).abs() < 1e-12);
    assert!(scale_fuel_curve(&[1.0, f64::NAN, 1.0], 0.05).is_err());
}

#[test]
fn ramps_follow_capacity() {
    let r = scale_ramps(&caps(&[("gas", 9.0)]), &caps(&[("gas", 30.0)]), &caps(&[("gas", 15.0)]));
    assert_eq!(r["gas"], 4.5);
}

fn firm(c: &Capacities, f: &Capacities) -> f64 {
    c.iter().map(|(k, v)| v * f.get(k).copied().unwrap_or(0.0)).sum()
}

#[test]
fn ambitious_path_ends_on_the_plan() {
    let cfg = spain_like_config(&fuels());
    let ambitious = &cfg.scenario_overrides[0];
    let plans = plan_scenario(&cfg, ambitious).unwrap();
    assert_eq!(plans.len(), 8);
    assert_eq!(plans.last().unwrap().capacities, cfg.capacities_end);
    assert_eq!(plans[0].capacities, cfg.capacities_start);
    assert_eq!(round2(plans[1].demand_twh), 255.07);
    assert_eq!(round2(plans[1].capacities["solar"]), 27.14);
    assert_eq!(round2(plans[6].capacities["coal"]), 0.46);
}

#[test]
fn firm_rule_keeps_the_reference_ratio() {
    let cfg = spain_like_config(&fuels());
    let reference = plan_scenario(&cfg, &cfg.scenario_overrides[0]).unwrap();
    for ov in cfg.scenario_overrides.iter().filter(|o| o.firm_rule) {
        let plans = plan_scenario(&cfg, ov).unwrap();
        for (p, r) in plans.iter().zip(&reference) {
            let want = r.demand_twh / firm(&r.capacities, &cfg.firm_capacity_factors);
            let got = p.demand_twh / firm(&p.capacities, &cfg.firm_capacity_factors);
            assert!((got - want).abs() < 1e-9, "{} {}: {got} vs {want}", ov.name, p.year);
            assert!(p.capacities.values().all(|c| *c >= 0.0));
        }
    }
}

#[test]
fn bau_gets_thirty_percent_of_new_renewables() {
    let cfg = spain_like_config(&fuels());
    let bau = cfg.scenario_overrides.iter().find(|o| o.name == "bau").unwrap();
    let last = plan_scenario(&cfg, bau).unwrap().pop().unwrap();
    for r in &cfg.renewables {
        let (s, e) = (cfg.capacities_start[r], cfg.capacities_end[r]);
        assert!((last.capacities[r] - (s + 0.3 * (e - s))).abs() < 1e-12, "{r}");
    }
    assert!(last.capacities["coal"].abs() < 1e-12);
}

fn shapes() -> SeasonalBundle {
    let start = chrono::TimeZone::with_ymd_and_hms(&chrono::Utc, 2022, 1, 1, 0, 0, 0).unwrap();
    let ts: Vec<_> = (0..365 * 24).map(|h| start + chrono::Duration::hours(h)).collect();
    let angle = |h: usize| 2.0 * std::f64::consts::PI * (h / 24) as f64 / 365.0;
    let series: [(&str, Box<dyn Fn(usize) -> f64>); 4] = [
        (
            LOAD,
            Box::new(|h| 28.0 + 3.0 * angle(h).cos() + ((h % 24) as f64 - 12.0).abs() * -0.3),
        ),
        (
            "solar",
            Box::new(|h| {
                if (7..19).contains(&(h % 24)) {
                    0.5 + 0.2 * angle(h).sin()
                } else {
                    0.0
                }
            }),
        ),
        ("wind", Box::new(|h| 0.25 + 0.05 * angle(h).cos())),
        ("hydro", Box::new(|h| 0.2 + 0.1 * angle(h).cos())),
    ];
    let opts = SeasonalOptions {
        harmonics: 2,
        grid_size: 4,
        ..Default::default()
    };
    let models: BTreeMap<_, _> = series
        .iter()
        .map(|(name, f)| {
            let v: Vec<f64> = (0..ts.len()).map(f).collect();
            (
                name.to_string(),
                fit_seasonal(&ts, &v, &opts, &Calendar::default()).unwrap(),
            )
        })
        .collect();
    SeasonalBundle {
        models,
        calendar: Calendar::default(),
    }
}

#[test]
fn hourly_scenarios_match_yearly_totals() {
    let mut cfg = spain_like_config(&fuels());
    cfg.end_year = 2024;
    cfg.capacities_end = interpolate_capacities(&cfg.capacities_start, &cfg.capacities_end, 8).unwrap()[1].clone();
    let shapes = shapes();
    let built = build_market_scenarios(&cfg, &shapes).unwrap();
    assert_eq!(built.len(), 3);
    for sc in &built {
        for y in &sc.years {
            let total: f64 = y.load.iter().sum();
            assert!((total / 1000.0 - y.plan.demand_twh).abs() <= 1e-3 * y.plan.demand_twh);
            assert_eq!(y.market.n_periods(), if y.plan.year == 2024 { 8784 } else { 8760 });
            for (r, out) in &y.renewable_output {
                let cap = y.plan.capacities[r];
                assert!(out.iter().all(|v| *v >= 0.0 && *v <= cap));
            }
            y.market.validate().unwrap();
        }
    }
    let again = build_market_scenarios(&cfg, &shapes).unwrap();
    assert_eq!(built, again);
    let mut bad = cfg.clone();
    bad.end_year = 2022;
    assert!(build_market_scenarios(&bad, &shapes).is_err());
}

proptest! {
    #[test]
    fn interior_years_lie_between_endpoints(a in 0.0f64..100.0, b in 0.0f64..100.0, years in 3usize..12) {
        let path = interpolate_capacities(&caps(&[("x", a)]), &caps(&[("x", b)]), years).unwrap();
        prop_assert_eq!(path[0]["x"], a);
        prop_assert_eq!(path[years - 1]["x"], b);
        if a != b {
            for p in &path[1..years - 1] {
                prop_assert!(p["x"] > a.min(b) && p["x"] < a.max(b));
            }
        }
    }
}
