use ppa_core::market::*;
use ppa_core::CoreError;
use ppa_qp::{check_kkt, solve_qp, SolverSettings};
use proptest::prelude::*;

fn techs(n: usize) -> Vec<Technology> {
    (0..n).map(|i| Technology::conventional(&format!("t{i}"))).collect()
}

fn storage_case(eta: f64) -> MarketScenario {
    let mut sc = MarketScenario::simple(techs(1), vec![0.0, 9.0], vec![vec![100.0, 0.0]]);
    sc.storage_energy_cap = vec![100.0; 2];
    sc.storage_charge_cap = vec![100.0; 2];
    sc.storage_discharge_cap = vec![100.0; 2];
    sc.storage_efficiency = eta;
    sc
}

#[test]
fn equal_quadratic_units_share_load() {
    let sc = MarketScenario::simple(techs(2), vec![10.0], vec![vec![1e3]; 2]);
    let costs = CostCurves {
        c1: vec![vec![0.0]; 2],
        c2: vec![vec![1.0]; 2],
        k: vec![vec![0.0]; 2],
    };
    let sol = solve_dispatch(&sc, &costs, &DispatchSettings::default()).unwrap();
    assert!((sol.x[0][0] - 5.0).abs() < 1e-6);
    assert!((sol.x[1][0] - 5.0).abs() < 1e-6);
    assert!((sol.price[0] - 10.0).abs() < 1e-6);
}

#[test]
fn storage_shifts_cheap_energy_forward() {
    let eta = 0.9;
    let sol = solve_dispatch(
        &storage_case(eta),
        &CostCurves::linear(&[10.0], 2),
        &DispatchSettings::default(),
    )
    .unwrap();
    assert!((sol.y_plus[0] - 100.0 / 9.0).abs() < 1e-6, "{}", sol.y_plus[0]);
    assert!((sol.y_minus[1] - 9.0).abs() < 1e-6);
    assert!((sol.price[1] - 10.0 / (eta * eta)).abs() < 1e-6, "{}", sol.price[1]);
}

#[test]
fn merit_order_examples() {
    assert_eq!(merit_order_price(&[10.0, 30.0], &[50.0, 50.0], 75.0).unwrap(), 30.0);
    assert_eq!(merit_order_price(&[10.0, 30.0], &[50.0, 50.0], 25.0).unwrap(), 10.0);
    assert!(merit_order_price(&[10.0, 30.0], &[50.0, 50.0], 110.0).is_err());
}

#[test]
fn negative_cost_rejected() {
    let sc = MarketScenario::simple(techs(1), vec![1.0], vec![vec![5.0]]);
    let mut costs = CostCurves::linear(&[1.0], 1);
    costs.c2[0][0] = -1.0;
    assert!(build_forward_qp(&sc, &costs).is_err());
    let bad = CostCurves::linear(&[1.0, 2.0], 1);
    assert!(matches!(build_forward_qp(&sc, &bad), Err(CoreError::Dimension(_))));
}

#[test]
fn negative_demand_policies() {
    let sc = MarketScenario::simple(techs(1), vec![-5.0, 20.0], vec![vec![100.0; 2]]);
    let costs = CostCurves::linear(&[10.0], 2);
    let clamp = solve_dispatch(&sc, &costs, &DispatchSettings::default()).unwrap();
    assert!(clamp.x[0][0].abs() < 1e-6);
    let settings = DispatchSettings {
        negative_demand: NegativeDemand::Curtail,
        ..Default::default()
    };
    let curtail = solve_dispatch(&sc, &costs, &settings).unwrap();
    assert!((curtail.curtailment[0] - 5.0).abs() < 1e-6);
    assert!(curtail.price[0].abs() < 1e-6);
    assert!((curtail.price[1] - 10.0).abs() < 1e-6);
}

#[test]
fn rolling_window_keeps_storage_continuous() {
    let t = 336;
    let demand: Vec<f64> = (0..t)
        .map(|h| 50.0 + 30.0 * ((h % 24) as f64 / 24.0 * std::f64::consts::TAU).sin())
        .collect();
    let mut sc = MarketScenario::simple(techs(2), demand, vec![vec![60.0; t], vec![60.0; t]]);
    sc.storage_energy_cap = vec![40.0; t];
    sc.storage_charge_cap = vec![10.0; t];
    sc.storage_discharge_cap = vec![10.0; t];
    let costs = CostCurves::linear(&[10.0, 40.0], t);
    let sol = rolling_horizon_dispatch(&sc, &costs, &DispatchSettings::default(), 168, true).unwrap();
    assert_eq!(sol.n_periods(), t);
    let eta = sc.storage_efficiency;
    let expected = sol.s[167] + eta * sol.y_plus[168] - sol.y_minus[168] / eta;
    assert!((sol.s[168] - expected).abs() < 1e-6);

    let cold = rolling_horizon_dispatch(&sc, &costs, &DispatchSettings::default(), 168, false).unwrap();
    let first = cold.s[168] - eta * cold.y_plus[168] + cold.y_minus[168] / eta;
    assert!((first - sc.initial_storage).abs() < 1e-6);
}

#[test]
fn rolling_matches_monolithic_without_coupling() {
    let t = 72;
    let demand: Vec<f64> = (0..t).map(|h| 20.0 + (h % 7) as f64 * 9.0).collect();
    let sc = MarketScenario::simple(techs(3), demand, vec![vec![30.0; t]; 3]);
    let costs = CostCurves::linear(&[5.0, 12.0, 40.0], t);
    let whole = solve_dispatch(&sc, &costs, &DispatchSettings::default()).unwrap();
    let rolled = rolling_horizon_dispatch(&sc, &costs, &DispatchSettings::default(), 24, true).unwrap();
    for (a, b) in whole.price.iter().zip(&rolled.price) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!(rolling_horizon_dispatch(&sc, &costs, &DispatchSettings::default(), 12, true).is_err());
}

fn linear_instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..5, 1usize..5).prop_flat_map(|(n, t)| {
        (
            prop::collection::vec(1.0f64..100.0, n),
            prop::collection::vec(5.0f64..50.0, n),
            prop::collection::vec(0.05f64..0.95, t),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn linear_prices_within_cost_range((c1, caps, frac) in linear_instance()) {
        let total: f64 = caps.iter().sum();
        let t = frac.len();
        let demand: Vec<f64> = frac.iter().map(|f| f * total).collect();
        let sc = MarketScenario::simple(techs(c1.len()), demand, caps.iter().map(|c| vec![*c; t]).collect());
        let sol = solve_dispatch(&sc, &CostCurves::linear(&c1, t), &DispatchSettings::default()).unwrap();
        let lo = c1.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c1.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for p in &sol.price {
            prop_assert!(*p >= lo - 1e-6 && *p <= hi + 1e-6);
        }
        for h in 0..t {
            let supplied: f64 = sol.x.iter().map(|row| row[h]).sum::<f64>() + sol.y_minus[h] - sol.y_plus[h];
            prop_assert!((supplied - sc.demand[h]).abs() < 1e-6);
        }
    }

    #[test]
    fn objective_monotone_in_demand((c1, caps, frac) in linear_instance(), bump in 0.0f64..0.04) {
        let total: f64 = caps.iter().sum();
        let t = frac.len();
        let build = |extra: f64| {
            let demand: Vec<f64> = frac.iter().map(|f| (f + extra) * total).collect();
            MarketScenario::simple(techs(c1.len()), demand, caps.iter().map(|c| vec![*c; t]).collect())
        };
        let costs = CostCurves::linear(&c1, t);
        let a = solve_dispatch(&build(0.0), &costs, &DispatchSettings::default()).unwrap();
        let b = solve_dispatch(&build(bump), &costs, &DispatchSettings::default()).unwrap();
        prop_assert!(b.objective >= a.objective - 1e-6 * (1.0 + a.objective.abs()));
    }

    #[test]
    fn storage_idle_under_flat_prices(c in 1.0f64..80.0, eta in 0.5f64..0.99, frac in prop::collection::vec(0.1f64..0.6, 2..6)) {
        let t = frac.len();
        let mut sc = MarketScenario::simple(techs(1), frac.iter().map(|f| f * 100.0).collect(), vec![vec![100.0; t]]);
        sc.storage_energy_cap = vec![50.0; t];
        sc.storage_charge_cap = vec![20.0; t];
        sc.storage_discharge_cap = vec![20.0; t];
        sc.storage_efficiency = eta;
        let sol = solve_dispatch(&sc, &CostCurves::linear(&[c], t), &DispatchSettings::default()).unwrap();
        for h in 0..t {
            prop_assert!(sol.y_plus[h].abs() < 1e-6 && sol.y_minus[h].abs() < 1e-6);
        }
    }

    #[test]
    fn dispatch_passes_kkt_check(c1 in prop::collection::vec(1.0f64..60.0, 2), c2 in 0.0f64..0.5, k in 0.0f64..3.0, frac in prop::collection::vec(0.1f64..0.9, 3..6)) {
        let t = frac.len();
        let mut sc = MarketScenario::simple(techs(2), frac.iter().map(|f| f * 80.0).collect(), vec![vec![50.0; t]; 2]);
        sc.ramp_up = vec![vec![30.0; t]; 2];
        sc.ramp_down = vec![vec![30.0; t]; 2];
        sc.storage_energy_cap = vec![20.0; t];
        sc.storage_charge_cap = vec![5.0; t];
        sc.storage_discharge_cap = vec![5.0; t];
        let mut costs = CostCurves::linear(&c1, t);
        costs.c2 = vec![vec![c2; t]; 2];
        costs.k = vec![vec![k; t]; 2];
        let forward = build_forward_qp(&sc, &costs).unwrap();
        let sol = solve_qp(&forward.problem, &SolverSettings::default()).unwrap();
        let report = check_kkt(&forward.problem, &sol, 1e-6).unwrap();
        prop_assert!(report.passed(), "{report:?}");
    }
}
