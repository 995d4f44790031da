use ppa_core::valuation::*;
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn capture_price_examples() {
    assert_eq!(capture_price(&[1.0, 1.0], &[10.0, 20.0]).unwrap(), 15.0);
    assert_eq!(capture_price(&[1.0, 3.0], &[10.0, 20.0]).unwrap(), 17.5);
    assert!(capture_price(&[0.0, 0.0], &[10.0, 20.0]).is_err());
    assert!(capture_price(&[1.0], &[10.0, 20.0]).is_err());
}

#[test]
fn ppa_value_examples() {
    let v = ppa_value_with_factors(0.0, &[1.0, 1.0], &[10.0, 20.0], &[0.0, 0.0], &[1.0, 0.5]).unwrap();
    assert_eq!(v, 20.0);
    let contract = PpaContract {
        fixed_price: 15.0,
        volume: vec![1.0, 1.0],
        annual_discount_rate: 0.0,
        green_premium: vec![],
    };
    assert_eq!(ppa_value(&contract, &[10.0, 20.0]).unwrap(), 0.0);
    let green = PpaContract {
        green_premium: vec![4.0, 4.0],
        ..contract.clone()
    };
    assert_eq!(ppa_value(&green, &[10.0, 20.0]).unwrap(), 8.0);
    assert!(ppa_value(&contract, &[10.0]).is_err());
}

#[test]
fn nmae_examples() {
    let v = nmae(&[12.0, 18.0], &[10.0, 20.0], &[1.0, 1.0]).unwrap();
    assert!((v - 4.0 / 30.0).abs() < 1e-15);
    assert_eq!(nmae(&[10.0, 20.0], &[10.0, 20.0], &[1.0, 1.0]).unwrap(), 0.0);
    assert!(nmae(&[1.0, -1.0], &[1.0, -1.0], &[1.0, 1.0]).is_err());
    let r = backtest(
        &[12.0, 18.0],
        &[10.0, 20.0],
        &[("base", &[1.0, 1.0]), ("solar", &[0.0, 1.0])],
    )
    .unwrap();
    assert!((r.nmae["solar"] - 2.0 / 15.0).abs() < 1e-15);
    assert_eq!(r.errors, vec![2.0, -2.0]);
    assert_eq!(r.mean_price, 15.0);
}

#[test]
fn break_even_special_cases() {
    let q = [1.0, 2.0, 0.5, 4.0];
    assert!((break_even_price(&q, &[42.0; 4], 0.11).unwrap() - 42.0).abs() < 1e-12);
    let p = [10.0, 30.0, 50.0, 20.0];
    assert_eq!(break_even_price(&q, &p, 0.0).unwrap(), capture_price(&q, &p).unwrap());
}

#[test]
fn sensitivity_grid_has_thirteen_points() {
    let m = sensitivity_multipliers();
    assert_eq!(m.len(), 13);
    for (k, v) in m.iter().enumerate() {
        assert!((v - (0.70 + 0.05 * k as f64)).abs() < 1e-12);
    }
    assert_eq!(m[6], 1.0);
    let grid = sensitivity_sweep(SensitivityFactor::Demand, |x| {
        if x > 1.25 {
            Err(ppa_core::CoreError::InvalidInput("fails".into()))
        } else {
            Ok(100.0 * x)
        }
    })
    .unwrap();
    assert_eq!(grid.capture_prices[6], Some(grid.base_capture_price));
    assert_eq!(grid.capture_prices[12], None);
    assert_eq!(
        "carbon_price".parse::<SensitivityFactor>().unwrap(),
        SensitivityFactor::CarbonPrice
    );
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    (1usize..200).prop_flat_map(|t| {
        (
            prop::collection::vec(0.0f64..10.0, t),
            prop::collection::vec(-50.0f64..300.0, t),
            prop::collection::vec(0.0f64..20.0, t),
            0.0f64..0.3,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn break_even_has_zero_npv((q, p, _g, r) in instance()) {
        prop_assume!(q.iter().sum::<f64>() > 1e-6);
        let price = break_even_price(&q, &p, r).unwrap();
        let scale: f64 = q.iter().zip(&p).map(|(q, p)| q * p.abs()).sum::<f64>() + 1.0;
        prop_assert!(npv(&q, &p, price, r).unwrap().abs() <= 1e-9 * scale);
    }

    #[test]
    fn indifference_price_zeroes_value((q, p, g, r) in instance()) {
        prop_assume!(q.iter().sum::<f64>() > 1e-6);
        let price = indifference_price(&q, &p, &g, r).unwrap();
        let contract = PpaContract { fixed_price: price, volume: q.clone(), annual_discount_rate: r, green_premium: g.clone() };
        let scale: f64 = q.iter().zip(&p).zip(&g).map(|((q, p), g)| q * (p.abs() + g)).sum::<f64>() + 1.0;
        prop_assert!(ppa_value(&contract, &p).unwrap().abs() <= 1e-9 * scale);
    }

    #[test]
    fn undiscounted_without_premium_is_capture_price((q, p, _g, _r) in instance()) {
        prop_assume!(q.iter().sum::<f64>() > 1e-6);
        let zero = vec![0.0; q.len()];
        let cp = capture_price(&q, &p).unwrap();
        prop_assert_eq!(indifference_price(&q, &p, &zero, 0.0).unwrap(), cp);
        let contract = PpaContract { fixed_price: cp, volume: q.clone(), annual_discount_rate: 0.0, green_premium: vec![] };
        let scale: f64 = q.iter().zip(&p).map(|(q, p)| q * p.abs()).sum::<f64>() + 1.0;
        prop_assert!(ppa_value(&contract, &p).unwrap().abs() <= 1e-12 * scale);
    }

    #[test]
    fn premium_shifts_indifference_price((q, p, _g, r) in instance(), g in 0.0f64..30.0) {
        prop_assume!(q.iter().sum::<f64>() > 1e-6);
        let zero = vec![0.0; q.len()];
        let base = indifference_price(&q, &p, &zero, r).unwrap();
        let shifted = indifference_price(&q, &p, &vec![g; q.len()], r).unwrap();
        prop_assert!(close(shifted, base + g, 1e-12));
    }

    #[test]
    fn capture_price_scale_invariant_and_bounded((q, p, _g, _r) in instance(), s in 0.01f64..100.0) {
        prop_assume!(q.iter().sum::<f64>() > 1e-6);
        let a = capture_price(&q, &p).unwrap();
        let scaled: Vec<f64> = q.iter().map(|v| v * s).collect();
        prop_assert!(close(a, capture_price(&scaled, &p).unwrap(), 1e-12));
        let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a >= lo - 1e-9 && a <= hi + 1e-9);
    }

    #[test]
    fn indifference_monotone_in_prices((q, p, g, r) in instance(), k in any::<prop::sample::Index>(), bump in 0.0f64..50.0) {
        prop_assume!(q.iter().sum::<f64>() > 1e-6);
        let t = k.index(q.len());
        let base = indifference_price(&q, &p, &g, r).unwrap();
        let mut p2 = p.clone();
        p2[t] += bump;
        let mut g2 = g.clone();
        g2[t] += bump;
        prop_assert!(indifference_price(&q, &p2, &g, r).unwrap() >= base - 1e-9 * (1.0 + base.abs()));
        prop_assert!(indifference_price(&q, &p, &g2, r).unwrap() >= base - 1e-9 * (1.0 + base.abs()));
    }

    #[test]
    fn nmae_homogeneous_of_degree_zero((_q, p, _g, _r) in instance(), noise in prop::collection::vec(-5.0f64..5.0, 200), s in 0.1f64..50.0) {
        let actual: Vec<f64> = p.iter().map(|v| v.abs() + 1.0).collect();
        let predicted: Vec<f64> = actual.iter().zip(&noise).map(|(a, n)| a + n).collect();
        let w = vec![1.0; actual.len()];
        let a = nmae(&predicted, &actual, &w).unwrap();
        let sa: Vec<f64> = actual.iter().map(|v| v * s).collect();
        let sp: Vec<f64> = predicted.iter().map(|v| v * s).collect();
        prop_assert!(close(a, nmae(&sp, &sa, &w).unwrap(), 1e-12));
        prop_assert!(a >= 0.0);
        prop_assert_eq!(nmae(&actual, &actual, &w).unwrap(), 0.0);
    }
}
