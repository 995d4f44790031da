use nalgebra::{DMatrix, DVector};
use ppa_core::learn::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Centred columns with unit norm and mutual orthogonality.
fn orthonormal_centered(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    let mut x = random_matrix(rng, n, p);
    for mut c in x.column_iter_mut() {
        let m = c.mean();
        c.add_scalar_mut(-m);
    }
    x.qr().q()
}

/// Weighted least squares with an intercept from the normal equations.
fn wls(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> (f64, Vec<f64>) {
    let (n, p) = x.shape();
    let a = DMatrix::from_fn(n, p + 1, |r, c| if c == 0 { 1.0 } else { x[(r, c - 1)] });
    let wd = DMatrix::from_diagonal(&DVector::from_column_slice(w));
    let lhs = a.transpose() * &wd * &a;
    let rhs = a.transpose() * &wd * DVector::from_column_slice(y);
    let sol = lhs.cholesky().expect("full rank").solve(&rhs);
    (sol[0], sol.iter().skip(1).copied().collect())
}

#[test]
fn orthonormal_design_soft_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, p) = (60, 6);
    let x = orthonormal_centered(&mut rng, n, p);
    let y: Vec<f64> = (0..n).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let w = vec![1.0; n];
    for lambda in [0.0, 0.01, 0.05, 0.2] {
        let m = fit_lasso_cd(&x, &y, &w, lambda).unwrap();
        for j in 0..p {
            let z: f64 = (0..n).map(|r| x[(r, j)] * y[r]).sum();
            let expected = soft_threshold(z, n as f64 * lambda / 2.0);
            assert!((m.coefficients[j] - expected).abs() < 1e-8, "lambda {lambda} j {j}");
        }
    }
}

#[test]
fn unpenalized_equals_weighted_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, p) = (80, 5);
    let x = random_matrix(&mut rng, n, p);
    let y: Vec<f64> = (0..n)
        .map(|r| 2.0 + x[(r, 0)] - 0.5 * x[(r, 3)] + rng.random::<f64>())
        .collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
    let m = fit_lasso_cd(&x, &y, &w, 0.0).unwrap();
    let (b0, b) = wls(&x, &y, &w);
    assert!((m.intercept - b0).abs() < 1e-8);
    for j in 0..p {
        assert!((m.coefficients[j] - b[j]).abs() < 1e-8);
    }
}

#[test]
fn lambda_max_zeroes_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_matrix(&mut rng, 50, 4);
    let y: Vec<f64> = (0..50).map(|r| x[(r, 1)] * 2.0 + 1.0).collect();
    let w = vec![1.0; 50];
    let hi = lambda_max(&x, &y, &w).unwrap();
    let m = fit_lasso_cd(&x, &y, &w, hi).unwrap();
    assert!(m.coefficients.iter().all(|b| *b == 0.0));
    let below = fit_lasso_cd(&x, &y, &w, 0.95 * hi).unwrap();
    assert!(below.coefficients.iter().any(|b| *b != 0.0));
}

#[test]
fn single_candidate_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_matrix(&mut rng, 30, 2);
    let y: Vec<f64> = (0..30).map(|r| x[(r, 0)]).collect();
    let cv = cross_validate(fit_lasso_cd, &x, &y, &[1.0; 30], 5, &[0.3]).unwrap();
    assert_eq!(cv.best_lambda, 0.3);
    assert!(cross_validate(fit_lasso_cd, &x, &y, &[1.0; 30], 5, &[]).is_err());
    assert!(cross_validate(fit_lasso_cd, &x, &y, &[1.0; 30], 1, &[0.3]).is_err());
}

#[test]
fn ties_go_to_smallest_penalty() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_matrix(&mut rng, 40, 3);
    let y = vec![4.0; 40];
    let cv = cross_validate(fit_lasso_cd, &x, &y, &[1.0; 40], 5, &[1.0, 0.1, 0.5]).unwrap();
    assert_eq!(cv.best_lambda, 0.1);
}

/// Every true coefficient selected with the right sign and no false
/// positive larger than a tenth of the smallest true effect.
fn support_recovered(b: &[f64], truth: &[f64]) -> bool {
    let smallest = truth
        .iter()
        .filter(|v| **v != 0.0)
        .fold(f64::INFINITY, |a, v| a.min(v.abs()));
    b.iter().zip(truth).all(|(est, t)| {
        if *t != 0.0 {
            est.signum() == t.signum() && *est != 0.0
        } else {
            est.abs() < 0.1 * smallest
        }
    })
}

#[test]
fn cross_validated_lasso_recovers_sparse_support() {
    let (n, p, seeds) = (200, 10, 20);
    let truth = [1.5, 0.0, -2.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
    let mut hits = 0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = random_matrix(&mut rng, n, p);
        let y: Vec<f64> = (0..n)
            .map(|r| (0..p).map(|j| truth[j] * x[(r, j)]).sum::<f64>() + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let w = vec![1.0; n];
        let grid = log_grid(lambda_max(&x, &y, &w).unwrap(), 1e-3, 20);
        let cv = cross_validate(fit_lasso_cd, &x, &y, &w, 5, &grid).unwrap();
        let m = fit_lasso_cd(&x, &y, &w, cv.best_lambda).unwrap();
        if support_recovered(&m.coefficients, &truth) {
            hits += 1;
        }
    }
    assert!(hits * 10 >= seeds * 9, "{hits}/{seeds}");
}

#[test]
fn cmaes_sphere() {
    let opts = CmaesOptions {
        sigma0: 1.0,
        budget: 2000,
        seed: 42,
        ..Default::default()
    };
    let r = cmaes_minimize(|x| x.iter().map(|v| v * v).sum(), &[3.0, 3.0], &opts).unwrap();
    assert!(r.best_value <= 1e-6, "{}", r.best_value);
    assert!(r.evaluations_used <= 2000);
    assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn cmaes_is_deterministic_and_rejects_non_finite() {
    let f = |x: &[f64]| {
        if x[0] > 2.0 {
            f64::NAN
        } else {
            (x[0] - 1.0).powi(2) + x[1].powi(2)
        }
    };
    let opts = CmaesOptions {
        budget: 400,
        seed: 3,
        ..Default::default()
    };
    let a = cmaes_minimize(f, &[0.0, 0.5], &opts).unwrap();
    let b = cmaes_minimize(f, &[0.0, 0.5], &opts).unwrap();
    assert_eq!(a, b);
    assert!(a.best_value.is_finite());
    let small = CmaesOptions { budget: 2, ..opts };
    assert!(cmaes_minimize(f, &[0.0, 0.5], &small).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn subgradient_conditions_hold(seed in 0u64..10_000, frac in 0.01f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, p) = (40, 5);
        let x = random_matrix(&mut rng, n, p);
        let y: Vec<f64> = (0..n).map(|r| x[(r, 0)] - 2.0 * x[(r, 2)] + rng.sample::<f64, _>(StandardNormal)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
        let lambda = frac * lambda_max(&x, &y, &w).unwrap();
        let m = fit_lasso_cd(&x, &y, &w, lambda).unwrap();
        let wsum: f64 = w.iter().sum();
        let fitted = m.predict(&x);
        let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        prop_assert!(resid.iter().zip(&w).map(|(r, w)| r * w).sum::<f64>().abs() < 1e-8 * wsum);
        for j in 0..p {
            let g = 2.0 * (0..n).map(|r| w[r] * x[(r, j)] * resid[r]).sum::<f64>() / wsum;
            let b = m.coefficients[j];
            if b == 0.0 {
                prop_assert!(g.abs() <= lambda + 1e-8);
            } else {
                prop_assert!((g - lambda * b.signum()).abs() <= 1e-8);
            }
        }
        prop_assert!(m.objective_trace.windows(2).all(|t| t[1] <= t[0] + 1e-12 * t[0].abs()));
    }

    #[test]
    fn subgradient_conditions_hold_on_collinear_designs(seed in 0u64..10_000, frac in 1e-5f64..1e-2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 60;
        let base = random_matrix(&mut rng, n, 3);
        // Exact duplicates, an exact linear combination and near copies.
        let x = DMatrix::from_fn(n, 7, |r, c| match c {
            0..=2 => base[(r, c)],
            3 => base[(r, 0)],
            4 => base[(r, 1)] + base[(r, 2)],
            5 => base[(r, 0)] + 1e-7 * ((r * 7919 % 13) as f64 - 6.0),
            _ => base[(r, 2)] - 1e-9 * ((r * 104729 % 11) as f64 - 5.0),
        });
        let y: Vec<f64> = (0..n).map(|r| 3.0 * base[(r, 0)] - base[(r, 2)] + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
        let lambda = frac * lambda_max(&x, &y, &w).unwrap();
        let m = fit_lasso_cd(&x, &y, &w, lambda).unwrap();
        let wsum: f64 = w.iter().sum();
        let fitted = m.predict(&x);
        let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        for j in 0..7 {
            let g = 2.0 * (0..n).map(|r| w[r] * x[(r, j)] * resid[r]).sum::<f64>() / wsum;
            let b = m.coefficients[j];
            if b == 0.0 {
                prop_assert!(g.abs() <= lambda + 1e-8, "column {j}: |g| {} > {lambda}", g.abs());
            } else {
                prop_assert!((g - lambda * b.signum()).abs() <= 1e-8, "column {j}: g {g} vs {}", lambda * b.signum());
            }
        }
        prop_assert!(m.objective_trace.windows(2).all(|t| t[1] <= t[0] + 1e-12 * t[0].abs()));
    }
}
