use ppa_qp::{
    brute_force_qp, check_kkt, solve_qp, to_non_positive, NonPositiveDuals, QpBuilder, QpProblem, SolverSettings,
    Status,
};
use proptest::prelude::*;

const INF: f64 = f64::INFINITY;

fn solve(p: &QpProblem) -> ppa_qp::QpSolution {
    solve_qp(p, &SolverSettings::default()).unwrap()
}

#[test]
fn square_above_one() {
    let mut b = QpBuilder::new();
    b.add_var(-INF, INF, 0.0, 1.0);
    b.add_row(&[(0, 1.0)], 1.0, INF);
    let p = b.build().unwrap();
    let s = solve(&p);
    assert_eq!(s.status, Status::Optimal);
    assert!((s.primal[0] - 1.0).abs() < 1e-8);
    // the binding lower side carries multiplier magnitude 2
    assert!((s.dual_general[0].abs() - 2.0).abs() < 1e-7);
    assert!(check_kkt(&p, &s, 1e-7).unwrap().passed());
}

#[test]
fn merit_order_price() {
    let mut b = QpBuilder::new();
    b.add_var(0.0, 50.0, 10.0, 0.0);
    b.add_var(0.0, 50.0, 30.0, 0.0);
    b.add_row(&[(0, 1.0), (1, 1.0)], 75.0, 75.0);
    let p = b.build().unwrap();
    let s = solve(&p);
    assert_eq!(s.status, Status::Optimal);
    assert!((s.primal[0] - 50.0).abs() < 1e-7);
    assert!((s.primal[1] - 25.0).abs() < 1e-7);
    assert!((to_non_positive(s.dual_general[0]) - 30.0).abs() < 1e-7);
    let d = NonPositiveDuals::from_solution(&p, &s);
    assert!((d.lambda_equality[0] - 30.0).abs() < 1e-7);
    // cheap unit sits at capacity with a non-positive upper multiplier
    assert!((d.mu_upper[0] + 20.0).abs() < 1e-6);
}

#[test]
fn contradictory_bounds() {
    let mut b = QpBuilder::new();
    b.add_var(-INF, INF, 1.0, 1.0);
    b.add_row(&[(0, 1.0)], -INF, 0.0);
    b.add_row(&[(0, 1.0)], 1.0, INF);
    let p = b.build().unwrap();
    assert_eq!(solve(&p).status, Status::Infeasible);
    assert_eq!(brute_force_qp(&p).unwrap().status, Status::Infeasible);
}

#[test]
fn free_parabola() {
    let mut b = QpBuilder::new();
    b.add_var(-INF, INF, -2.0, 1.0);
    let p = b.build().unwrap();
    let s = solve(&p);
    assert!((s.primal[0] - 1.0).abs() < 1e-9);
    assert!((s.objective_value + 1.0).abs() < 1e-9);
}

#[test]
fn clipped_parabola() {
    let mut b = QpBuilder::new();
    b.add_var(0.0, 2.0, -6.0, 1.0);
    let p = b.build().unwrap();
    let s = solve(&p);
    assert!((s.primal[0] - 2.0).abs() < 1e-8);
    assert!(check_kkt(&p, &s, 1e-7).unwrap().passed());
}

#[test]
fn certificate_rejects_perturbations() {
    let mut b = QpBuilder::new();
    b.add_var(0.0, 50.0, 10.0, 0.0);
    b.add_var(0.0, 50.0, 30.0, 0.0);
    b.add_row(&[(0, 1.0), (1, 1.0)], 75.0, 75.0);
    let p = b.build().unwrap();
    let s = solve(&p);

    let mut moved = s.clone();
    moved.primal[1] += 1e-3;
    let r = check_kkt(&p, &moved, 1e-6).unwrap();
    assert!(!r.primal_feasibility.passed);

    let mut flipped = s.clone();
    flipped.dual_bounds_upper[0] = -flipped.dual_bounds_upper[0];
    let r = check_kkt(&p, &flipped, 1e-6).unwrap();
    assert!(!r.dual_feasibility.passed);
    assert!(!r.passed());

    let mut short = s.clone();
    short.primal.pop();
    assert!(check_kkt(&p, &short, 1e-6).is_err());
}

#[test]
fn unbounded_ray() {
    let mut b = QpBuilder::new();
    b.add_var(0.0, INF, -1.0, 0.0);
    let p = b.build().unwrap();
    assert_eq!(solve(&p).status, Status::Unbounded);
    assert_eq!(brute_force_qp(&p).unwrap().status, Status::Unbounded);
}

#[test]
fn rejects_nan_input() {
    let mut b = QpBuilder::new();
    b.add_var(0.0, 1.0, f64::NAN, 0.0);
    assert!(b.build().is_err());
}

/// Random feasible instance built around an interior reference point.
fn random_qp() -> impl Strategy<Value = QpProblem> {
    (1usize..=6, 0usize..=4, any::<u64>()).prop_map(|(n, m, seed)| {
        use std::num::Wrapping;
        let mut state = Wrapping(seed ^ 0x9E37_79B9_7F4A_7C15);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state.0 >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut b = QpBuilder::new();
        let x0: Vec<f64> = (0..n).map(|_| 10.0 * next() - 5.0).collect();
        for &xi in &x0 {
            let c2 = if next() < 0.3 { 0.0 } else { 0.1 + 3.0 * next() };
            let c1 = 20.0 * next() - 10.0;
            let lo = if c2 == 0.0 || next() < 0.6 {
                xi - 4.0 * next()
            } else {
                -INF
            };
            let hi = if c2 == 0.0 || next() < 0.6 {
                xi + 4.0 * next()
            } else {
                INF
            };
            b.add_var(lo, hi, c1, c2);
        }
        let mut equalities = 0;
        for _ in 0..m {
            // equality rows get a staircase pattern so they stay independent
            let is_eq = next() < 0.25 && equalities + 1 < n;
            let first = if is_eq { equalities } else { 0 };
            let mut coefs = Vec::new();
            for j in first..n {
                if j == first && is_eq {
                    coefs.push((j, 0.5 + 1.5 * next()));
                } else if next() < 0.7 {
                    coefs.push((j, 4.0 * next() - 2.0));
                }
            }
            let coefs = if coefs.is_empty() { vec![(0, 1.0)] } else { coefs };
            let act: f64 = coefs.iter().map(|&(j, a)| a * x0[j]).sum();
            let kind = next();
            let (lo, hi) = if is_eq {
                equalities += 1;
                (act, act)
            } else if kind < 0.5 {
                (act - 3.0 * next(), act + 3.0 * next())
            } else if kind < 0.75 {
                (-INF, act + 2.0 * next())
            } else {
                (act - 2.0 * next(), INF)
            };
            b.add_row(&coefs, lo, hi);
        }
        b.build().unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn agrees_with_enumeration(p in random_qp()) {
        let oracle = brute_force_qp(&p).unwrap();
        let s = solve(&p);
        prop_assert_eq!(oracle.status, Status::Optimal);
        prop_assert_eq!(s.status, Status::Optimal, "{:?}", s);
        let tol = 1e-6 * (1.0 + oracle.objective_value.abs());
        prop_assert!((s.objective_value - oracle.objective_value).abs() <= tol,
            "solver {} oracle {}", s.objective_value, oracle.objective_value);
        if p.objective_quadratic_diag.iter().all(|&c| c > 0.0) {
            for (a, b) in s.primal.iter().zip(&oracle.primal) {
                prop_assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()));
            }
        }
        let settings = SolverSettings::default();
        prop_assert!(check_kkt(&p, &s, 10.0 * settings.abs_tol.max(1e-7)).unwrap().passed());
        let recomputed = p.objective(&s.primal);
        prop_assert!((recomputed - s.objective_value).abs() <= 1e-12 * (1.0 + recomputed.abs()));
    }

    #[test]
    fn objective_scaling_keeps_argmin(p in random_qp(), k in 0.01f64..100.0) {
        let a = solve(&p);
        let b = solve(&p.scale_objective(k));
        prop_assert_eq!(a.status, Status::Optimal);
        prop_assert_eq!(b.status, Status::Optimal);
        prop_assert!((b.objective_value - k * a.objective_value).abs()
            <= 1e-6 * (1.0 + (k * a.objective_value).abs()));
        if p.objective_quadratic_diag.iter().all(|&c| c > 0.0) {
            for (x, y) in a.primal.iter().zip(&b.primal) {
                prop_assert!((x - y).abs() <= 1e-5 * (1.0 + x.abs()));
            }
        }
    }
}
