//! Random-instance checks: IPM against active-set enumeration with a KKT
//! certificate, and dispatch prices against the merit-order rule.

use ppa_core::market::{merit_order_price, solve_dispatch, CostCurves, DispatchSettings, MarketScenario, Technology};
use ppa_qp::{brute_force_qp, check_kkt, solve_qp, QpBuilder, QpProblem, SolverSettings, Status};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

/// Bounded QP with a few rows, feasible by construction around `x0`.
fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let n = rng.random_range(1..=5usize);
    let mut b = QpBuilder::new();
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    for &xi in &x0 {
        let c2 = if rng.random::<f64>() < 0.3 {
            0.0
        } else {
            rng.random_range(0.1..2.0)
        };
        b.add_var(
            xi - rng.random_range(0.0..3.0),
            xi + rng.random_range(0.0..3.0),
            rng.random_range(-5.0..5.0),
            c2,
        );
    }
    for _ in 0..rng.random_range(0..=4usize) {
        let coefs: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.random_range(-2.0..2.0))).collect();
        let act: f64 = coefs.iter().map(|&(j, a)| a * x0[j]).sum();
        b.add_row(
            &coefs,
            act - rng.random_range(0.0..2.0),
            act + rng.random_range(0.0..2.0),
        );
    }
    b.build().expect("generated problem is valid")
}

fn qp_property(rng: &mut ChaCha8Rng, cases: usize) -> Result<String, String> {
    let mut worst = 0.0f64;
    for k in 0..cases {
        let p = random_qp(rng);
        let s = solve_qp(&p, &SolverSettings::default()).map_err(|e| format!("case {k}: {e}"))?;
        if s.status != Status::Optimal {
            return Err(format!("case {k}: status {:?}", s.status));
        }
        let kkt = check_kkt(&p, &s, TOL).map_err(|e| format!("case {k}: {e}"))?;
        if !kkt.passed() {
            return Err(format!("case {k}: KKT conditions violated"));
        }
        let oracle = brute_force_qp(&p).map_err(|e| format!("case {k}: {e}"))?;
        let gap = (s.objective_value - oracle.objective_value).abs() / (1.0 + oracle.objective_value.abs());
        if gap > TOL {
            return Err(format!("case {k}: objective gap {gap:e}"));
        }
        worst = worst.max(gap);
    }
    Ok(format!("{cases} QPs, worst relative gap {worst:.1e}"))
}

fn merit_order_property(rng: &mut ChaCha8Rng, cases: usize) -> Result<String, String> {
    let mut compared = 0;
    for k in 0..cases {
        let n = rng.random_range(2..=5usize);
        let hours = 12;
        let c1: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
        let caps: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..40.0)).collect();
        let total: f64 = caps.iter().sum();
        let demand: Vec<f64> = (0..hours).map(|_| rng.random_range(0.0..0.95 * total)).collect();
        let techs = (0..n).map(|i| Technology::conventional(&format!("t{i}"))).collect();
        let sc = MarketScenario::simple(techs, demand.clone(), caps.iter().map(|c| vec![*c; hours]).collect());
        let sol = solve_dispatch(&sc, &CostCurves::linear(&c1, hours), &DispatchSettings::default())
            .map_err(|e| format!("case {k}: {e}"))?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| c1[*a].total_cmp(&c1[*b]));
        let mut cum = 0.0;
        let breaks: Vec<f64> = order
            .iter()
            .map(|&i| {
                cum += caps[i];
                cum
            })
            .collect();
        for (t, d) in demand.iter().enumerate() {
            if *d < TOL || breaks.iter().any(|b| (b - d).abs() < TOL) {
                continue;
            }
            let want = merit_order_price(&c1, &caps, *d).map_err(|e| e.to_string())?;
            if (sol.price[t] - want).abs() > TOL {
                return Err(format!(
                    "case {k} hour {t}: dual price {} vs merit order {want}",
                    sol.price[t]
                ));
            }
            compared += 1;
        }
    }
    Ok(format!("{cases} systems, {compared} hours compared"))
}

/// Runs every property; returns the exit code.
pub fn run(seed: u64, cases: usize) -> u8 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let results = [
        ("qp", qp_property(&mut rng, cases)),
        ("merit_order", merit_order_property(&mut rng, cases)),
    ];
    let mut failed = false;
    for (name, r) in &results {
        match r {
            Ok(msg) => eprintln!("{name}: PASS {msg}"),
            Err(msg) => {
                failed = true;
                eprintln!("{name}: FAIL {msg}");
            }
        }
    }
    if failed {
        crate::EXIT_SOLVER
    } else {
        0
    }
}
