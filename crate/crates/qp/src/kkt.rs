//! KKT residuals and the optimality certificate for linearly constrained
//! separable QPs.
//!
//! For a convex problem the KKT conditions are necessary and sufficient, so a
//! point passing [`check_kkt`] is a global optimum up to the tolerance.
//! Internally multipliers follow the convention of [`crate::QpSolution`].
//! [`NonPositiveDuals`] re-expresses them with the opposite orientation, where the
//! Lagrangian adds `lambda (b - A x)`, `mu_lower (x - l)` and
//! `mu_upper (u - x)` and every inequality multiplier is non-positive.

use crate::error::QpError;
use crate::problem::{KktResiduals, QpProblem, QpSolution};

/// Residual magnitudes of a candidate primal-dual point. Any non-finite
/// entry makes every residual `NaN`, which fails all tolerance checks.
pub fn kkt_residuals(problem: &QpProblem, x: &[f64], y: &[f64], z_lower: &[f64], z_upper: &[f64]) -> KktResiduals {
    let n = problem.n_vars();
    let a = &problem.constraints;
    if !x.iter().chain(y).chain(z_lower).chain(z_upper).all(|v| v.is_finite()) {
        return KktResiduals {
            stationarity_inf_norm: f64::NAN,
            primal_inf_norm: f64::NAN,
            dual_inf_norm: f64::NAN,
            complementarity_inf_norm: f64::NAN,
        };
    }

    let mut stationarity = problem.gradient(x);
    for (r, &yr) in y.iter().enumerate() {
        if yr != 0.0 {
            for (c, v) in a.row(r) {
                stationarity[c] += v * yr;
            }
        }
    }
    let mut stat_norm = 0.0f64;
    for i in 0..n {
        stat_norm = stat_norm.max((stationarity[i] - z_lower[i] + z_upper[i]).abs());
    }

    let ax = a.mul_vec(x);
    let mut primal = 0.0f64;
    let mut dual = 0.0f64;
    let mut comp = 0.0f64;

    for r in 0..problem.n_rows() {
        let (lo, hi) = (problem.row_lower[r], problem.row_upper[r]);
        primal = primal.max(lo - ax[r]).max(ax[r] - hi);
        if lo == hi {
            continue;
        }
        let yr = y[r];
        if yr > 0.0 {
            if hi.is_finite() {
                comp = comp.max((yr * (hi - ax[r])).abs());
            } else {
                dual = dual.max(yr);
            }
        } else if yr < 0.0 {
            if lo.is_finite() {
                comp = comp.max((yr * (ax[r] - lo)).abs());
            } else {
                dual = dual.max(-yr);
            }
        }
    }
    for i in 0..n {
        let (lo, hi) = (problem.var_lower[i], problem.var_upper[i]);
        primal = primal.max(lo - x[i]).max(x[i] - hi);
        let (zl, zu) = (z_lower[i], z_upper[i]);
        dual = dual.max(-zl).max(-zu);
        if zl > 0.0 {
            if lo.is_finite() {
                comp = comp.max((zl * (x[i] - lo)).abs());
            } else {
                dual = dual.max(zl);
            }
        }
        if zu > 0.0 {
            if hi.is_finite() {
                comp = comp.max((zu * (hi - x[i])).abs());
            } else {
                dual = dual.max(zu);
            }
        }
    }

    KktResiduals {
        stationarity_inf_norm: stat_norm,
        primal_inf_norm: primal.max(0.0),
        dual_inf_norm: dual,
        complementarity_inf_norm: comp,
    }
}

/// One verified condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionCheck {
    pub residual: f64,
    pub passed: bool,
}

impl ConditionCheck {
    fn new(residual: f64, tol: f64) -> Self {
        Self {
            residual,
            passed: residual <= tol,
        }
    }
}

/// Per-condition outcome of [`check_kkt`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub tolerance: f64,
    pub primal_feasibility: ConditionCheck,
    /// Sign conditions: all non-positive-orientation inequality multipliers `<= 0`.
    pub dual_feasibility: ConditionCheck,
    pub complementary_slackness: ConditionCheck,
    /// Zero gradient of the Lagrangian, `c1 + 2 c2 x - A^T lambda + mu_lower - mu_upper`.
    pub stationarity: ConditionCheck,
}

impl KktReport {
    pub fn passed(&self) -> bool {
        self.primal_feasibility.passed
            && self.dual_feasibility.passed
            && self.complementary_slackness.passed
            && self.stationarity.passed
    }
}

/// Verifies primal feasibility, dual sign conditions, complementary slackness
/// and stationarity of `solution` for `problem`.
pub fn check_kkt(problem: &QpProblem, solution: &QpSolution, tol: f64) -> Result<KktReport, QpError> {
    let n = problem.n_vars();
    let m = problem.n_rows();
    dims("primal", n, solution.primal.len())?;
    dims("dual_general", m, solution.dual_general.len())?;
    dims("dual_bounds_lower", n, solution.dual_bounds_lower.len())?;
    dims("dual_bounds_upper", n, solution.dual_bounds_upper.len())?;

    let res = kkt_residuals(
        problem,
        &solution.primal,
        &solution.dual_general,
        &solution.dual_bounds_lower,
        &solution.dual_bounds_upper,
    );
    Ok(KktReport {
        tolerance: tol,
        primal_feasibility: ConditionCheck::new(res.primal_inf_norm, tol),
        dual_feasibility: ConditionCheck::new(res.dual_inf_norm, tol),
        complementary_slackness: ConditionCheck::new(res.complementarity_inf_norm, tol),
        stationarity: ConditionCheck::new(res.stationarity_inf_norm, tol),
    })
}

fn dims(what: &'static str, expected: usize, found: usize) -> Result<(), QpError> {
    if expected == found {
        Ok(())
    } else {
        Err(QpError::DimensionMismatch { what, expected, found })
    }
}

/// Multipliers in the non-positive orientation.
///
/// A ranged row `lo <= a x <= hi` is read as the two inequalities
/// `a x <= hi` and `-a x <= -lo`; an equality row carries one free multiplier
/// for `b - a x`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonPositiveDuals {
    /// Free multipliers of equality rows (`NaN` for non-equality rows).
    pub lambda_equality: Vec<f64>,
    /// Multipliers of `a x <= hi` (0 for equality rows).
    pub lambda_upper: Vec<f64>,
    /// Multipliers of `-a x <= -lo` (0 for equality rows).
    pub lambda_lower: Vec<f64>,
    pub mu_lower: Vec<f64>,
    pub mu_upper: Vec<f64>,
}

impl NonPositiveDuals {
    pub fn from_solution(problem: &QpProblem, solution: &QpSolution) -> Self {
        let m = problem.n_rows();
        let mut lambda_equality = vec![f64::NAN; m];
        let mut lambda_upper = vec![0.0; m];
        let mut lambda_lower = vec![0.0; m];
        for r in 0..m {
            let y = solution.dual_general[r];
            if problem.row_lower[r] == problem.row_upper[r] {
                lambda_equality[r] = to_non_positive(y);
            } else {
                lambda_upper[r] = to_non_positive(y.max(0.0));
                lambda_lower[r] = to_non_positive((-y).max(0.0));
            }
        }
        Self {
            lambda_equality,
            lambda_upper,
            lambda_lower,
            mu_lower: solution.dual_bounds_lower.iter().map(|&z| to_non_positive(z)).collect(),
            mu_upper: solution.dual_bounds_upper.iter().map(|&z| to_non_positive(z)).collect(),
        }
    }
}

/// Converts one multiplier from the internal orientation to the
/// non-positive one. Both conventions differ only by sign.
#[inline]
pub fn to_non_positive(dual: f64) -> f64 {
    -dual
}
