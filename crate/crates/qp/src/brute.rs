//! Exhaustive active-set oracle for small instances.
//!
//! Every combination of binding constraints (at most `n` of them) is turned
//! into an equality-constrained QP and solved exactly. Among the candidates
//! that satisfy all constraints and the dual sign conditions, the one with
//! the lowest objective is returned together with the multipliers of its
//! linear system.

use crate::dense::solve_dense;
use crate::error::QpError;
use crate::kkt::kkt_residuals;
use crate::problem::{QpProblem, QpSolution, Status};

/// Largest `n_vars + n_rows` accepted by [`brute_force_qp`].
pub const BRUTE_FORCE_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Side {
    Lower,
    Upper,
    Equal,
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Row(usize),
    Var(usize),
}

#[derive(Debug, Clone, Copy)]
struct Active {
    target: Target,
    side: Side,
}

struct Candidate {
    x: Vec<f64>,
    y: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    objective: f64,
    dual_feasible: bool,
}

pub fn brute_force_qp(problem: &QpProblem) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let n = problem.n_vars();
    let m = problem.n_rows();
    if n + m > BRUTE_FORCE_LIMIT {
        return Err(QpError::InstanceTooLarge {
            size: n + m,
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    let mut forced = Vec::new();
    let mut optional: Vec<(Target, Vec<Side>)> = Vec::new();
    for r in 0..m {
        let (lo, hi) = (problem.row_lower[r], problem.row_upper[r]);
        if lo == hi {
            forced.push(Active {
                target: Target::Row(r),
                side: Side::Equal,
            });
        } else {
            optional.push((Target::Row(r), sides(lo, hi)));
        }
    }
    for i in 0..n {
        let (lo, hi) = (problem.var_lower[i], problem.var_upper[i]);
        if lo == hi {
            forced.push(Active {
                target: Target::Var(i),
                side: Side::Equal,
            });
        } else {
            optional.push((Target::Var(i), sides(lo, hi)));
        }
    }

    let scale = problem_scale(problem);
    let mut best: Option<Candidate> = None;
    let mut best_primal_only: Option<Candidate> = None;
    let mut chosen = forced.clone();
    enumerate(problem, &optional, 0, &mut chosen, n, scale, &mut |cand| {
        if cand.dual_feasible {
            if best.as_ref().is_none_or(|b| cand.objective < b.objective) {
                best = Some(cand);
            }
        } else if best_primal_only.as_ref().is_none_or(|b| cand.objective < b.objective) {
            best_primal_only = Some(cand);
        }
    });

    match best {
        Some(c) => {
            let residuals = kkt_residuals(problem, &c.x, &c.y, &c.zl, &c.zu);
            Ok(QpSolution {
                status: Status::Optimal,
                objective_value: problem.objective(&c.x),
                primal: c.x,
                dual_general: c.y,
                dual_bounds_lower: c.zl,
                dual_bounds_upper: c.zu,
                kkt_residuals: residuals,
                iterations: 0,
            })
        }
        // Feasible points exist but no KKT point: the objective is unbounded
        // below on the feasible set.
        None if best_primal_only.is_some() => Ok(QpSolution::empty(problem, Status::Unbounded)),
        None => Ok(QpSolution::empty(problem, Status::Infeasible)),
    }
}

fn sides(lo: f64, hi: f64) -> Vec<Side> {
    let mut s = Vec::new();
    if lo.is_finite() {
        s.push(Side::Lower);
    }
    if hi.is_finite() {
        s.push(Side::Upper);
    }
    s
}

fn problem_scale(p: &QpProblem) -> f64 {
    let mut s = 1.0f64;
    for v in p
        .row_lower
        .iter()
        .chain(&p.row_upper)
        .chain(&p.var_lower)
        .chain(&p.var_upper)
        .chain(&p.objective_linear)
    {
        if v.is_finite() {
            s = s.max(v.abs());
        }
    }
    s
}

fn enumerate(
    problem: &QpProblem,
    optional: &[(Target, Vec<Side>)],
    pos: usize,
    chosen: &mut Vec<Active>,
    n: usize,
    scale: f64,
    visit: &mut dyn FnMut(Candidate),
) {
    if pos == optional.len() {
        if let Some(c) = solve_active(problem, chosen, scale) {
            visit(c);
        }
        return;
    }
    enumerate(problem, optional, pos + 1, chosen, n, scale, visit);
    if chosen.len() < n {
        let (target, sides) = &optional[pos];
        for &side in sides {
            chosen.push(Active { target: *target, side });
            enumerate(problem, optional, pos + 1, chosen, n, scale, visit);
            chosen.pop();
        }
    }
}

fn solve_active(problem: &QpProblem, active: &[Active], scale: f64) -> Option<Candidate> {
    let n = problem.n_vars();
    let k = active.len();
    let dim = n + k;
    let mut mat = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    for i in 0..n {
        mat[i * dim + i] = 2.0 * problem.objective_quadratic_diag[i];
        rhs[i] = -problem.objective_linear[i];
    }
    for (a, act) in active.iter().enumerate() {
        let row = n + a;
        let bound = match act.target {
            Target::Row(r) => {
                for (c, v) in problem.constraints.row(r) {
                    mat[row * dim + c] = v;
                    mat[c * dim + row] = v;
                }
                match act.side {
                    Side::Upper => problem.row_upper[r],
                    _ => problem.row_lower[r],
                }
            }
            Target::Var(i) => {
                mat[row * dim + i] = 1.0;
                mat[i * dim + row] = 1.0;
                match act.side {
                    Side::Upper => problem.var_upper[i],
                    _ => problem.var_lower[i],
                }
            }
        };
        rhs[row] = bound;
    }
    let sol = solve_dense(mat, rhs, 1e-11)?;
    let x = sol[..n].to_vec();
    // Stationarity: grad + sum nu_a g_a = 0 with the system written as
    // [2C x + G^T nu = -c1], so multipliers are the raw solution entries.
    let nu = &sol[n..];

    let ftol = 1e-9 * scale;
    let ax = problem.constraints.mul_vec(&x);
    for r in 0..problem.n_rows() {
        if ax[r] < problem.row_lower[r] - ftol || ax[r] > problem.row_upper[r] + ftol {
            return None;
        }
    }
    for i in 0..n {
        if x[i] < problem.var_lower[i] - ftol || x[i] > problem.var_upper[i] + ftol {
            return None;
        }
    }

    let mut y = vec![0.0; problem.n_rows()];
    let mut zl = vec![0.0; n];
    let mut zu = vec![0.0; n];
    let mut dual_feasible = true;
    let dtol = 1e-9 * scale;
    for (a, act) in active.iter().enumerate() {
        let mult = nu[a];
        match act.target {
            Target::Row(r) => {
                y[r] = mult;
                match act.side {
                    Side::Upper if mult < -dtol => dual_feasible = false,
                    Side::Lower if mult > dtol => dual_feasible = false,
                    _ => {}
                }
            }
            Target::Var(i) => match act.side {
                Side::Lower => {
                    zl[i] = -mult;
                    if -mult < -dtol {
                        dual_feasible = false;
                    }
                }
                Side::Upper => {
                    zu[i] = mult;
                    if mult < -dtol {
                        dual_feasible = false;
                    }
                }
                Side::Equal => {
                    if mult >= 0.0 {
                        zu[i] = mult;
                    } else {
                        zl[i] = -mult;
                    }
                }
            },
        }
    }
    Some(Candidate {
        objective: problem.objective(&x),
        x,
        y,
        zl,
        zu,
        dual_feasible,
    })
}
