//! Primal-dual interior point method (Mehrotra predictor-corrector).
//!
//! The problem is brought to the bounded standard form
//!
//! ```text
//!     minimize    1/2 v^T H v + c^T v
//!     subject to  E v = b,  l <= v <= u
//! ```
//!
//! where `v` stacks the non-fixed original variables and one slack per ranged
//! row (`a x - w = 0`, `lo <= w <= hi`). Bound slacks are explicit so the
//! iteration may start outside the bounds. Every Newton system is the
//! quasi-definite KKT matrix `[[H + S + rho, E^T], [E, -delta]]` factored with
//! the envelope LDL^T. Each iteration keeps the better of the Mehrotra
//! corrector and a plain centered step, then applies up to three Gondzio
//! centrality correctors. Once the iterates are close, an active-set polish
//! solves the reduced equality system exactly and is accepted when it
//! certifies optimality to the requested tolerance.

use crate::error::QpError;
use crate::kkt::kkt_residuals;
use crate::ldl::EnvelopeLdl;
use crate::problem::{KktResiduals, QpProblem, QpSolution, SolverSettings, Status};

const PRIMAL_REG: f64 = 1e-9;
const DUAL_REG: f64 = 1e-9;
const DYN_EPS: f64 = 1e-14;
const DYN_REG: f64 = 1e-8;
const POLISH_REG: f64 = 1e-8;
const STEP_FRACTION: f64 = 0.995;
const GONDZIO_CORRECTORS: usize = 3;
const STALL_LIMIT: usize = 8;
const DIVERGENCE: f64 = 1e12;
const STALL_DIVERGENCE: f64 = 1e6;

/// Solves a convex separable QP.
///
/// Returns `Err` only for malformed input; infeasibility, unboundedness and
/// exhausted iterations are reported in [`QpSolution::status`].
pub fn solve_qp(problem: &QpProblem, settings: &SolverSettings) -> Result<QpSolution, QpError> {
    problem.validate()?;
    settings.validate()?;

    let presolved = match Presolved::new(problem, settings.abs_tol.max(1e-9)) {
        Some(p) => p,
        None => return Ok(QpSolution::empty(problem, Status::Infeasible)),
    };

    if presolved.std.nv == 0 {
        let sol = presolved.recover(problem, &[], &[], &[], &[]);
        return Ok(finish(problem, settings, sol, Status::Optimal, 0));
    }

    let scaled = Scaling::ruiz(&presolved.std);
    let mut ipm = Ipm::new(&scaled.form);
    let outcome = ipm.run(problem, &presolved, &scaled, settings);
    Ok(outcome)
}

fn finish(
    problem: &QpProblem,
    settings: &SolverSettings,
    sol: RawSolution,
    status: Status,
    iterations: usize,
) -> QpSolution {
    let residuals = kkt_residuals(problem, &sol.x, &sol.y, &sol.zl, &sol.zu);
    let status = if status == Status::Optimal && !within_tolerance(problem, settings, &sol, &residuals) {
        Status::IterLimit
    } else {
        status
    };
    QpSolution {
        status,
        objective_value: problem.objective(&sol.x),
        primal: sol.x,
        dual_general: sol.y,
        dual_bounds_lower: sol.zl,
        dual_bounds_upper: sol.zu,
        kkt_residuals: residuals,
        iterations,
    }
}

/// Absolute-plus-relative acceptance test in the original problem space.
fn within_tolerance(problem: &QpProblem, settings: &SolverSettings, sol: &RawSolution, res: &KktResiduals) -> bool {
    let inf = |v: &[f64]| v.iter().filter(|x| x.is_finite()).fold(0.0f64, |a, x| a.max(x.abs()));
    let ax = problem.constraints.mul_vec(&sol.x);
    let primal_scale = inf(&ax)
        .max(inf(&problem.row_lower))
        .max(inf(&problem.row_upper))
        .max(inf(&sol.x));
    let grad = problem.gradient(&sol.x);
    let aty = problem.constraints.mul_transpose_vec(&sol.y);
    let dual_scale = inf(&grad)
        .max(inf(&problem.objective_linear))
        .max(inf(&aty))
        .max(inf(&sol.zl))
        .max(inf(&sol.zu));
    let comp_scale = primal_scale.max(1.0) * dual_scale.max(1.0);
    let tol = |scale: f64| settings.abs_tol + settings.rel_tol * scale;
    res.primal_inf_norm <= tol(primal_scale)
        && res.stationarity_inf_norm <= tol(dual_scale)
        && res.dual_inf_norm <= tol(dual_scale)
        && res.complementarity_inf_norm <= tol(comp_scale)
}

/// Primal-dual point in the original variable space.
#[derive(Debug, Clone)]
struct RawSolution {
    x: Vec<f64>,
    y: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
}

/// Standard-form data.
#[derive(Debug, Clone)]
struct StdForm {
    nv: usize,
    h: Vec<f64>,
    c: Vec<f64>,
    l: Vec<f64>,
    u: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
}

impl StdForm {
    fn me(&self) -> usize {
        self.rows.len()
    }

    fn e_mul(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(k, a)| a * v[k]).sum())
            .collect()
    }

    fn et_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nv];
        for (row, &yj) in self.rows.iter().zip(y) {
            if yj != 0.0 {
                for &(k, a) in row {
                    out[k] += a * yj;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum RowKind {
    Dropped,
    Equality(usize),
    Ranged(usize),
}

/// Fixed-variable elimination, ranged-row slacks and cheap infeasibility checks.
struct Presolved {
    std: StdForm,
    /// standard-form column of each original variable, `None` when fixed
    col_of: Vec<Option<usize>>,
    rows: Vec<RowKind>,
}

impl Presolved {
    fn new(problem: &QpProblem, tol: f64) -> Option<Self> {
        let n = problem.n_vars();
        let a = &problem.constraints;
        let (vl, vu) = (&problem.var_lower, &problem.var_upper);

        // Implied bounds from singleton rows and activity ranges.
        let mut lo_imp = vl.clone();
        let mut hi_imp = vu.clone();
        for r in 0..problem.n_rows() {
            if a.row_nnz(r) == 1 {
                let (c, v) = a.row(r).next().unwrap();
                let (mut l, mut h) = (problem.row_lower[r] / v, problem.row_upper[r] / v);
                if v < 0.0 {
                    std::mem::swap(&mut l, &mut h);
                }
                lo_imp[c] = lo_imp[c].max(l);
                hi_imp[c] = hi_imp[c].min(h);
            }
        }
        for i in 0..n {
            if lo_imp[i] > hi_imp[i] + tol * (1.0 + lo_imp[i].abs().max(hi_imp[i].abs())) {
                return None;
            }
        }
        for r in 0..problem.n_rows() {
            let (mut amin, mut amax) = (0.0f64, 0.0f64);
            for (c, v) in a.row(r) {
                let (l, h) = (lo_imp[c], hi_imp[c]);
                if v > 0.0 {
                    amin += v * l;
                    amax += v * h;
                } else {
                    amin += v * h;
                    amax += v * l;
                }
            }
            let slack = tol * (1.0 + amin.abs().min(amax.abs()).min(1e12));
            if amax < problem.row_lower[r] - slack || amin > problem.row_upper[r] + slack {
                return None;
            }
        }

        let mut col_of = vec![None; n];
        let mut nf = 0;
        for i in 0..n {
            if vl[i] != vu[i] {
                col_of[i] = Some(nf);
                nf += 1;
            }
        }
        let mut h = Vec::with_capacity(nf);
        let mut c = Vec::with_capacity(nf);
        let mut l = Vec::with_capacity(nf);
        let mut u = Vec::with_capacity(nf);
        for i in 0..n {
            if col_of[i].is_some() {
                h.push(2.0 * problem.objective_quadratic_diag[i]);
                c.push(problem.objective_linear[i]);
                l.push(vl[i]);
                u.push(vu[i]);
            }
        }

        let mut rows = Vec::new();
        let mut b = Vec::new();
        let mut kinds = Vec::with_capacity(problem.n_rows());
        for r in 0..problem.n_rows() {
            let mut offset = 0.0;
            let mut entries = Vec::new();
            for (col, v) in a.row(r) {
                match col_of[col] {
                    Some(k) => entries.push((k, v)),
                    None => offset += v * vl[col],
                }
            }
            let (lo, hi) = (problem.row_lower[r], problem.row_upper[r]);
            if entries.is_empty() {
                let slack = tol * (1.0 + offset.abs());
                if offset < lo - slack || offset > hi + slack {
                    return None;
                }
                kinds.push(RowKind::Dropped);
            } else if lo == hi {
                kinds.push(RowKind::Equality(rows.len()));
                rows.push(entries);
                b.push(lo - offset);
            } else {
                let w = h.len();
                h.push(0.0);
                c.push(0.0);
                l.push(lo - offset);
                u.push(hi - offset);
                entries.push((w, -1.0));
                kinds.push(RowKind::Ranged(rows.len()));
                rows.push(entries);
                b.push(0.0);
            }
        }
        let nv = h.len();
        Some(Self {
            std: StdForm {
                nv,
                h,
                c,
                l,
                u,
                rows,
                b,
            },
            col_of,
            rows: kinds,
        })
    }

    /// Maps a standard-form point (unscaled) back to the original problem.
    fn recover(&self, problem: &QpProblem, v: &[f64], y_e: &[f64], zl: &[f64], zu: &[f64]) -> RawSolution {
        let n = problem.n_vars();
        let x: Vec<f64> = (0..n)
            .map(|i| match self.col_of[i] {
                Some(k) => v[k],
                None => problem.var_lower[i],
            })
            .collect();
        let y: Vec<f64> = self
            .rows
            .iter()
            .map(|kind| match kind {
                RowKind::Dropped => 0.0,
                RowKind::Equality(j) | RowKind::Ranged(j) => -y_e[*j],
            })
            .collect();
        let mut z_lower = vec![0.0; n];
        let mut z_upper = vec![0.0; n];
        let grad = problem.gradient(&x);
        let aty = problem.constraints.mul_transpose_vec(&y);
        for i in 0..n {
            match self.col_of[i] {
                Some(k) => {
                    z_lower[i] = zl[k];
                    z_upper[i] = zu[k];
                }
                None => {
                    let r = grad[i] + aty[i];
                    if r >= 0.0 {
                        z_lower[i] = r;
                    } else {
                        z_upper[i] = -r;
                    }
                }
            }
        }
        RawSolution {
            x,
            y,
            zl: z_lower,
            zu: z_upper,
        }
    }
}

/// Ruiz equilibration of the constraint matrix plus one objective factor
/// that brings both the Hessian diagonal and the linear term to unit size.
struct Scaling {
    form: StdForm,
    col: Vec<f64>,
    row: Vec<f64>,
    cost: f64,
}

impl Scaling {
    fn ruiz(std: &StdForm) -> Self {
        let nv = std.nv;
        let me = std.me();
        let mut col = vec![1.0; nv];
        let mut row = vec![1.0; me];
        for _ in 0..15 {
            let mut cmax = vec![0.0f64; nv];
            let mut rmax = vec![0.0f64; me];
            for (j, r) in std.rows.iter().enumerate() {
                for &(k, a) in r {
                    let v = (a * row[j] * col[k]).abs();
                    cmax[k] = cmax[k].max(v);
                    rmax[j] = rmax[j].max(v);
                }
            }
            let mut done = true;
            for k in 0..nv {
                if cmax[k] > 0.0 {
                    let f = 1.0 / cmax[k].sqrt();
                    if (f - 1.0).abs() > 1e-3 {
                        done = false;
                    }
                    col[k] = (col[k] * f).clamp(1e-6, 1e6);
                }
            }
            for j in 0..me {
                if rmax[j] > 0.0 {
                    let f = 1.0 / rmax[j].sqrt();
                    if (f - 1.0).abs() > 1e-3 {
                        done = false;
                    }
                    row[j] = (row[j] * f).clamp(1e-6, 1e6);
                }
            }
            if done {
                break;
            }
        }
        let mut cmax = 0.0f64;
        for k in 0..nv {
            cmax = cmax
                .max((std.c[k] * col[k]).abs())
                .max((std.h[k] * col[k] * col[k]).abs());
        }
        let cost = if cmax > 0.0 { (1.0 / cmax).clamp(1e-8, 1e8) } else { 1.0 };

        let form = StdForm {
            nv,
            h: (0..nv).map(|k| std.h[k] * col[k] * col[k] * cost).collect(),
            c: (0..nv).map(|k| std.c[k] * col[k] * cost).collect(),
            l: (0..nv).map(|k| std.l[k] / col[k]).collect(),
            u: (0..nv).map(|k| std.u[k] / col[k]).collect(),
            rows: std
                .rows
                .iter()
                .enumerate()
                .map(|(j, r)| r.iter().map(|&(k, a)| (k, a * row[j] * col[k])).collect())
                .collect(),
            b: (0..me).map(|j| std.b[j] * row[j]).collect(),
        };
        Self { form, col, row, cost }
    }

    /// Scaled standard-form point to unscaled standard-form point.
    fn unscale(&self, v: &[f64], y: &[f64], zl: &[f64], zu: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let nv = self.col.len();
        let v_out = (0..nv).map(|k| v[k] * self.col[k]).collect();
        let y_out = (0..y.len()).map(|j| y[j] * self.row[j] / self.cost).collect();
        let zl_out = (0..nv).map(|k| zl[k] / (self.col[k] * self.cost)).collect();
        let zu_out = (0..nv).map(|k| zu[k] / (self.col[k] * self.cost)).collect();
        (v_out, y_out, zl_out, zu_out)
    }
}

/// Iterate state of the interior point method on the scaled form.
struct Ipm<'a> {
    f: &'a StdForm,
    has_l: Vec<bool>,
    has_u: Vec<bool>,
    v: Vec<f64>,
    y: Vec<f64>,
    sl: Vec<f64>,
    su: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    ldl: EnvelopeLdl,
    offdiag: Vec<f64>,
    n_comp: usize,
    linear: bool,
}

struct Step {
    dv: Vec<f64>,
    dy: Vec<f64>,
    dsl: Vec<f64>,
    dsu: Vec<f64>,
    dzl: Vec<f64>,
    dzu: Vec<f64>,
    ap: f64,
    ad: f64,
    mu_new: f64,
}

struct Residuals {
    rd: Vec<f64>,
    rp: Vec<f64>,
    rl: Vec<f64>,
    ru: Vec<f64>,
    mu: f64,
    pres: f64,
    dres: f64,
}

impl<'a> Ipm<'a> {
    fn new(f: &'a StdForm) -> Self {
        let nv = f.nv;
        let me = f.me();
        let has_l: Vec<bool> = f.l.iter().map(|v| v.is_finite()).collect();
        let has_u: Vec<bool> = f.u.iter().map(|v| v.is_finite()).collect();
        let mut pattern = Vec::new();
        let mut offdiag = Vec::new();
        for (j, r) in f.rows.iter().enumerate() {
            for &(k, a) in r {
                pattern.push((nv + j, k));
                offdiag.push(a);
            }
        }
        let positive: Vec<bool> = (0..nv + me).map(|i| i < nv).collect();
        let ldl = EnvelopeLdl::analyze(nv + me, &pattern, &positive);
        let n_comp = has_l.iter().filter(|&&b| b).count() + has_u.iter().filter(|&&b| b).count();
        let linear = f.h.iter().all(|&h| h == 0.0);
        let mut ipm = Self {
            f,
            v: vec![0.0; nv],
            y: vec![0.0; me],
            sl: vec![0.0; nv],
            su: vec![0.0; nv],
            zl: vec![0.0; nv],
            zu: vec![0.0; nv],
            has_l,
            has_u,
            ldl,
            offdiag,
            n_comp,
            linear,
        };
        ipm.initialize();
        ipm
    }

    fn initialize(&mut self) {
        let f = self.f;
        let nv = f.nv;
        // Least-squares start: minimize 1/2 v^T (H + I) v + c^T v s.t. E v = b,
        // with the reference point pulled inside the bounds.
        let reference: Vec<f64> = (0..nv)
            .map(|k| {
                let (l, u) = (f.l[k], f.u[k]);
                match (self.has_l[k], self.has_u[k]) {
                    (true, true) => 0.5 * (l + u),
                    (true, false) => l.max(0.0) + 1.0,
                    (false, true) => u.min(0.0) - 1.0,
                    (false, false) => 0.0,
                }
            })
            .collect();
        let diag: Vec<f64> = (0..nv)
            .map(|k| f.h[k] + 1.0)
            .chain(std::iter::repeat_n(-DUAL_REG, f.me()))
            .collect();
        self.ldl.factor(&diag, &self.offdiag, DYN_EPS, DYN_REG);
        let rhs: Vec<f64> = (0..nv)
            .map(|k| reference[k] - f.c[k])
            .chain(f.b.iter().copied())
            .collect();
        let sol = self.ldl.solve(&rhs);
        self.v = sol[..nv].to_vec();

        // Mehrotra-style shift: raw slacks and gradient-based multipliers are
        // moved into the positive orthant and balanced against each other.
        let g: Vec<f64> = (0..nv).map(|k| f.h[k] * self.v[k] + f.c[k]).collect();
        for k in 0..nv {
            if self.has_l[k] {
                self.sl[k] = self.v[k] - f.l[k];
                self.zl[k] = if self.has_u[k] { g[k].max(0.0) } else { g[k] };
            }
            if self.has_u[k] {
                self.su[k] = f.u[k] - self.v[k];
                self.zu[k] = if self.has_l[k] { (-g[k]).max(0.0) } else { -g[k] };
            }
        }
        let pairs = || (0..nv).flat_map(|k| [(self.has_l[k], k, true), (self.has_u[k], k, false)]);
        let (mut smin, mut zmin) = (f64::INFINITY, f64::INFINITY);
        for (on, k, lower) in pairs() {
            if on {
                let (s, z) = if lower {
                    (self.sl[k], self.zl[k])
                } else {
                    (self.su[k], self.zu[k])
                };
                smin = smin.min(s);
                zmin = zmin.min(z);
            }
        }
        if self.n_comp == 0 {
            return;
        }
        let ds = (-1.5 * smin).max(0.0);
        let dz = (-1.5 * zmin).max(0.0);
        let (mut dot, mut ssum, mut zsum) = (0.0, 0.0, 0.0);
        for (on, k, lower) in pairs() {
            if on {
                let (s, z) = if lower {
                    (self.sl[k], self.zl[k])
                } else {
                    (self.su[k], self.zu[k])
                };
                let (s, z) = (s + ds, z + dz);
                dot += s * z;
                ssum += s;
                zsum += z;
            }
        }
        let (ds2, dz2) = if dot > 0.0 {
            (0.5 * dot / zsum, 0.5 * dot / ssum)
        } else {
            (1.0, 1.0)
        };
        let floor = 1e-2;
        for k in 0..nv {
            if self.has_l[k] {
                self.sl[k] = (self.sl[k] + ds + ds2).max(floor);
                self.zl[k] = (self.zl[k] + dz + dz2).max(floor);
            }
            if self.has_u[k] {
                self.su[k] = (self.su[k] + ds + ds2).max(floor);
                self.zu[k] = (self.zu[k] + dz + dz2).max(floor);
            }
        }
    }

    fn residuals(&self) -> Residuals {
        let f = self.f;
        let nv = f.nv;
        let ety = f.et_mul(&self.y);
        let rd: Vec<f64> = (0..nv)
            .map(|k| f.h[k] * self.v[k] + f.c[k] - ety[k] - self.zl[k] + self.zu[k])
            .collect();
        let ev = f.e_mul(&self.v);
        let rp: Vec<f64> = ev.iter().zip(&f.b).map(|(a, b)| a - b).collect();
        let rl: Vec<f64> = (0..nv)
            .map(|k| {
                if self.has_l[k] {
                    self.v[k] - f.l[k] - self.sl[k]
                } else {
                    0.0
                }
            })
            .collect();
        let ru: Vec<f64> = (0..nv)
            .map(|k| {
                if self.has_u[k] {
                    f.u[k] - self.v[k] - self.su[k]
                } else {
                    0.0
                }
            })
            .collect();
        let mu = if self.n_comp > 0 {
            (0..nv)
                .map(|k| self.sl[k] * self.zl[k] + self.su[k] * self.zu[k])
                .sum::<f64>()
                / self.n_comp as f64
        } else {
            0.0
        };
        let inf = |x: &[f64]| x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let pres = inf(&rp).max(inf(&rl)).max(inf(&ru));
        let dres = inf(&rd);
        Residuals {
            rd,
            rp,
            rl,
            ru,
            mu,
            pres,
            dres,
        }
    }

    fn kkt_mul(&self, sigma: &[f64], a: &[f64]) -> Vec<f64> {
        let f = self.f;
        let nv = f.nv;
        let mut out = vec![0.0; nv + f.me()];
        for k in 0..nv {
            out[k] = (f.h[k] + sigma[k]) * a[k];
        }
        for (j, row) in f.rows.iter().enumerate() {
            let mut s = 0.0;
            for &(k, e) in row {
                s += e * a[k];
                out[k] += e * a[nv + j];
            }
            out[nv + j] = s;
        }
        out
    }

    fn solve_refined(&self, sigma: &[f64], rhs: &[f64]) -> Vec<f64> {
        let mut sol = self.ldl.solve(rhs);
        let norm = |x: &[f64]| x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut best = f64::INFINITY;
        for _ in 0..4 {
            let k = self.kkt_mul(sigma, &sol);
            let r: Vec<f64> = rhs.iter().zip(&k).map(|(a, b)| a - b).collect();
            let rn = norm(&r);
            if rn >= best * 0.9 || rn <= 1e-15 * (1.0 + norm(rhs)) {
                break;
            }
            best = rn;
            let d = self.ldl.solve(&r);
            sol.iter_mut().zip(&d).for_each(|(s, di)| *s += di);
        }
        sol
    }

    /// Newton direction for the given complementarity targets.
    fn direction(
        &self,
        res: &Residuals,
        sigma: &[f64],
        rcl: &[f64],
        rcu: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let f = self.f;
        let nv = f.nv;
        let mut rhs = vec![0.0; nv + f.me()];
        for k in 0..nv {
            let mut r = -res.rd[k];
            if self.has_l[k] {
                r += (rcl[k] - self.zl[k] * res.rl[k]) / self.sl[k];
            }
            if self.has_u[k] {
                r -= (rcu[k] - self.zu[k] * res.ru[k]) / self.su[k];
            }
            rhs[k] = r;
        }
        for j in 0..f.me() {
            rhs[nv + j] = -res.rp[j];
        }
        let sol = self.solve_refined(sigma, &rhs);
        let dv = sol[..nv].to_vec();
        let dy: Vec<f64> = sol[nv..].iter().map(|v| -v).collect();
        let mut dsl = vec![0.0; nv];
        let mut dsu = vec![0.0; nv];
        let mut dzl = vec![0.0; nv];
        let mut dzu = vec![0.0; nv];
        for k in 0..nv {
            if self.has_l[k] {
                dsl[k] = dv[k] + res.rl[k];
                dzl[k] = (rcl[k] - self.zl[k] * dsl[k]) / self.sl[k];
            }
            if self.has_u[k] {
                dsu[k] = -dv[k] + res.ru[k];
                dzu[k] = (rcu[k] - self.zu[k] * dsu[k]) / self.su[k];
            }
        }
        (dv, dy, dsl, dsu, dzl, dzu)
    }

    fn max_step(&self, x: &[f64], dx: &[f64], mask: &[bool]) -> f64 {
        let mut alpha = 1.0f64;
        for k in 0..x.len() {
            if mask[k] && dx[k] < 0.0 {
                alpha = alpha.min(-x[k] / dx[k]);
            }
        }
        alpha
    }

    fn corrected_step(
        &self,
        res: &Residuals,
        sigma_diag: &[f64],
        target: f64,
        second_order: Option<(&[f64], &[f64], &[f64], &[f64])>,
    ) -> Step {
        let nv = self.f.nv;
        let mut rcl = vec![0.0; nv];
        let mut rcu = vec![0.0; nv];
        for k in 0..nv {
            if self.has_l[k] {
                rcl[k] = target - self.sl[k] * self.zl[k];
            }
            if self.has_u[k] {
                rcu[k] = target - self.su[k] * self.zu[k];
            }
            if let Some((dsl, dsu, dzl, dzu)) = second_order {
                rcl[k] -= dsl[k] * dzl[k];
                rcu[k] -= dsu[k] * dzu[k];
            }
        }
        let (dv, dy, dsl, dsu, dzl, dzu) = self.direction(res, sigma_diag, &rcl, &rcu);
        let ap = self
            .max_step(&self.sl, &dsl, &self.has_l)
            .min(self.max_step(&self.su, &dsu, &self.has_u));
        let ad = self
            .max_step(&self.zl, &dzl, &self.has_l)
            .min(self.max_step(&self.zu, &dzu, &self.has_u));
        let (ap, ad) = if self.linear {
            ((STEP_FRACTION * ap).min(1.0), (STEP_FRACTION * ad).min(1.0))
        } else {
            let a = (STEP_FRACTION * ap.min(ad)).min(1.0);
            (a, a)
        };
        let mut mu_new = 0.0;
        for k in 0..nv {
            if self.has_l[k] {
                mu_new += (self.sl[k] + ap * dsl[k]) * (self.zl[k] + ad * dzl[k]);
            }
            if self.has_u[k] {
                mu_new += (self.su[k] + ap * dsu[k]) * (self.zu[k] + ad * dzu[k]);
            }
        }
        let mu_new = if self.n_comp > 0 {
            mu_new / self.n_comp as f64
        } else {
            0.0
        };
        Step {
            dv,
            dy,
            dsl,
            dsu,
            dzl,
            dzu,
            ap,
            ad,
            mu_new,
        }
    }

    /// Gondzio centrality correction: pulls the complementarity products of
    /// a trial step back into `[0.1, 10] * target` and keeps the correction
    /// when it lengthens the step.
    fn centrality_correct(&self, mut step: Step, sigma_diag: &[f64], target: f64) -> Step {
        let nv = self.f.nv;
        let zero = Residuals {
            rd: vec![0.0; nv],
            rp: vec![0.0; self.f.me()],
            rl: vec![0.0; nv],
            ru: vec![0.0; nv],
            mu: 0.0,
            pres: 0.0,
            dres: 0.0,
        };
        for _ in 0..GONDZIO_CORRECTORS {
            let a = step.ap.min(step.ad);
            if a >= 1.0 {
                break;
            }
            let trial = (a + 0.3).min(1.0);
            let clip = |s: f64, ds: f64, z: f64, dz: f64| {
                let v = (s + trial * ds) * (z + trial * dz);
                let t = v.clamp(0.1 * target, 10.0 * target);
                (t - v).max(-10.0 * target)
            };
            let mut rcl = vec![0.0; nv];
            let mut rcu = vec![0.0; nv];
            for k in 0..nv {
                if self.has_l[k] {
                    rcl[k] = clip(self.sl[k], step.dsl[k], self.zl[k], step.dzl[k]);
                }
                if self.has_u[k] {
                    rcu[k] = clip(self.su[k], step.dsu[k], self.zu[k], step.dzu[k]);
                }
            }
            let (dv, dy, dsl, dsu, dzl, dzu) = self.direction(&zero, sigma_diag, &rcl, &rcu);
            let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f64>>();
            let cand_dsl = add(&step.dsl, &dsl);
            let cand_dsu = add(&step.dsu, &dsu);
            let cand_dzl = add(&step.dzl, &dzl);
            let cand_dzu = add(&step.dzu, &dzu);
            let ap =
                self.max_step(&self.sl, &cand_dsl, &self.has_l)
                    .min(self.max_step(&self.su, &cand_dsu, &self.has_u));
            let ad =
                self.max_step(&self.zl, &cand_dzl, &self.has_l)
                    .min(self.max_step(&self.zu, &cand_dzu, &self.has_u));
            let (ap, ad) = if self.linear {
                ((STEP_FRACTION * ap).min(1.0), (STEP_FRACTION * ad).min(1.0))
            } else {
                let a = (STEP_FRACTION * ap.min(ad)).min(1.0);
                (a, a)
            };
            if ap.min(ad) < 1.01 * a {
                break;
            }
            step = Step {
                dv: add(&step.dv, &dv),
                dy: add(&step.dy, &dy),
                dsl: cand_dsl,
                dsu: cand_dsu,
                dzl: cand_dzl,
                dzu: cand_dzu,
                ap,
                ad,
                mu_new: 0.0,
            };
        }
        step
    }

    fn run(
        &mut self,
        problem: &QpProblem,
        pre: &Presolved,
        scaling: &Scaling,
        settings: &SolverSettings,
    ) -> QpSolution {
        let nv = self.f.nv;
        let b_norm = self.f.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let c_norm = self.f.c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut polish_mu = f64::INFINITY;
        let mut last_candidate: Option<RawSolution> = None;
        let mut stall = 0usize;
        let mut prev_merit = f64::INFINITY;

        for iter in 0..settings.max_iterations {
            let res = self.residuals();

            let ptol = 1e-9 * (1.0 + b_norm);
            let dtol = 1e-9 * (1.0 + c_norm);
            let near = res.pres <= 1e3 * ptol && res.dres <= 1e3 * dtol && res.mu <= 1e-6;
            if near && res.mu < 0.01 * polish_mu {
                polish_mu = res.mu;
                if let Some(sol) = self.polish(problem, pre, scaling, settings) {
                    return finish(problem, settings, sol, Status::Optimal, iter);
                }
            }
            let v_norm = self.v.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let dual_norm = self
                .y
                .iter()
                .chain(&self.zl)
                .chain(&self.zu)
                .fold(0.0f64, |a, v| a.max(v.abs()));
            let diverged = |limit: f64| {
                if dual_norm > limit * (1.0 + c_norm) && res.pres > ptol {
                    Some(Status::Infeasible)
                } else if v_norm > limit * (1.0 + b_norm) && res.dres > dtol {
                    Some(Status::Unbounded)
                } else {
                    None
                }
            };
            if let Some(status) = diverged(DIVERGENCE) {
                return QpSolution {
                    iterations: iter,
                    ..QpSolution::empty(problem, status)
                };
            }

            let converged = res.pres <= ptol && res.dres <= dtol && res.mu <= 1e-12;
            if converged || stall >= STALL_LIMIT {
                let sol = self.current(problem, pre, scaling);
                let residuals = kkt_residuals(problem, &sol.x, &sol.y, &sol.zl, &sol.zu);
                if within_tolerance(problem, settings, &sol, &residuals) {
                    return finish(problem, settings, sol, Status::Optimal, iter);
                }
                if let Some(sol) = self.polish(problem, pre, scaling, settings) {
                    return finish(problem, settings, sol, Status::Optimal, iter);
                }
                if stall >= STALL_LIMIT {
                    if let Some(status) = diverged(STALL_DIVERGENCE) {
                        return QpSolution {
                            iterations: iter,
                            ..QpSolution::empty(problem, status)
                        };
                    }
                    return finish(problem, settings, sol, Status::IterLimit, iter);
                }
                last_candidate = Some(sol);
            }

            let merit = res.pres.max(res.dres).max(res.mu);
            if merit >= 0.999 * prev_merit {
                stall += 1;
            } else {
                stall = 0;
            }
            prev_merit = prev_merit.min(merit);

            // Newton system
            let sigma_diag: Vec<f64> = (0..nv)
                .map(|k| {
                    let mut s = 0.0;
                    if self.has_l[k] {
                        s += self.zl[k] / self.sl[k];
                    }
                    if self.has_u[k] {
                        s += self.zu[k] / self.su[k];
                    }
                    s
                })
                .collect();
            let diag: Vec<f64> = (0..nv)
                .map(|k| self.f.h[k] + sigma_diag[k] + PRIMAL_REG)
                .chain(std::iter::repeat_n(-DUAL_REG, self.f.me()))
                .collect();
            self.ldl.factor(&diag, &self.offdiag, DYN_EPS, DYN_REG);

            // predictor
            let rcl: Vec<f64> = (0..nv).map(|k| -self.sl[k] * self.zl[k]).collect();
            let rcu: Vec<f64> = (0..nv).map(|k| -self.su[k] * self.zu[k]).collect();
            let (_, _, dsl_a, dsu_a, dzl_a, dzu_a) = self.direction(&res, &sigma_diag, &rcl, &rcu);
            let ap = self
                .max_step(&self.sl, &dsl_a, &self.has_l)
                .min(self.max_step(&self.su, &dsu_a, &self.has_u));
            let ad = self
                .max_step(&self.zl, &dzl_a, &self.has_l)
                .min(self.max_step(&self.zu, &dzu_a, &self.has_u));
            let (ap, ad) = if self.linear {
                (ap, ad)
            } else {
                (ap.min(ad), ap.min(ad))
            };
            let sigma = if self.n_comp > 0 && res.mu > 0.0 {
                let mut mu_aff = 0.0;
                for k in 0..nv {
                    if self.has_l[k] {
                        mu_aff += (self.sl[k] + ap * dsl_a[k]) * (self.zl[k] + ad * dzl_a[k]);
                    }
                    if self.has_u[k] {
                        mu_aff += (self.su[k] + ap * dsu_a[k]) * (self.zu[k] + ad * dzu_a[k]);
                    }
                }
                mu_aff /= self.n_comp as f64;
                (mu_aff / res.mu).powi(3).clamp(0.0, 1.0)
            } else {
                0.0
            };

            // Mehrotra corrector, compared against a plain centered step; the
            // second-order term can stall on boxed variables.
            let residual = res.pres.max(res.dres);
            let score = |st: &Step| ((1.0 - st.ap.min(st.ad)) * residual).max(st.mu_new);
            let corrected = self.corrected_step(
                &res,
                &sigma_diag,
                sigma * res.mu,
                Some((&dsl_a, &dsu_a, &dzl_a, &dzu_a)),
            );
            let centered = self.corrected_step(&res, &sigma_diag, sigma.max(0.1) * res.mu, None);
            let step = if self.n_comp == 0 || score(&corrected) <= score(&centered) {
                corrected
            } else {
                centered
            };
            let step = if self.n_comp > 0 {
                self.centrality_correct(step, &sigma_diag, sigma.max(0.1) * res.mu)
            } else {
                step
            };
            let Step {
                dv,
                dy,
                dsl,
                dsu,
                dzl,
                dzu,
                ap,
                ad,
                ..
            } = step;

            for k in 0..nv {
                self.v[k] += ap * dv[k];
                if self.has_l[k] {
                    self.sl[k] = (self.sl[k] + ap * dsl[k]).max(1e-300);
                    self.zl[k] = (self.zl[k] + ad * dzl[k]).max(1e-300);
                }
                if self.has_u[k] {
                    self.su[k] = (self.su[k] + ap * dsu[k]).max(1e-300);
                    self.zu[k] = (self.zu[k] + ad * dzu[k]).max(1e-300);
                }
            }
            for (yj, dyj) in self.y.iter_mut().zip(&dy) {
                *yj += ad * dyj;
            }
        }

        let sol = last_candidate.unwrap_or_else(|| self.current(problem, pre, scaling));
        if let Some(polished) = self.polish(problem, pre, scaling, settings) {
            return finish(problem, settings, polished, Status::Optimal, settings.max_iterations);
        }
        finish(problem, settings, sol, Status::IterLimit, settings.max_iterations)
    }

    fn current(&self, problem: &QpProblem, pre: &Presolved, scaling: &Scaling) -> RawSolution {
        let nv = self.f.nv;
        let zl: Vec<f64> = (0..nv).map(|k| if self.has_l[k] { self.zl[k] } else { 0.0 }).collect();
        let zu: Vec<f64> = (0..nv).map(|k| if self.has_u[k] { self.zu[k] } else { 0.0 }).collect();
        // Use the bound-projected primal so that bounds hold exactly.
        let v: Vec<f64> = (0..nv).map(|k| self.v[k].clamp(self.f.l[k], self.f.u[k])).collect();
        let (v, y, zl, zu) = scaling.unscale(&v, &self.y, &zl, &zu);
        pre.recover(problem, &v, &y, &zl, &zu)
    }

    /// Solves the equality system implied by the current active-set guess
    /// and returns it when it certifies optimality.
    fn polish(
        &self,
        problem: &QpProblem,
        pre: &Presolved,
        scaling: &Scaling,
        settings: &SolverSettings,
    ) -> Option<RawSolution> {
        let f = self.f;
        let nv = f.nv;
        let me = f.me();
        // 0 free, 1 at lower, 2 at upper
        let state: Vec<u8> = (0..nv)
            .map(|k| {
                let lower = self.has_l[k] && self.sl[k] < self.zl[k];
                let upper = self.has_u[k] && self.su[k] < self.zu[k];
                match (lower, upper) {
                    (true, true) => {
                        if self.zl[k] >= self.zu[k] {
                            1
                        } else {
                            2
                        }
                    }
                    (true, false) => 1,
                    (false, true) => 2,
                    _ => 0,
                }
            })
            .collect();
        let mut v = vec![0.0; nv];
        let mut idx = vec![usize::MAX; nv];
        let mut nfree = 0;
        for k in 0..nv {
            match state[k] {
                1 => v[k] = f.l[k],
                2 => v[k] = f.u[k],
                _ => {
                    idx[k] = nfree;
                    nfree += 1;
                }
            }
        }
        let mut pattern = Vec::new();
        let mut off = Vec::new();
        let mut rhs = vec![0.0; nfree + me];
        for k in 0..nv {
            if idx[k] != usize::MAX {
                rhs[idx[k]] = -f.c[k];
            }
        }
        for (j, row) in f.rows.iter().enumerate() {
            let mut r = f.b[j];
            for &(k, a) in row {
                if idx[k] == usize::MAX {
                    r -= a * v[k];
                } else {
                    pattern.push((nfree + j, idx[k]));
                    off.push(a);
                }
            }
            rhs[nfree + j] = r;
        }
        let n = nfree + me;
        let positive: Vec<bool> = (0..n).map(|i| i < nfree).collect();
        let hfree: Vec<f64> = (0..nv).filter(|&k| idx[k] != usize::MAX).map(|k| f.h[k]).collect();
        let mut ldl = EnvelopeLdl::analyze(n, &pattern, &positive);
        let diag: Vec<f64> = hfree
            .iter()
            .map(|h| h + POLISH_REG)
            .chain(std::iter::repeat_n(-POLISH_REG, me))
            .collect();
        ldl.factor(&diag, &off, DYN_EPS, POLISH_REG);

        let mul = |a: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for i in 0..nfree {
                out[i] = hfree[i] * a[i];
            }
            for (k, &(r, c)) in pattern.iter().enumerate() {
                out[r] += off[k] * a[c];
                out[c] += off[k] * a[r];
            }
            out
        };
        let inf = |x: &[f64]| {
            x.iter()
                .fold(0.0f64, |a, v| if v.is_nan() { f64::NAN } else { a.max(v.abs()) })
        };
        let mut sol = ldl.solve(&rhs);
        let mut best = f64::INFINITY;
        for _ in 0..50 {
            let k = mul(&sol);
            let r: Vec<f64> = rhs.iter().zip(&k).map(|(a, b)| a - b).collect();
            let rn = inf(&r);
            if !(rn < best) || rn <= 1e-15 * (1.0 + inf(&rhs)) {
                break;
            }
            best = rn;
            let d = ldl.solve(&r);
            sol.iter_mut().zip(&d).for_each(|(s, di)| *s += di);
        }
        if !sol.iter().all(|v| v.is_finite()) {
            return None;
        }
        for k in 0..nv {
            if idx[k] != usize::MAX {
                v[k] = sol[idx[k]];
            }
        }
        let y: Vec<f64> = sol[nfree..].iter().map(|x| -x).collect();
        let ety = f.et_mul(&y);
        let mut zl = vec![0.0; nv];
        let mut zu = vec![0.0; nv];
        for k in 0..nv {
            let r = f.h[k] * v[k] + f.c[k] - ety[k];
            match state[k] {
                1 => zl[k] = r,
                2 => zu[k] = -r,
                _ => {}
            }
        }
        let (vu, yu, zlu, zuu) = scaling.unscale(&v, &y, &zl, &zu);
        let sol = pre.recover(problem, &vu, &yu, &zlu, &zuu);
        let residuals = kkt_residuals(problem, &sol.x, &sol.y, &sol.zl, &sol.zu);
        if within_tolerance(problem, settings, &sol, &residuals) {
            Some(sol)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::QpBuilder;

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    #[test]
    fn active_lower_bound() {
        let mut b = QpBuilder::new();
        b.add_var(1.0, f64::INFINITY, 0.0, 1.0);
        let p = b.build().unwrap();
        let s = solve_qp(&p, &settings()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.primal[0] - 1.0).abs() < 1e-9);
        assert!((s.dual_bounds_lower[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn two_tech_dispatch() {
        let mut b = QpBuilder::new();
        let x1 = b.add_var(0.0, 50.0, 10.0, 0.0);
        let x2 = b.add_var(0.0, 50.0, 30.0, 0.0);
        b.add_row(&[(x1, 1.0), (x2, 1.0)], 75.0, 75.0);
        let p = b.build().unwrap();
        let s = solve_qp(&p, &settings()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.primal[0] - 50.0).abs() < 1e-8);
        assert!((s.primal[1] - 25.0).abs() < 1e-8);
        assert!((s.dual_general[0] + 30.0).abs() < 1e-8);
        assert!((s.objective_value - 1250.0).abs() < 1e-7);
    }

    #[test]
    fn conflicting_rows_are_infeasible() {
        let mut b = QpBuilder::new();
        let x = b.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0, 1.0);
        b.add_row(&[(x, 1.0)], f64::NEG_INFINITY, 0.0);
        b.add_row(&[(x, 1.0)], 1.0, f64::INFINITY);
        let p = b.build().unwrap();
        assert_eq!(solve_qp(&p, &settings()).unwrap().status, Status::Infeasible);
    }

    #[test]
    fn infeasible_coupled_rows() {
        let mut b = QpBuilder::new();
        let x = b.add_var(f64::NEG_INFINITY, f64::INFINITY, 1.0, 0.0);
        let y = b.add_var(f64::NEG_INFINITY, f64::INFINITY, 1.0, 0.0);
        b.add_row(&[(x, 1.0), (y, 1.0)], 2.0, 2.0);
        b.add_row(&[(x, 1.0), (y, 1.0)], f64::NEG_INFINITY, 1.0);
        let p = b.build().unwrap();
        let s = solve_qp(&p, &settings()).unwrap();
        assert_eq!(s.status, Status::Infeasible, "{s:?}");
    }

    #[test]
    fn unbounded_linear_objective() {
        let mut b = QpBuilder::new();
        let x = b.add_var(0.0, f64::INFINITY, -1.0, 0.0);
        let y = b.add_var(0.0, 1.0, 0.0, 1.0);
        b.add_row(&[(x, 1.0), (y, -1.0)], f64::NEG_INFINITY, f64::INFINITY);
        let p = b.build().unwrap();
        let s = solve_qp(&p, &settings()).unwrap();
        assert_eq!(s.status, Status::Unbounded, "{s:?}");
    }

    #[test]
    fn fixed_variables_are_eliminated() {
        let mut b = QpBuilder::new();
        let x = b.add_var(2.0, 2.0, 1.0, 0.0);
        let y = b.add_var(0.0, 10.0, 0.0, 1.0);
        b.add_row(&[(x, 1.0), (y, 1.0)], 5.0, 5.0);
        let p = b.build().unwrap();
        let s = solve_qp(&p, &settings()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.primal[1] - 3.0).abs() < 1e-9);
        assert!(s.kkt_residuals.stationarity_inf_norm < 1e-9);
    }
}
