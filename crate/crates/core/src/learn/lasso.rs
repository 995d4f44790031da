//! Weighted LASSO by cyclic coordinate descent.
//!
//! The loss is the weighted mean squared error plus an L1 penalty on all
//! coefficients except the intercept:
//!
//! ```text
//!     L(b0, b) = sum_t w_t (y_t - b0 - <x_t, b>)^2 / sum_t w_t + lambda ||b||_1
//! ```
//!
//! For an unweighted design whose columns are centred and orthonormal this
//! gives `b_j = soft(<x_j, y>, n lambda / 2)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

const MAX_SWEEPS: usize = 100_000;
const SWEEP_TOL: f64 = 1e-13;
const MAX_POLISH_GAP: usize = 16;
/// Relative slack of the subgradient conditions that end the descent.
const KKT_TOL: f64 = 1e-9;
/// Sweeps without convergence before handing over to the feature-sign search.
const FINISH_AFTER: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub training_wmse: f64,
    /// Objective after every coordinate-descent sweep.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

impl LassoModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|r| {
                self.intercept
                    + self
                        .coefficients
                        .iter()
                        .enumerate()
                        .map(|(c, b)| b * x[(r, c)])
                        .sum::<f64>()
            })
            .collect()
    }
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

struct Centered {
    x: DMatrix<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    wsum: f64,
    x_mean: Vec<f64>,
    y_mean: f64,
}

fn center(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<Centered> {
    let (n, p) = x.shape();
    if y.len() != n || w.len() != n {
        return Err(CoreError::Dimension(format!(
            "design has {n} rows, targets {} and weights {}",
            y.len(),
            w.len()
        )));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(CoreError::InvalidInput(
            "weights must be finite and non-negative".into(),
        ));
    }
    let wsum: f64 = w.iter().sum();
    if wsum <= 0.0 {
        return Err(CoreError::InvalidInput("all sample weights are zero".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(CoreError::InvalidInput(
            "design or targets contain non-finite values".into(),
        ));
    }
    let y_mean = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let x_mean: Vec<f64> = (0..p)
        .map(|c| (0..n).map(|r| w[r] * x[(r, c)]).sum::<f64>() / wsum)
        .collect();
    let xc = DMatrix::from_fn(n, p, |r, c| x[(r, c)] - x_mean[c]);
    Ok(Centered {
        x: xc,
        y: y.iter().map(|v| v - y_mean).collect(),
        w: w.to_vec(),
        wsum,
        x_mean,
        y_mean,
    })
}

/// Smallest penalty for which all coefficients vanish.
pub fn lambda_max(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<f64> {
    let c = center(x, y, w)?;
    let mut best = 0.0f64;
    for j in 0..c.x.ncols() {
        let g: f64 = (0..c.x.nrows()).map(|r| c.w[r] * c.x[(r, j)] * c.y[r]).sum();
        best = best.max(2.0 * g.abs() / c.wsum);
    }
    Ok(best)
}

fn objective(c: &Centered, resid: &[f64], b: &[f64], lambda: f64) -> f64 {
    let loss: f64 = resid.iter().zip(&c.w).map(|(r, w)| w * r * r).sum::<f64>() / c.wsum;
    loss + lambda * b.iter().map(|v| v.abs()).sum::<f64>()
}

pub fn fit_lasso_cd(x: &DMatrix<f64>, y: &[f64], w: &[f64], lambda: f64) -> Result<LassoModel> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(CoreError::InvalidInput(format!(
            "lambda {lambda} must be finite and >= 0"
        )));
    }
    let c = center(x, y, w)?;
    let (n, p) = c.x.shape();
    let gamma = lambda * c.wsum / 2.0;
    let col_norm: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|r| c.w[r] * c.x[(r, j)].powi(2)).sum())
        .collect();
    let y_scale = c.y.iter().zip(&c.w).map(|(y, w)| w * y * y).sum::<f64>().sqrt();
    let mut b = vec![0.0; p];
    let mut resid = c.y.clone();
    let mut trace = vec![objective(&c, &resid, &b, lambda)];
    let mut support: Vec<bool> = vec![false; p];
    let (mut next_polish, mut backoff) = (0usize, 1usize);

    for sweep in 0..MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for j in 0..p {
            if col_norm[j] <= 0.0 {
                continue;
            }
            let col = c.x.column(j);
            let rho: f64 = (0..n).map(|r| c.w[r] * col[r] * (resid[r] + col[r] * b[j])).sum();
            let new = soft_threshold(rho, gamma) / col_norm[j];
            let delta = new - b[j];
            if delta != 0.0 {
                for r in 0..n {
                    resid[r] -= col[r] * delta;
                }
                b[j] = new;
                max_change = max_change.max(delta.abs() * col_norm[j].sqrt());
            }
        }
        trace.push(objective(&c, &resid, &b, lambda));
        if max_change <= SWEEP_TOL * (1.0 + c.wsum.sqrt()) || kkt_satisfied(&c, &resid, &b, &col_norm, gamma, y_scale) {
            break;
        }
        // Once the support is stable, step toward the solution of its
        // optimality system.
        let now: Vec<bool> = b.iter().map(|v| *v != 0.0).collect();
        let stable = now == support;
        support = now;
        if sweep + 1 == FINISH_AFTER {
            if let Some(fs) = feature_sign(&c, &b, &col_norm, gamma, y_scale) {
                let fres = residual(&c, &fs);
                let last = *trace.last().unwrap();
                if objective(&c, &fres, &fs, lambda) <= last + 1e-14 * last.abs() {
                    b = fs;
                    resid = fres;
                    trace.push(objective(&c, &resid, &b, lambda));
                    break;
                }
            }
        }
        if !stable || sweep < next_polish {
            continue;
        }
        next_polish = sweep + backoff;
        backoff = (backoff * 2).min(MAX_POLISH_GAP);
        if let Some((stepped, optimal)) = support_step(&c, &b, gamma) {
            let sres = residual(&c, &stepped);
            let last = *trace.last().unwrap();
            if objective(&c, &sres, &stepped, lambda) <= last + 1e-14 * last.abs() {
                b = stepped;
                resid = sres;
                trace.push(objective(&c, &resid, &b, lambda));
                if optimal {
                    break;
                }
            }
        }
    }

    let intercept = c.y_mean - b.iter().zip(&c.x_mean).map(|(b, m)| b * m).sum::<f64>();
    let training_wmse = resid.iter().zip(&c.w).map(|(r, w)| w * r * r).sum::<f64>() / c.wsum;
    Ok(LassoModel {
        coefficients: b,
        intercept,
        lambda,
        training_wmse,
        objective_trace: trace,
    })
}

/// Subgradient optimality: `|g_j| <= gamma` off the support and
/// `g_j = gamma sign(b_j)` on it, with `g = X' W r`.
fn kkt_satisfied(c: &Centered, resid: &[f64], b: &[f64], col_norm: &[f64], gamma: f64, y_scale: f64) -> bool {
    let n = c.x.nrows();
    (0..b.len()).all(|j| {
        let g: f64 = (0..n).map(|r| c.w[r] * c.x[(r, j)] * resid[r]).sum();
        let slack = KKT_TOL * (gamma + col_norm[j].sqrt() * y_scale);
        if b[j] == 0.0 {
            g.abs() <= gamma + slack
        } else {
            (g - gamma * b[j].signum()).abs() <= slack
        }
    })
}

fn residual(c: &Centered, b: &[f64]) -> Vec<f64> {
    let bv = DVector::from_column_slice(b);
    let fit = &c.x * bv;
    c.y.iter().zip(fit.iter()).map(|(y, f)| y - f).collect()
}

/// Solves `X_A' W X_A b_A = X_A' W y - gamma sign(b_A)` on the current
/// support and moves from `b` toward that solution as far as the signs stay
/// consistent; coordinates reaching zero leave the support. The flag is true
/// when the full step was taken and the inactive coordinates satisfy their
/// subgradient bounds.
fn support_step(c: &Centered, b: &[f64], gamma: f64) -> Option<(Vec<f64>, bool)> {
    let active: Vec<usize> = (0..b.len()).filter(|&j| b[j] != 0.0).collect();
    let n = c.x.nrows();
    let k = active.len();
    let mut out = vec![0.0; b.len()];
    let mut full = true;
    if k > 0 {
        let gram = DMatrix::from_fn(k, k, |a, bb| {
            let (ja, jb) = (active[a], active[bb]);
            (0..n).map(|r| c.w[r] * c.x[(r, ja)] * c.x[(r, jb)]).sum()
        });
        let rhs = DVector::from_fn(k, |a, _| {
            let j = active[a];
            (0..n).map(|r| c.w[r] * c.x[(r, j)] * c.y[r]).sum::<f64>() - gamma * b[j].signum()
        });
        let sol = gram.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut t = 1.0f64;
        let mut blocking = Vec::new();
        if gamma > 0.0 {
            for (a, &j) in active.iter().enumerate() {
                if sol[a].signum() != b[j].signum() {
                    let tj = b[j] / (b[j] - sol[a]);
                    if tj < t {
                        t = tj;
                        blocking.clear();
                    }
                    if tj <= t {
                        blocking.push(j);
                    }
                }
            }
        }
        full = t >= 1.0;
        for (a, &j) in active.iter().enumerate() {
            out[j] = b[j] + t * (sol[a] - b[j]);
            if !full && (blocking.contains(&j) || out[j].signum() != b[j].signum()) {
                out[j] = 0.0;
            }
        }
    }
    if !full {
        return Some((out, false));
    }
    let resid = residual(c, &out);
    let slack = 1e-9 * (1.0 + gamma);
    let optimal = (0..b.len()).all(|j| {
        out[j] != 0.0 || {
            let g: f64 = (0..n).map(|r| c.w[r] * c.x[(r, j)] * resid[r]).sum();
            g.abs() <= gamma + slack
        }
    });
    Some((out, optimal))
}

/// Least-squares part of the active-set system
/// `X_A' W X_A b = X_A' W y - gamma sign_A`, solved through the SVD of
/// `W^(1/2) X_A` so the conditioning is that of the design, not its square.
/// Returns the row-space solution and a basis of the numerical null space.
fn signed_least_squares(
    c: &Centered,
    active: &[usize],
    sign: &[f64],
    gamma: f64,
) -> Option<(DVector<f64>, Vec<DVector<f64>>)> {
    let n = c.x.nrows();
    let k = active.len();
    let sw: Vec<f64> = c.w.iter().map(|w| w.sqrt()).collect();
    // Pad to at least k rows so the SVD yields a full set of right vectors.
    let rows = n.max(k);
    let a = DMatrix::from_fn(rows, k, |r, j| if r < n { sw[r] * c.x[(r, active[j])] } else { 0.0 });
    let yw = DVector::from_fn(rows, |r, _| if r < n { sw[r] * c.y[r] } else { 0.0 });
    let theta = DVector::from_fn(k, |j, _| gamma * sign[active[j]]);
    let svd = a.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let cutoff = svd.singular_values.max() * 1e-13;
    let mut out = DVector::zeros(k);
    let mut null = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let v = vt.row(i).transpose();
        if s <= cutoff {
            null.push(v);
            continue;
        }
        let coef = (u.column(i).dot(&yw) - v.dot(&theta) / s) / s;
        out += v * coef;
    }
    out.iter().all(|v| v.is_finite()).then_some((out, null))
}

fn gradient(c: &Centered, resid: &[f64], j: usize) -> f64 {
    (0..c.x.nrows()).map(|r| c.w[r] * c.x[(r, j)] * resid[r]).sum()
}

/// Sum of weighted squared residuals plus `2 gamma ||b||_1`.
fn scaled_objective(c: &Centered, b: &[f64], gamma: f64) -> f64 {
    let r = residual(c, b);
    r.iter().zip(&c.w).map(|(r, w)| w * r * r).sum::<f64>() + 2.0 * gamma * b.iter().map(|v| v.abs()).sum::<f64>()
}

/// Feature-sign search started from `b`. Returns a point meeting the
/// subgradient conditions, or `None` if the iteration cap is reached.
fn feature_sign(c: &Centered, b: &[f64], col_norm: &[f64], gamma: f64, y_scale: f64) -> Option<Vec<f64>> {
    let p = b.len();
    let mut b = b.to_vec();
    let mut sign: Vec<f64> = b.iter().map(|v| if *v == 0.0 { 0.0 } else { v.signum() }).collect();
    for _ in 0..(20 * p + 100) {
        let resid = residual(c, &b);
        if kkt_satisfied(c, &resid, &b, col_norm, gamma, y_scale) {
            return Some(b);
        }
        // Activate the most violating zero coefficient once the active
        // coefficients are optimal.
        let active_ok = (0..p).filter(|&j| sign[j] != 0.0).all(|j| {
            let slack = KKT_TOL * (gamma + col_norm[j].sqrt() * y_scale);
            (gradient(c, &resid, j) - gamma * sign[j]).abs() <= slack
        });
        if active_ok {
            let (j, g) = (0..p)
                .filter(|&j| sign[j] == 0.0 && col_norm[j] > 0.0)
                .map(|j| (j, gradient(c, &resid, j)))
                .max_by(|a, b| (a.1.abs()).total_cmp(&b.1.abs()))?;
            if g.abs() <= gamma {
                return None;
            }
            sign[j] = g.signum();
        }
        let active: Vec<usize> = (0..p).filter(|&j| sign[j] != 0.0).collect();
        let k = active.len();
        let (sol, null) = signed_least_squares(c, &active, &sign, gamma)?;
        let b_a = DVector::from_fn(k, |a, _| b[active[a]]);
        let theta = DVector::from_fn(k, |a, _| sign[active[a]]);
        let theta_null = null.iter().fold(DVector::zeros(k), |acc, v| acc + v * v.dot(&theta));
        if theta_null.norm() > 1e-9 {
            // The penalty falls linearly along -theta_null while the fit is
            // unchanged; walk to the first sign change.
            let d = -theta_null;
            let (mut t, mut hit) = (f64::INFINITY, None);
            for a in 0..k {
                let j = active[a];
                if d[a] * sign[j] < 0.0 {
                    let ta = (b[j] / -d[a]).max(0.0);
                    if ta < t {
                        t = ta;
                        hit = Some(j);
                    }
                }
            }
            let hit = hit?;
            let mut moved = b.clone();
            for a in 0..k {
                moved[active[a]] += t * d[a];
            }
            moved[hit] = 0.0;
            if scaled_objective(c, &moved, gamma) > scaled_objective(c, &b, gamma) * (1.0 + 1e-14) {
                return None;
            }
            b = moved;
            for j in 0..p {
                sign[j] = if b[j] == 0.0 { 0.0 } else { b[j].signum() };
            }
            continue;
        }
        let keep = null.iter().fold(DVector::zeros(k), |acc, v| acc + v * v.dot(&b_a));
        let sol = sol + keep;
        let mut target = vec![0.0; p];
        for (a, &j) in active.iter().enumerate() {
            target[j] = sol[a];
        }
        // Objective is convex along the segment; check its end and every
        // zero crossing.
        let mut candidates = vec![target.clone()];
        for &j in &active {
            if b[j] != 0.0 && target[j].signum() != b[j].signum() {
                let t = b[j] / (b[j] - target[j]);
                let mut pt: Vec<f64> = (0..p).map(|i| b[i] + t * (target[i] - b[i])).collect();
                pt[j] = 0.0;
                candidates.push(pt);
            }
        }
        let current = scaled_objective(c, &b, gamma);
        let best = candidates
            .into_iter()
            .map(|pt| (scaled_objective(c, &pt, gamma), pt))
            .min_by(|a, b| a.0.total_cmp(&b.0))?;
        if best.0 >= current && best.1 == b {
            return None;
        }
        if best.0 > current {
            return None;
        }
        b = best.1;
        for j in 0..p {
            sign[j] = if b[j] == 0.0 { 0.0 } else { b[j].signum() };
        }
    }
    None
}
