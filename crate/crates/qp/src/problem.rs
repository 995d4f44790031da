//! Problem and solution containers.
//!
//! A [`QpProblem`] describes
//!
//! ```text
//!     minimize    sum_i c1_i x_i + c2_i x_i^2
//!     subject to  row_lower <= A x <= row_upper
//!                 var_lower <=  x  <= var_upper
//! ```
//!
//! with `c2 >= 0`. Rows with `row_lower == row_upper` are equalities.

use crate::error::QpError;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a CSR matrix from `(row, col, value)` triplets. Duplicate
    /// entries are summed and exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, QpError> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return Err(QpError::InvalidProblem(format!(
                    "triplet ({r}, {c}) outside {nrows}x{ncols}"
                )));
            }
            if !v.is_finite() {
                return Err(QpError::InvalidProblem(format!("non-finite coefficient at ({r}, {c})")));
            }
            sorted.push((r, c, v));
        }
        sorted.sort_by_key(|a| (a.0, a.1));

        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        let mut row_of = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_of.push(r);
                last = Some((r, c));
            }
        }
        let mut keep_cols = Vec::with_capacity(col_idx.len());
        let mut keep_vals = Vec::with_capacity(values.len());
        for ((c, v), r) in col_idx.into_iter().zip(values).zip(row_of) {
            if v != 0.0 {
                keep_cols.push(c);
                keep_vals.push(v);
                row_ptr[r + 1] += 1;
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx: keep_cols,
            values: keep_vals,
        })
    }

    /// An `nrows x ncols` matrix without entries.
    pub fn empty(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzeros of row `r` as `(column, value)` pairs, sorted by column.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    /// Dense value at `(r, c)`.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `A^T y`.
    pub fn mul_transpose_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (r, &yr) in y.iter().enumerate().take(self.nrows) {
            if yr == 0.0 {
                continue;
            }
            for (c, v) in self.row(r) {
                out[c] += v * yr;
            }
        }
        out
    }

    /// Multiplies every stored value by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= factor);
        m
    }
}

/// Separable convex QP with general linear rows and variable bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub objective_linear: Vec<f64>,
    /// Coefficients of `x_i^2` in the objective (not halved).
    pub objective_quadratic_diag: Vec<f64>,
    pub constraints: SparseMatrix,
    pub row_lower: Vec<f64>,
    pub row_upper: Vec<f64>,
    pub var_lower: Vec<f64>,
    pub var_upper: Vec<f64>,
}

impl QpProblem {
    pub fn n_vars(&self) -> usize {
        self.objective_linear.len()
    }

    pub fn n_rows(&self) -> usize {
        self.constraints.nrows()
    }

    /// Checks the structural invariants: matching lengths, convexity,
    /// non-empty rows and ordered bounds.
    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n_vars();
        let m = self.n_rows();
        check_len("objective_quadratic_diag", n, self.objective_quadratic_diag.len())?;
        check_len("var_lower", n, self.var_lower.len())?;
        check_len("var_upper", n, self.var_upper.len())?;
        check_len("constraint columns", n, self.constraints.ncols())?;
        check_len("row_lower", m, self.row_lower.len())?;
        check_len("row_upper", m, self.row_upper.len())?;

        for i in 0..n {
            let (c1, c2) = (self.objective_linear[i], self.objective_quadratic_diag[i]);
            if !c1.is_finite() || !c2.is_finite() {
                return Err(QpError::InvalidProblem(format!(
                    "non-finite objective coefficient for variable {i}"
                )));
            }
            if c2 < 0.0 {
                return Err(QpError::InvalidProblem(format!(
                    "negative quadratic coefficient {c2} for variable {i}"
                )));
            }
            check_bounds("variable", i, self.var_lower[i], self.var_upper[i])?;
        }
        for r in 0..m {
            if self.constraints.row_nnz(r) == 0 {
                return Err(QpError::InvalidProblem(format!("row {r} has no nonzero")));
            }
            check_bounds("row", r, self.row_lower[r], self.row_upper[r])?;
        }
        Ok(())
    }

    /// `sum c1 x + c2 x^2`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.objective_linear
            .iter()
            .zip(&self.objective_quadratic_diag)
            .zip(x)
            .map(|((c1, c2), xi)| c1 * xi + c2 * xi * xi)
            .sum()
    }

    /// Gradient of the objective, `c1 + 2 c2 x`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.objective_linear
            .iter()
            .zip(&self.objective_quadratic_diag)
            .zip(x)
            .map(|((c1, c2), xi)| c1 + 2.0 * c2 * xi)
            .collect()
    }

    /// The same problem with the objective multiplied by `factor > 0`.
    pub fn scale_objective(&self, factor: f64) -> Self {
        let mut p = self.clone();
        p.objective_linear.iter_mut().for_each(|c| *c *= factor);
        p.objective_quadratic_diag.iter_mut().for_each(|c| *c *= factor);
        p
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), QpError> {
    if expected == found {
        Ok(())
    } else {
        Err(QpError::DimensionMismatch { what, expected, found })
    }
}

fn check_bounds(kind: &str, idx: usize, lo: f64, hi: f64) -> Result<(), QpError> {
    if lo.is_nan() || hi.is_nan() {
        return Err(QpError::InvalidProblem(format!("NaN bound on {kind} {idx}")));
    }
    if lo == f64::INFINITY || hi == f64::NEG_INFINITY {
        return Err(QpError::InvalidProblem(format!(
            "{kind} {idx} has an unattainable bound [{lo}, {hi}]"
        )));
    }
    if lo > hi {
        return Err(QpError::InvalidProblem(format!(
            "{kind} {idx} has lower bound {lo} above upper bound {hi}"
        )));
    }
    Ok(())
}

/// Incremental construction of a [`QpProblem`].
#[derive(Debug, Default, Clone)]
pub struct QpBuilder {
    c1: Vec<f64>,
    c2: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    triplets: Vec<(usize, usize, f64)>,
    row_lower: Vec<f64>,
    row_upper: Vec<f64>,
}

impl QpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable and returns its column.
    pub fn add_var(&mut self, lower: f64, upper: f64, c1: f64, c2: f64) -> usize {
        self.c1.push(c1);
        self.c2.push(c2);
        self.lower.push(lower);
        self.upper.push(upper);
        self.c1.len() - 1
    }

    /// Adds `lower <= sum coef * x_col <= upper` and returns the row index.
    pub fn add_row(&mut self, coefs: &[(usize, f64)], lower: f64, upper: f64) -> usize {
        let r = self.row_lower.len();
        self.triplets.extend(coefs.iter().map(|&(c, v)| (r, c, v)));
        self.row_lower.push(lower);
        self.row_upper.push(upper);
        r
    }

    pub fn n_vars(&self) -> usize {
        self.c1.len()
    }

    pub fn n_rows(&self) -> usize {
        self.row_lower.len()
    }

    pub fn set_linear(&mut self, col: usize, c1: f64) {
        self.c1[col] = c1;
    }

    pub fn set_quadratic(&mut self, col: usize, c2: f64) {
        self.c2[col] = c2;
    }

    pub fn build(self) -> Result<QpProblem, QpError> {
        let n = self.c1.len();
        let m = self.row_lower.len();
        let constraints = SparseMatrix::from_triplets(m, n, &self.triplets)?;
        let problem = QpProblem {
            objective_linear: self.c1,
            objective_quadratic_diag: self.c2,
            constraints,
            row_lower: self.row_lower,
            row_upper: self.row_upper,
            var_lower: self.lower,
            var_upper: self.upper,
        };
        problem.validate()?;
        Ok(problem)
    }
}

/// Termination state of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

/// Solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iterations: usize,
    /// Slack below which a constraint counts as binding in downstream
    /// active-set detection.
    pub binding_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-8,
            rel_tol: 1e-10,
            max_iterations: 200,
            binding_tol: 1e-6,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), QpError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.abs_tol) || !ok(self.rel_tol) || !ok(self.binding_tol) {
            return Err(QpError::InvalidProblem(
                "solver tolerances must be positive and finite".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(QpError::InvalidProblem("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Infinity norms of the KKT residuals at a candidate point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// `|| c1 + 2 c2 x + A^T y - z_lower + z_upper ||_inf`
    pub stationarity_inf_norm: f64,
    /// Largest violation of a row or variable bound.
    pub primal_inf_norm: f64,
    /// Largest dual sign violation (e.g. a negative bound multiplier or a
    /// multiplier on an infinite side).
    pub dual_inf_norm: f64,
    /// Largest `|multiplier * slack|` product.
    pub complementarity_inf_norm: f64,
}

/// Primal-dual result of a solve.
///
/// Duals use a single convention: with
/// `L = f + y^T (A x - b) - z_l^T (x - l) + z_u^T (x - u)`, stationarity reads `grad f + A^T y - z_l + z_u = 0`.
/// A row multiplier is positive when the upper side binds and negative when
/// the lower side binds; bound multipliers are non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub status: Status,
    pub primal: Vec<f64>,
    pub dual_general: Vec<f64>,
    pub dual_bounds_lower: Vec<f64>,
    pub dual_bounds_upper: Vec<f64>,
    pub objective_value: f64,
    pub kkt_residuals: KktResiduals,
    pub iterations: usize,
}

impl QpSolution {
    /// A solution with zeroed vectors, used for non-optimal outcomes.
    pub fn empty(problem: &QpProblem, status: Status) -> Self {
        let n = problem.n_vars();
        Self {
            status,
            primal: vec![0.0; n],
            dual_general: vec![0.0; problem.n_rows()],
            dual_bounds_lower: vec![0.0; n],
            dual_bounds_upper: vec![0.0; n],
            objective_value: f64::NAN,
            kkt_residuals: KktResiduals::default(),
            iterations: 0,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}
