//! Inverse optimization: learn cost regressions from observed dispatch.
//!
//! Given an observed dispatch, the multipliers of every constraint that is
//! slack must vanish, and the stationarity conditions of the dispatch QP
//! must hold with some non-positive multipliers for the binding ones. Cost
//! coefficients are linked to features by
//!
//! ```text
//!     c1_it = <Z1_it, b1_i> + e1_it,  c2_it = <Z2_it, b2_i> + e2_it,  k_it = <Z3_it, b3_i> + e3_it
//! ```
//!
//! and the calibration QP minimizes `sum_t w_t (e1^2 + e2^2 + e3^2) +
//! sum lambda ||b||_1` over costs, multipliers and coefficients subject to
//! the stationarity rows.
//!
//! Long histories are split into blocks. The ramp and storage multiplier
//! chains are cut at block ends by a free boundary variable; coefficients
//! are shared by all blocks.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use nalgebra::DMatrix;
use ppa_qp::{solve_qp, QpBuilder, QpProblem, QpSolution, SolverSettings, Status};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::features::{schema_hash, FeatureMatrix, FeatureSchema, INTERCEPT};
use crate::market::{CostCurves, MarketScenario, TechSeries, Technology};

pub const MODEL_VERSION: u32 = 1;
pub const DEFAULT_BLOCK_HOURS: usize = 14 * 24;
/// Half-width of the box around a pinned price, relative to `max(1, |p|)`
/// and scaled by the binding tolerance.
const PIN_SLACK: f64 = 1.0;
/// Penalties from this size on are first tried with the penalized
/// coefficients fixed at zero; the interior point method loses the
/// quadratic term next to such linear costs.
const SCREEN_LAMBDA: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedDispatch {
    pub x: TechSeries,
    pub s: Vec<f64>,
    pub y_plus: Vec<f64>,
    pub y_minus: Vec<f64>,
    /// Output before the first period; without it the first period has no
    /// ramp.
    pub initial_output: Option<Vec<f64>>,
    pub observed_price: Option<Vec<f64>>,
}

impl ObservedDispatch {
    pub fn n_periods(&self) -> usize {
        self.s.len()
    }

    /// Minimal split `r+ - r- = x_t - x_{t-1}` with at most one side positive.
    pub fn ramps(&self) -> (TechSeries, TechSeries) {
        let mut up = Vec::with_capacity(self.x.len());
        let mut down = Vec::with_capacity(self.x.len());
        for (i, row) in self.x.iter().enumerate() {
            let prev0 = self
                .initial_output
                .as_ref()
                .map_or(row.first().copied().unwrap_or(0.0), |x0| x0[i]);
            let mut u = Vec::with_capacity(row.len());
            let mut d = Vec::with_capacity(row.len());
            for t in 0..row.len() {
                let prev = if t == 0 { prev0 } else { row[t - 1] };
                let delta = row[t] - prev;
                u.push(delta.max(0.0));
                d.push((-delta).max(0.0));
            }
            up.push(u);
            down.push(d);
        }
        (up, down)
    }

    fn validate(&self, scenario: &MarketScenario) -> Result<()> {
        let (n, t) = (scenario.n_tech(), scenario.n_periods());
        if self.x.len() != n || self.x.iter().any(|r| r.len() != t) {
            return Err(CoreError::Dimension(format!("observed x must be {n} x {t}")));
        }
        for (what, v) in [("s", &self.s), ("y_plus", &self.y_plus), ("y_minus", &self.y_minus)] {
            if v.len() != t {
                return Err(CoreError::Dimension(format!(
                    "observed {what} has {} entries, expected {t}",
                    v.len()
                )));
            }
        }
        if let Some(p) = &self.observed_price {
            if p.len() != t {
                return Err(CoreError::Dimension("observed price length".into()));
            }
        }
        if let Some(x0) = &self.initial_output {
            if x0.len() != n {
                return Err(CoreError::Dimension("initial output length".into()));
            }
        }
        let all = self
            .x
            .iter()
            .flatten()
            .chain(&self.s)
            .chain(&self.y_plus)
            .chain(&self.y_minus);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(CoreError::Data("observed dispatch contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Largest observed upward and downward change per technology.
pub fn infer_ramp_limits(observed: &ObservedDispatch) -> (Vec<f64>, Vec<f64>) {
    let mut up = Vec::new();
    let mut down = Vec::new();
    for row in &observed.x {
        let (mut u, mut d) = (0.0f64, 0.0f64);
        for w in row.windows(2) {
            u = u.max(w[1] - w[0]);
            d = d.max(w[0] - w[1]);
        }
        up.push(u);
        down.push(d);
    }
    (up, down)
}

/// Largest observed charging and discharging power.
pub fn infer_storage_power(observed: &ObservedDispatch) -> (f64, f64) {
    let max = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(*b));
    (max(&observed.y_plus), max(&observed.y_minus))
}

/// Whether each side of a bound is slack. `true` means the multiplier is
/// forced to zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SlackPair<T> {
    pub upper: T,
    pub lower: T,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActiveSets {
    /// Output limits (`alpha`).
    pub output: SlackPair<Vec<Vec<bool>>>,
    /// Storage level (`beta`).
    pub storage: SlackPair<Vec<bool>>,
    /// Charging power (`gamma+`).
    pub charge: SlackPair<Vec<bool>>,
    /// Discharging power (`gamma-`).
    pub discharge: SlackPair<Vec<bool>>,
    /// Upward ramp (`delta`).
    pub ramp_up: SlackPair<Vec<Vec<bool>>>,
    /// Downward ramp (`theta`).
    pub ramp_down: SlackPair<Vec<Vec<bool>>>,
    /// Observations that violated a bound by more than the tolerance and
    /// were clipped.
    pub violations: Vec<String>,
}

fn classify(v: f64, lo: f64, hi: f64, tol: f64, what: &dyn Fn() -> String, log: &mut Vec<String>) -> (bool, bool) {
    if v < lo - tol || v > hi + tol {
        log.push(format!("{} = {v} outside [{lo}, {hi}]; clipped", what()));
    }
    let v = v.clamp(lo, hi);
    let upper_slack = hi - v > tol;
    let lower_slack = v - lo > tol;
    (upper_slack, lower_slack)
}

pub fn detect_active_sets(
    observed: &ObservedDispatch,
    scenario: &MarketScenario,
    binding_tol: f64,
) -> Result<ActiveSets> {
    scenario.validate()?;
    observed.validate(scenario)?;
    if !(binding_tol >= 0.0) {
        return Err(CoreError::InvalidInput("binding tolerance must be non-negative".into()));
    }
    let (n, tt) = (scenario.n_tech(), scenario.n_periods());
    let mut log = Vec::new();
    let mut sets = ActiveSets::default();
    let (r_up, r_down) = observed.ramps();

    let per_it = |vals: &TechSeries, hi: &TechSeries, name: &str, log: &mut Vec<String>| {
        let mut up = vec![vec![true; tt]; n];
        let mut lo = vec![vec![true; tt]; n];
        for i in 0..n {
            for t in 0..tt {
                let (u, l) = classify(
                    vals[i][t],
                    0.0,
                    hi[i][t],
                    binding_tol,
                    &|| format!("{name}[{i}][{t}]"),
                    log,
                );
                up[i][t] = u;
                lo[i][t] = l;
            }
        }
        SlackPair { upper: up, lower: lo }
    };
    sets.output = per_it(&observed.x, &scenario.capacity, "x", &mut log);
    sets.ramp_up = per_it(&r_up, &scenario.ramp_up, "r_plus", &mut log);
    sets.ramp_down = per_it(&r_down, &scenario.ramp_down, "r_minus", &mut log);

    let per_t = |vals: &[f64], hi: &[f64], name: &str, log: &mut Vec<String>| {
        let mut up = vec![true; tt];
        let mut lo = vec![true; tt];
        for t in 0..tt {
            let (u, l) = classify(vals[t], 0.0, hi[t], binding_tol, &|| format!("{name}[{t}]"), log);
            up[t] = u;
            lo[t] = l;
        }
        SlackPair { upper: up, lower: lo }
    };
    sets.storage = per_t(&observed.s, &scenario.storage_energy_cap, "s", &mut log);
    sets.charge = per_t(&observed.y_plus, &scenario.storage_charge_cap, "y_plus", &mut log);
    sets.discharge = per_t(&observed.y_minus, &scenario.storage_discharge_cap, "y_minus", &mut log);

    for v in &log {
        log::warn!("{v}");
    }
    sets.violations = log;
    Ok(sets)
}

/// Regressors of one cost group for one technology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionDesign {
    pub columns: Vec<String>,
    /// Row per period.
    pub values: Vec<Vec<f64>>,
    /// Column exempt from the L1 penalty.
    pub intercept: Option<usize>,
}

impl RegressionDesign {
    /// Intercept-only design.
    pub fn constant(periods: usize) -> Self {
        Self {
            columns: vec![INTERCEPT.into()],
            values: vec![vec![1.0]; periods],
            intercept: Some(0),
        }
    }

    /// Selects named columns of a feature matrix.
    pub fn from_features(features: &FeatureMatrix, columns: &[String]) -> Result<Self> {
        let idx = columns
            .iter()
            .map(|c| {
                features
                    .schema
                    .column(c)
                    .ok_or_else(|| CoreError::Data(format!("feature column {c:?} not found")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            columns: columns.to_vec(),
            values: features
                .values
                .iter()
                .map(|r| idx.iter().map(|&c| r[c]).collect())
                .collect(),
            intercept: columns.iter().position(|c| c == INTERCEPT),
        })
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn schema_hash(&self) -> String {
        schema_hash(&self.columns)
    }

    fn validate(&self, periods: usize) -> Result<()> {
        if self.values.len() != periods || self.values.iter().any(|r| r.len() != self.columns.len()) {
            return Err(CoreError::Dimension(format!(
                "design must be {periods} x {}",
                self.columns.len()
            )));
        }
        if self.values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CoreError::Data("design contains non-finite values".into()));
        }
        Ok(())
    }
}

/// `Z1`, `Z2`, `Z3` of one technology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechDesign {
    pub groups: [RegressionDesign; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProblem {
    pub scenario: MarketScenario,
    pub observed: ObservedDispatch,
    pub designs: Vec<TechDesign>,
    pub weights: Vec<f64>,
    /// `lambda[i][j]` for technology `i` and group `j`.
    pub lambdas: Vec<[f64; 3]>,
    pub binding_tol: f64,
    pub block_hours: usize,
    /// Fix prices to `observed.observed_price` when available.
    pub pin_prices: bool,
}

impl CalibrationProblem {
    pub fn new(scenario: MarketScenario, observed: ObservedDispatch, designs: Vec<TechDesign>) -> Self {
        let n = scenario.n_tech();
        let t = scenario.n_periods();
        Self {
            scenario,
            observed,
            designs,
            weights: vec![1.0; t],
            lambdas: vec![[0.0; 3]; n],
            binding_tol: 1e-6,
            block_hours: DEFAULT_BLOCK_HOURS,
            pin_prices: true,
        }
    }

    fn validate(&self) -> Result<()> {
        let (n, t) = (self.scenario.n_tech(), self.scenario.n_periods());
        self.observed.validate(&self.scenario)?;
        if self.designs.len() != n || self.lambdas.len() != n {
            return Err(CoreError::Dimension(format!(
                "need designs and penalties for {n} technologies"
            )));
        }
        for d in &self.designs {
            for g in &d.groups {
                g.validate(t)?;
            }
        }
        if self.weights.len() != t {
            return Err(CoreError::Dimension("weights length".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(CoreError::InvalidInput(
                "weights must be non-negative with positive sum".into(),
            ));
        }
        if self.lambdas.iter().flatten().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(CoreError::InvalidInput(
                "penalties must be finite and non-negative".into(),
            ));
        }
        if self.block_hours == 0 {
            return Err(CoreError::InvalidInput("block length must be positive".into()));
        }
        Ok(())
    }

    fn pinned(&self) -> Option<&[f64]> {
        if self.pin_prices {
            self.observed.observed_price.as_deref()
        } else {
            None
        }
    }
}

/// Column of a regression coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefCol {
    Free(usize),
    /// `b = b+ - b-`
    Split(usize, usize),
}

/// Columns of a multiplier pair. `Merged` holds the single free column that
/// replaces `lower - upper` when both sides bind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualCols {
    Pair { upper: Option<usize>, lower: Option<usize> },
    Merged(usize),
}

impl DualCols {
    /// `lower - upper` at a solution.
    fn net(&self, v: &[f64]) -> f64 {
        match *self {
            DualCols::Pair { upper, lower } => lower.map_or(0.0, |c| v[c]) - upper.map_or(0.0, |c| v[c]),
            DualCols::Merged(c) => v[c],
        }
    }

    fn push_terms(&self, coefs: &mut Vec<(usize, f64)>, sign: f64) {
        match *self {
            DualCols::Pair { upper, lower } => {
                if let Some(c) = lower {
                    coefs.push((c, sign));
                }
                if let Some(c) = upper {
                    coefs.push((c, -sign));
                }
            }
            DualCols::Merged(c) => coefs.push((c, sign)),
        }
    }

    fn upper_lower(&self, v: &[f64]) -> (f64, f64) {
        match *self {
            DualCols::Pair { upper, lower } => (upper.map_or(0.0, |c| v[c]), lower.map_or(0.0, |c| v[c])),
            // Attribute a merged value to the side its sign allows.
            DualCols::Merged(c) => {
                if v[c] >= 0.0 {
                    (-v[c], 0.0)
                } else {
                    (0.0, v[c])
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct InverseLayout {
    pub n_tech: usize,
    pub n_periods: usize,
    pub c1: Vec<Vec<usize>>,
    pub c2: Vec<Vec<usize>>,
    pub k: Vec<Vec<usize>>,
    /// `eps[j][i][t]`
    pub eps: [Vec<Vec<usize>>; 3],
    pub price: Vec<usize>,
    pub storage_dual: Vec<usize>,
    pub mu: Vec<Vec<Option<usize>>>,
    pub output: Vec<Vec<DualCols>>,
    pub storage: Vec<DualCols>,
    pub charge: Vec<DualCols>,
    pub discharge: Vec<DualCols>,
    pub ramp_up: Vec<Vec<Option<DualCols>>>,
    pub ramp_down: Vec<Vec<Option<DualCols>>>,
    /// `coef[i][j][c]`
    pub coef: Vec<[Vec<CoefCol>; 3]>,
    pub block_ends: Vec<usize>,
}

/// Sizes of the calibration QP by family.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StructureReport {
    pub n_vars: usize,
    pub n_rows: usize,
    pub variables: BTreeMap<String, usize>,
    pub rows: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct InverseQp {
    pub problem: QpProblem,
    pub layout: InverseLayout,
    pub report: StructureReport,
}

struct Counter<'a> {
    b: &'a mut QpBuilder,
    vars: BTreeMap<String, usize>,
}

impl Counter<'_> {
    fn var(&mut self, family: &str, lo: f64, hi: f64, c1: f64, c2: f64) -> usize {
        *self.vars.entry(family.to_string()).or_default() += 1;
        self.b.add_var(lo, hi, c1, c2)
    }

    fn duals(&mut self, family: &str, upper_slack: bool, lower_slack: bool) -> DualCols {
        match (upper_slack, lower_slack) {
            (false, false) => DualCols::Merged(self.var(family, f64::NEG_INFINITY, f64::INFINITY, 0.0, 0.0)),
            (u, l) => DualCols::Pair {
                upper: (!u).then(|| self.var(family, f64::NEG_INFINITY, 0.0, 0.0, 0.0)),
                lower: (!l).then(|| self.var(family, f64::NEG_INFINITY, 0.0, 0.0, 0.0)),
            },
        }
    }
}

pub fn build_inverse_qp(problem: &CalibrationProblem, active: &ActiveSets) -> Result<InverseQp> {
    problem.validate()?;
    let sc = &problem.scenario;
    let obs = &problem.observed;
    let (n, tt) = (sc.n_tech(), sc.n_periods());
    let eta = sc.storage_efficiency;
    let has_ramp = |t: usize| t > 0 || obs.initial_output.is_some();
    let block_ends: Vec<usize> = (0..tt)
        .filter(|t| (t + 1) % problem.block_hours == 0 && t + 1 < tt)
        .collect();
    let is_block_end = |t: usize| (t + 1).is_multiple_of(problem.block_hours) && t + 1 < tt;
    let pinned = problem.pinned();

    let mut builder = QpBuilder::new();
    let mut v = Counter {
        b: &mut builder,
        vars: BTreeMap::new(),
    };
    let inf = f64::INFINITY;

    let mut c1 = vec![vec![0; tt]; n];
    let mut c2 = vec![vec![0; tt]; n];
    let mut k = vec![vec![0; tt]; n];
    for i in 0..n {
        for t in 0..tt {
            c1[i][t] = v.var("c1", -inf, inf, 0.0, 0.0);
            c2[i][t] = v.var("c2", 0.0, inf, 0.0, 0.0);
            k[i][t] = v.var("k", -inf, inf, 0.0, 0.0);
        }
    }
    let mut eps: [Vec<Vec<usize>>; 3] = Default::default();
    for (j, e) in eps.iter_mut().enumerate() {
        *e = (0..n)
            .map(|_| {
                (0..tt)
                    .map(|t| v.var(&format!("eps{}", j + 1), -inf, inf, 0.0, problem.weights[t]))
                    .collect()
            })
            .collect();
    }
    let price: Vec<usize> = (0..tt)
        .map(|t| match pinned {
            Some(p) => {
                let half = PIN_SLACK * problem.binding_tol * p[t].abs().max(1.0);
                v.var("price", p[t] - half, p[t] + half, 0.0, 0.0)
            }
            None => v.var("price", -inf, inf, 0.0, 0.0),
        })
        .collect();
    let storage_dual: Vec<usize> = (0..tt).map(|_| v.var("storage_dual", -inf, inf, 0.0, 0.0)).collect();
    let mu: Vec<Vec<Option<usize>>> = (0..n)
        .map(|_| {
            (0..tt)
                .map(|t| has_ramp(t).then(|| v.var("mu", -inf, inf, 0.0, 0.0)))
                .collect()
        })
        .collect();

    let output: Vec<Vec<DualCols>> = (0..n)
        .map(|i| {
            (0..tt)
                .map(|t| v.duals("alpha", active.output.upper[i][t], active.output.lower[i][t]))
                .collect()
        })
        .collect();
    let storage: Vec<DualCols> = (0..tt)
        .map(|t| v.duals("beta", active.storage.upper[t], active.storage.lower[t]))
        .collect();
    let charge: Vec<DualCols> = (0..tt)
        .map(|t| v.duals("gamma_plus", active.charge.upper[t], active.charge.lower[t]))
        .collect();
    let discharge: Vec<DualCols> = (0..tt)
        .map(|t| v.duals("gamma_minus", active.discharge.upper[t], active.discharge.lower[t]))
        .collect();
    let ramp_dual = |v: &mut Counter, fam: &str, pair: &SlackPair<Vec<Vec<bool>>>| -> Vec<Vec<Option<DualCols>>> {
        (0..n)
            .map(|i| {
                (0..tt)
                    .map(|t| has_ramp(t).then(|| v.duals(fam, pair.upper[i][t], pair.lower[i][t])))
                    .collect()
            })
            .collect()
    };
    let ramp_up = ramp_dual(&mut v, "delta", &active.ramp_up);
    let ramp_down = ramp_dual(&mut v, "theta", &active.ramp_down);

    let mut coef: Vec<[Vec<CoefCol>; 3]> = Vec::with_capacity(n);
    for i in 0..n {
        let mut groups: [Vec<CoefCol>; 3] = Default::default();
        for (j, g) in groups.iter_mut().enumerate() {
            let design = &problem.designs[i].groups[j];
            let lam = problem.lambdas[i][j];
            *g = (0..design.n_cols())
                .map(|c| {
                    if design.intercept == Some(c) {
                        CoefCol::Free(v.var("coef", -inf, inf, 0.0, 0.0))
                    } else {
                        let plus = v.var("coef_split", 0.0, inf, lam, 0.0);
                        let minus = v.var("coef_split", 0.0, inf, lam, 0.0);
                        CoefCol::Split(plus, minus)
                    }
                })
                .collect();
        }
        coef.push(groups);
    }

    // Boundary multipliers replacing mu_{i,t+1} and pi_{t+1} at block ends.
    let mut boundary_mu: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut boundary_pi: BTreeMap<usize, usize> = BTreeMap::new();
    for &t in &block_ends {
        for i in 0..n {
            boundary_mu.insert((i, t), v.var("boundary", -inf, inf, 0.0, 0.0));
        }
        boundary_pi.insert(t, v.var("boundary", -inf, inf, 0.0, 0.0));
    }
    let vars = std::mem::take(&mut v.vars);
    drop(v);

    let mut rows: BTreeMap<String, usize> = BTreeMap::new();
    let mut add = |b: &mut QpBuilder, family: &str, coefs: &[(usize, f64)]| {
        *rows.entry(family.to_string()).or_default() += 1;
        b.add_row(coefs, 0.0, 0.0);
    };

    for i in 0..n {
        for t in 0..tt {
            // c1 + 2 x c2 - p + alpha_lo - alpha_up - mu_t + mu_{t+1} = 0
            let mut row = vec![(c1[i][t], 1.0), (c2[i][t], 2.0 * obs.x[i][t]), (price[t], -1.0)];
            output[i][t].push_terms(&mut row, 1.0);
            if let Some(m) = mu[i][t] {
                row.push((m, -1.0));
            }
            if t + 1 < tt {
                if is_block_end(t) {
                    row.push((boundary_mu[&(i, t)], 1.0));
                } else if let Some(m) = mu[i][t + 1] {
                    row.push((m, 1.0));
                }
            }
            add(&mut builder, "stationarity_x", &row);
        }
    }
    for t in 0..tt {
        let mut row = vec![(price[t], 1.0), (storage_dual[t], -eta)];
        charge[t].push_terms(&mut row, 1.0);
        add(&mut builder, "stationarity_y_plus", &row);

        let mut row = vec![(price[t], -1.0), (storage_dual[t], 1.0 / eta)];
        discharge[t].push_terms(&mut row, 1.0);
        add(&mut builder, "stationarity_y_minus", &row);

        let mut row = vec![(storage_dual[t], 1.0)];
        if t + 1 < tt {
            if is_block_end(t) {
                row.push((boundary_pi[&t], -1.0));
            } else {
                row.push((storage_dual[t + 1], -1.0));
            }
        }
        storage[t].push_terms(&mut row, 1.0);
        add(&mut builder, "stationarity_s", &row);
    }
    for i in 0..n {
        for t in 0..tt {
            let Some(m) = mu[i][t] else { continue };
            // mu - delta_up + delta_lo + k = 0
            let mut row = vec![(m, 1.0), (k[i][t], 1.0)];
            ramp_up[i][t].unwrap().push_terms(&mut row, 1.0);
            add(&mut builder, "stationarity_r_plus", &row);
            // -mu - theta_up + theta_lo = 0
            let mut row = vec![(m, -1.0)];
            ramp_down[i][t].unwrap().push_terms(&mut row, 1.0);
            add(&mut builder, "stationarity_r_minus", &row);
        }
    }
    let cost_cols = [&c1, &c2, &k];
    for i in 0..n {
        for j in 0..3 {
            let design = &problem.designs[i].groups[j];
            for t in 0..tt {
                // eps - c + <Z, b> = 0
                let mut row = vec![(eps[j][i][t], 1.0), (cost_cols[j][i][t], -1.0)];
                for (c, col) in coef[i][j].iter().enumerate() {
                    let z = design.values[t][c];
                    if z == 0.0 {
                        continue;
                    }
                    match *col {
                        CoefCol::Free(a) => row.push((a, z)),
                        CoefCol::Split(a, b) => {
                            row.push((a, z));
                            row.push((b, -z));
                        }
                    }
                }
                add(&mut builder, &format!("regression{}", j + 1), &row);
            }
        }
    }

    let problem_qp = builder.build()?;
    let report = StructureReport {
        n_vars: problem_qp.n_vars(),
        n_rows: problem_qp.n_rows(),
        variables: vars,
        rows,
    };
    Ok(InverseQp {
        problem: problem_qp,
        layout: InverseLayout {
            n_tech: n,
            n_periods: tt,
            c1,
            c2,
            k,
            eps,
            price,
            storage_dual,
            mu,
            output,
            storage,
            charge,
            discharge,
            ramp_up,
            ramp_down,
            coef,
            block_ends,
        },
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupModel {
    pub columns: Vec<String>,
    pub intercept: Option<usize>,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub schema_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechModel {
    pub technology: Technology,
    /// `b1`, `b2`, `b3`
    pub groups: [GroupModel; 3],
    /// Condition number of the weighted `Z1` design.
    pub z1_condition: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveDecomposition {
    pub weighted_residuals: f64,
    pub penalty: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedValues {
    pub c1: TechSeries,
    pub c2: TechSeries,
    pub k: TechSeries,
    /// Implied (or pinned) price per period.
    pub price: Vec<f64>,
    /// `eps[j][i][t]`
    pub residuals: [TechSeries; 3],
    pub mu: TechSeries,
    pub storage_dual: Vec<f64>,
    pub alpha_upper: TechSeries,
    pub alpha_lower: TechSeries,
    pub beta_upper: Vec<f64>,
    pub beta_lower: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingWindow {
    pub start: Option<DateTime<Utc>>,
    pub end: Option<DateTime<Utc>>,
    pub periods: usize,
    pub block_hours: usize,
    pub prices_pinned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedModel {
    pub version: u32,
    pub technologies: Vec<TechModel>,
    /// Scaler and column layout of the feature matrix the designs were cut
    /// from, when they came from one.
    pub feature_schema: Option<FeatureSchema>,
    pub binding_tol: f64,
    pub training: TrainingWindow,
    pub objective: ObjectiveDecomposition,
    pub structure: StructureReport,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fitted: Option<FittedValues>,
}

impl CalibratedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.version != MODEL_VERSION {
            return Err(CoreError::Data(format!(
                "model version {} not supported (expected {MODEL_VERSION})",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn technology_ids(&self) -> Vec<String> {
        self.technologies.iter().map(|t| t.technology.id.clone()).collect()
    }
}

fn condition_number(design: &RegressionDesign, w: &[f64]) -> f64 {
    let (t, p) = (design.values.len(), design.n_cols());
    if t == 0 || p == 0 {
        return 1.0;
    }
    let m = DMatrix::from_fn(t, p, |r, c| w[r].sqrt() * design.values[r][c]);
    let sv = m.singular_values();
    let (hi, lo) = sv
        .iter()
        .fold((0.0f64, f64::INFINITY), |(h, l), s| (h.max(*s), l.min(*s)));
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

pub fn calibrate(problem: &CalibrationProblem, settings: &SolverSettings) -> Result<CalibratedModel> {
    let active = detect_active_sets(&problem.observed, &problem.scenario, problem.binding_tol)?;
    let mut inv = build_inverse_qp(problem, &active)?;
    if let Some(model) = screened_solve(problem, &mut inv, settings)? {
        return Ok(model);
    }
    let sol = solve_qp(&inv.problem, settings)?;
    match sol.status {
        Status::Optimal => {}
        Status::Infeasible => {
            return Err(CoreError::Solver {
                status: sol.status,
                detail: if problem.pinned().is_some() {
                    "calibration QP infeasible with pinned prices; the observed prices are inconsistent with \
                     the observed storage or ramp pattern (retry with free prices)"
                        .into()
                } else {
                    "calibration QP infeasible; check active-set classification".into()
                },
            })
        }
        status => {
            return Err(CoreError::Solver {
                status,
                detail: format!(
                    "{} variables, {} rows, {} iterations, residuals {:?}",
                    inv.report.n_vars, inv.report.n_rows, sol.iterations, sol.kkt_residuals
                ),
            })
        }
    }
    Ok(extract(problem, &inv, &sol))
}

/// Solves with the penalized coefficients of every group with
/// `lambda >= SCREEN_LAMBDA` fixed at zero. The result is optimal for the
/// full problem when each fixed coefficient satisfies `|2 sum_t w e z| <=
/// lambda`; otherwise `None`.
fn screened_solve(
    problem: &CalibrationProblem,
    inv: &mut InverseQp,
    settings: &SolverSettings,
) -> Result<Option<CalibratedModel>> {
    let mut screened = Vec::new();
    for (i, lams) in problem.lambdas.iter().enumerate() {
        for (j, &lam) in lams.iter().enumerate() {
            if lam >= SCREEN_LAMBDA && inv.layout.coef[i][j].iter().any(|c| matches!(c, CoefCol::Split(..))) {
                screened.push((i, j));
            }
        }
    }
    if screened.is_empty() {
        return Ok(None);
    }
    let full = inv.problem.clone();
    for &(i, j) in &screened {
        for col in &inv.layout.coef[i][j] {
            if let CoefCol::Split(a, b) = *col {
                for v in [a, b] {
                    inv.problem.var_upper[v] = 0.0;
                    inv.problem.objective_linear[v] = 0.0;
                }
            }
        }
    }
    let sol = solve_qp(&inv.problem, settings)?;
    inv.problem = full;
    if sol.status != Status::Optimal {
        return Ok(None);
    }
    let x = &sol.primal;
    for &(i, j) in &screened {
        let design = &problem.designs[i].groups[j];
        let lam = problem.lambdas[i][j];
        for (c, col) in inv.layout.coef[i][j].iter().enumerate() {
            if !matches!(col, CoefCol::Split(..)) {
                continue;
            }
            let g: f64 = (0..inv.layout.n_periods)
                .map(|t| 2.0 * problem.weights[t] * x[inv.layout.eps[j][i][t]] * design.values[t][c])
                .sum();
            if g.abs() > lam {
                log::info!("screening rejected for technology {i} group {j}: gradient {g} above {lam}");
                return Ok(None);
            }
        }
    }
    Ok(Some(extract(problem, inv, &sol)))
}

fn extract(problem: &CalibrationProblem, inv: &InverseQp, sol: &QpSolution) -> CalibratedModel {
    let l = &inv.layout;
    let x = &sol.primal;
    let (n, tt) = (l.n_tech, l.n_periods);
    let grid =
        |cols: &Vec<Vec<usize>>| -> TechSeries { cols.iter().map(|r| r.iter().map(|&c| x[c]).collect()).collect() };

    let mut technologies = Vec::with_capacity(n);
    let mut penalty = 0.0;
    for i in 0..n {
        let groups: Vec<GroupModel> = (0..3)
            .map(|j| {
                let design = &problem.designs[i].groups[j];
                let coefficients: Vec<f64> = l.coef[i][j]
                    .iter()
                    .map(|col| match *col {
                        CoefCol::Free(a) => x[a],
                        CoefCol::Split(a, b) => x[a] - x[b],
                    })
                    .collect();
                let lam = problem.lambdas[i][j];
                penalty += lam
                    * coefficients
                        .iter()
                        .enumerate()
                        .filter(|(c, _)| design.intercept != Some(*c))
                        .map(|(_, b)| b.abs())
                        .sum::<f64>();
                GroupModel {
                    columns: design.columns.clone(),
                    intercept: design.intercept,
                    coefficients,
                    lambda: lam,
                    schema_hash: design.schema_hash(),
                }
            })
            .collect();
        let groups: [GroupModel; 3] = groups.try_into().expect("three groups");
        technologies.push(TechModel {
            technology: problem.scenario.technologies[i].clone(),
            groups,
            z1_condition: condition_number(&problem.designs[i].groups[0], &problem.weights),
        });
    }

    let residuals: [TechSeries; 3] = [grid(&l.eps[0]), grid(&l.eps[1]), grid(&l.eps[2])];
    let mut weighted = 0.0;
    for r in &residuals {
        for row in r {
            for (t, e) in row.iter().enumerate() {
                weighted += problem.weights[t] * e * e;
            }
        }
    }
    let split = |pairs: &Vec<Vec<DualCols>>| -> (TechSeries, TechSeries) {
        let mut up = vec![vec![0.0; tt]; n];
        let mut lo = vec![vec![0.0; tt]; n];
        for i in 0..n {
            for t in 0..tt {
                let (u, lw) = pairs[i][t].upper_lower(x);
                up[i][t] = u;
                lo[i][t] = lw;
            }
        }
        (up, lo)
    };
    let (alpha_upper, alpha_lower) = split(&l.output);
    let beta: Vec<(f64, f64)> = l.storage.iter().map(|d| d.upper_lower(x)).collect();
    debug_assert!(l.storage.iter().all(|d| d.net(x).is_finite()));

    let sc = &problem.scenario;
    CalibratedModel {
        version: MODEL_VERSION,
        technologies,
        feature_schema: None,
        binding_tol: problem.binding_tol,
        training: TrainingWindow {
            start: sc.timestamps.first().copied(),
            end: sc.timestamps.last().copied(),
            periods: tt,
            block_hours: problem.block_hours,
            prices_pinned: problem.pinned().is_some(),
        },
        objective: ObjectiveDecomposition {
            weighted_residuals: weighted,
            penalty,
            total: sol.objective_value,
        },
        structure: inv.report.clone(),
        fitted: Some(FittedValues {
            c1: grid(&l.c1),
            c2: grid(&l.c2),
            k: grid(&l.k),
            price: l.price.iter().map(|&c| x[c]).collect(),
            residuals,
            mu: l
                .mu
                .iter()
                .map(|r| r.iter().map(|c| c.map_or(0.0, |c| x[c])).collect())
                .collect(),
            storage_dual: l.storage_dual.iter().map(|&c| x[c]).collect(),
            alpha_upper,
            alpha_lower,
            beta_upper: beta.iter().map(|b| b.0).collect(),
            beta_lower: beta.iter().map(|b| b.1).collect(),
        }),
    }
}

/// Evaluates the cost regressions on new designs. `c2` and `k` are clamped
/// at zero.
pub fn predict_costs(model: &CalibratedModel, designs: &[TechDesign]) -> Result<CostCurves> {
    if designs.len() != model.technologies.len() {
        return Err(CoreError::Dimension(format!(
            "{} designs for {} technologies",
            designs.len(),
            model.technologies.len()
        )));
    }
    let periods = designs.first().map_or(0, |d| d.groups[0].values.len());
    let mut out: [TechSeries; 3] = Default::default();
    for (tm, design) in model.technologies.iter().zip(designs) {
        for j in 0..3 {
            let g = &tm.groups[j];
            let d = &design.groups[j];
            let found = d.schema_hash();
            if found != g.schema_hash {
                return Err(CoreError::SchemaMismatch {
                    expected: g.schema_hash.clone(),
                    found,
                });
            }
            d.validate(periods)?;
            let series: Vec<f64> = d
                .values
                .iter()
                .map(|row| {
                    let v: f64 = row.iter().zip(&g.coefficients).map(|(z, b)| z * b).sum();
                    if j == 0 {
                        v
                    } else {
                        v.max(0.0)
                    }
                })
                .collect();
            out[j].push(series);
        }
    }
    let [c1, c2, k] = out;
    Ok(CostCurves { c1, c2, k })
}
