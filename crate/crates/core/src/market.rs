//! Bottom-up dispatch model.
//!
//! The planner minimizes generation and ramping cost
//!
//! ```text
//!     min  sum_{i,t} c1_it x_it + c2_it x_it^2 + k_it r+_it
//!     s.t. 0 <= x_it <= Xcap_it
//!          sum_i x_it + y-_t - y+_t = d_t                  [price_t]
//!          s_t = s_{t-1} + eta y+_t - y-_t / eta           [storage_dual_t]
//!          0 <= s_t <= Scap_t, 0 <= y+_t <= Y+_t, 0 <= y-_t <= Y-_t
//!          x_it - x_{i,t-1} = r+_it - r-_it                 [mu_it]
//!          0 <= r+_it <= R+_it, 0 <= r-_it <= R-_it
//! ```
//!
//! `y+` charges the storage and `y-` discharges it. All duals reported in
//! [`DispatchSolution`] use the orientation in which every inequality
//! multiplier is non-positive and the demand multiplier is the price.

use std::ops::Range;

use chrono::{DateTime, Utc};
use ppa_qp::{solve_qp, KktResiduals, QpBuilder, QpProblem, QpSolution, SolverSettings, Status};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Per technology, per period values indexed `[i][t]`.
pub type TechSeries = Vec<Vec<f64>>;

pub const DEFAULT_EFFICIENCY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Technology {
    pub id: String,
    pub is_conventional: bool,
}

impl Technology {
    pub fn conventional(id: &str) -> Self {
        Self {
            id: id.to_string(),
            is_conventional: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketScenario {
    pub timestamps: Vec<DateTime<Utc>>,
    pub technologies: Vec<Technology>,
    /// Residual demand in MWh per hour. May be negative.
    pub demand: Vec<f64>,
    pub capacity: TechSeries,
    pub ramp_up: TechSeries,
    pub ramp_down: TechSeries,
    pub storage_energy_cap: Vec<f64>,
    /// Charging power limit (bounds `y+`).
    pub storage_charge_cap: Vec<f64>,
    /// Discharging power limit (bounds `y-`).
    pub storage_discharge_cap: Vec<f64>,
    pub storage_efficiency: f64,
    pub initial_storage: f64,
    /// Output in the period before the first one. When absent the first
    /// period carries no ramp.
    pub initial_output: Option<Vec<f64>>,
}

impl MarketScenario {
    /// A scenario without storage and without ramp limits.
    pub fn simple(technologies: Vec<Technology>, demand: Vec<f64>, capacity: TechSeries) -> Self {
        let t = demand.len();
        let n = technologies.len();
        let start = DateTime::<Utc>::from_timestamp(0, 0).unwrap();
        Self {
            timestamps: (0..t).map(|h| start + chrono::Duration::hours(h as i64)).collect(),
            technologies,
            demand,
            capacity,
            ramp_up: vec![vec![f64::INFINITY; t]; n],
            ramp_down: vec![vec![f64::INFINITY; t]; n],
            storage_energy_cap: vec![0.0; t],
            storage_charge_cap: vec![0.0; t],
            storage_discharge_cap: vec![0.0; t],
            storage_efficiency: DEFAULT_EFFICIENCY,
            initial_storage: 0.0,
            initial_output: None,
        }
    }

    pub fn n_tech(&self) -> usize {
        self.technologies.len()
    }

    pub fn n_periods(&self) -> usize {
        self.demand.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.n_periods();
        let n = self.n_tech();
        let per_t = [
            ("timestamps", self.timestamps.len()),
            ("storage_energy_cap", self.storage_energy_cap.len()),
            ("storage_charge_cap", self.storage_charge_cap.len()),
            ("storage_discharge_cap", self.storage_discharge_cap.len()),
        ];
        for (what, len) in per_t {
            if len != t {
                return Err(CoreError::Dimension(format!("{what} has {len} entries, expected {t}")));
            }
        }
        for (what, s) in [
            ("capacity", &self.capacity),
            ("ramp_up", &self.ramp_up),
            ("ramp_down", &self.ramp_down),
        ] {
            check_series(what, s, n, t)?;
            if s.iter().flatten().any(|v| v.is_nan() || *v < 0.0) {
                return Err(CoreError::InvalidInput(format!("{what} must be non-negative")));
            }
        }
        for i in 0..n {
            for j in 0..i {
                if self.technologies[i].id == self.technologies[j].id {
                    return Err(CoreError::InvalidInput(format!(
                        "duplicate technology {}",
                        self.technologies[i].id
                    )));
                }
            }
        }
        if self.demand.iter().any(|d| !d.is_finite()) {
            return Err(CoreError::InvalidInput("demand must be finite".into()));
        }
        for v in self
            .storage_energy_cap
            .iter()
            .chain(&self.storage_charge_cap)
            .chain(&self.storage_discharge_cap)
        {
            if v.is_nan() || *v < 0.0 {
                return Err(CoreError::InvalidInput("storage limits must be non-negative".into()));
            }
        }
        let eta = self.storage_efficiency;
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(CoreError::InvalidInput(format!(
                "storage efficiency {eta} outside (0, 1]"
            )));
        }
        let cap1 = self.storage_energy_cap.first().copied().unwrap_or(0.0);
        if self.initial_storage < 0.0 || self.initial_storage > cap1 {
            return Err(CoreError::InvalidInput(format!(
                "initial storage {} outside [0, {cap1}]",
                self.initial_storage
            )));
        }
        if let Some(x0) = &self.initial_output {
            if x0.len() != n {
                return Err(CoreError::Dimension(format!(
                    "initial_output has {} entries, expected {n}",
                    x0.len()
                )));
            }
        }
        Ok(())
    }

    /// Periods `range` as a stand-alone scenario with the same initial state.
    pub fn slice(&self, range: Range<usize>) -> Self {
        let cut = |s: &TechSeries| s.iter().map(|row| row[range.clone()].to_vec()).collect();
        Self {
            timestamps: self.timestamps[range.clone()].to_vec(),
            technologies: self.technologies.clone(),
            demand: self.demand[range.clone()].to_vec(),
            capacity: cut(&self.capacity),
            ramp_up: cut(&self.ramp_up),
            ramp_down: cut(&self.ramp_down),
            storage_energy_cap: self.storage_energy_cap[range.clone()].to_vec(),
            storage_charge_cap: self.storage_charge_cap[range.clone()].to_vec(),
            storage_discharge_cap: self.storage_discharge_cap[range].to_vec(),
            storage_efficiency: self.storage_efficiency,
            initial_storage: self.initial_storage,
            initial_output: self.initial_output.clone(),
        }
    }
}

fn check_series(what: &str, s: &TechSeries, n: usize, t: usize) -> Result<()> {
    if s.len() != n || s.iter().any(|row| row.len() != t) {
        return Err(CoreError::Dimension(format!("{what} must be {n} x {t}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCurves {
    /// EUR/MWh
    pub c1: TechSeries,
    /// EUR/MWh^2
    pub c2: TechSeries,
    /// EUR/MW of upward ramp
    pub k: TechSeries,
}

impl CostCurves {
    /// Time-invariant linear costs without ramping cost.
    pub fn linear(c1: &[f64], periods: usize) -> Self {
        Self {
            c1: c1.iter().map(|&c| vec![c; periods]).collect(),
            c2: vec![vec![0.0; periods]; c1.len()],
            k: vec![vec![0.0; periods]; c1.len()],
        }
    }

    pub fn slice(&self, range: Range<usize>) -> Self {
        let cut = |s: &TechSeries| s.iter().map(|row| row[range.clone()].to_vec()).collect();
        Self {
            c1: cut(&self.c1),
            c2: cut(&self.c2),
            k: cut(&self.k),
        }
    }

    fn validate(&self, n: usize, t: usize) -> Result<()> {
        check_series("c1", &self.c1, n, t)?;
        check_series("c2", &self.c2, n, t)?;
        check_series("k", &self.k, n, t)?;
        let all = self.c1.iter().chain(&self.c2).chain(&self.k).flatten();
        if all.clone().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidInput("cost coefficients must be finite".into()));
        }
        if self.c2.iter().flatten().any(|v| *v < 0.0) {
            return Err(CoreError::InvalidInput("c2 must be non-negative".into()));
        }
        Ok(())
    }
}

/// What to do with negative residual demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeDemand {
    /// Replace negative values by zero (logged).
    #[default]
    Clamp,
    /// Add a costless curtailment variable to every demand row.
    Curtail,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DispatchSettings {
    pub solver: SolverSettings,
    pub negative_demand: NegativeDemand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Output,
    Storage,
    Charge,
    Discharge,
    RampUp,
    RampDown,
    Curtailment,
}

/// Column layout of the forward QP: `x` (tech-major), `s`, `y+`, `y-`,
/// `r+`, `r-`, and optionally one curtailment column per period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarIndex {
    pub n_tech: usize,
    pub n_periods: usize,
    pub curtailment: bool,
}

impl VarIndex {
    pub fn n_vars(&self) -> usize {
        let (n, t) = (self.n_tech, self.n_periods);
        3 * n * t + 3 * t + if self.curtailment { t } else { 0 }
    }

    /// Column of `(role, i, t)`. `i` is ignored for per-period roles.
    pub fn col(&self, role: Role, i: usize, t: usize) -> usize {
        let (n, tt) = (self.n_tech, self.n_periods);
        match role {
            Role::Output => i * tt + t,
            Role::Storage => n * tt + t,
            Role::Charge => n * tt + tt + t,
            Role::Discharge => n * tt + 2 * tt + t,
            Role::RampUp => n * tt + 3 * tt + i * tt + t,
            Role::RampDown => 2 * n * tt + 3 * tt + i * tt + t,
            Role::Curtailment => 3 * n * tt + 3 * tt + t,
        }
    }

    /// Inverse of [`VarIndex::col`]; per-period roles report `i = 0`.
    pub fn role_of(&self, col: usize) -> Option<(Role, usize, usize)> {
        let (n, tt) = (self.n_tech, self.n_periods);
        let nt = n * tt;
        if col >= self.n_vars() {
            return None;
        }
        Some(if col < nt {
            (Role::Output, col / tt, col % tt)
        } else if col < nt + 3 * tt {
            let k = col - nt;
            let role = [Role::Storage, Role::Charge, Role::Discharge][k / tt];
            (role, 0, k % tt)
        } else if col < 2 * nt + 3 * tt {
            let k = col - nt - 3 * tt;
            (Role::RampUp, k / tt, k % tt)
        } else if col < 3 * nt + 3 * tt {
            let k = col - 2 * nt - 3 * tt;
            (Role::RampDown, k / tt, k % tt)
        } else {
            (Role::Curtailment, 0, col - 3 * nt - 3 * tt)
        })
    }
}

/// The forward QP together with its layout.
#[derive(Debug, Clone)]
pub struct ForwardQp {
    pub problem: QpProblem,
    pub index: VarIndex,
    /// Demand right-hand side actually used (after clamping).
    pub demand: Vec<f64>,
    pub demand_rows: Vec<usize>,
    pub storage_rows: Vec<usize>,
    /// Ramp row of `(i, t)`; `None` for the first period without initial
    /// output.
    pub ramp_rows: Vec<Vec<Option<usize>>>,
}

pub fn build_forward_qp(scenario: &MarketScenario, costs: &CostCurves) -> Result<ForwardQp> {
    build_forward_qp_with(scenario, costs, NegativeDemand::Clamp)
}

pub fn build_forward_qp_with(
    scenario: &MarketScenario,
    costs: &CostCurves,
    policy: NegativeDemand,
) -> Result<ForwardQp> {
    scenario.validate()?;
    let (n, tt) = (scenario.n_tech(), scenario.n_periods());
    costs.validate(n, tt)?;
    let index = VarIndex {
        n_tech: n,
        n_periods: tt,
        curtailment: policy == NegativeDemand::Curtail,
    };

    let demand: Vec<f64> = match policy {
        NegativeDemand::Clamp => {
            let negative = scenario.demand.iter().filter(|d| **d < 0.0).count();
            if negative > 0 {
                log::warn!("clamping {negative} periods of negative residual demand to zero");
            }
            scenario.demand.iter().map(|d| d.max(0.0)).collect()
        }
        NegativeDemand::Curtail => scenario.demand.clone(),
    };

    let mut b = QpBuilder::new();
    for i in 0..n {
        for t in 0..tt {
            b.add_var(0.0, scenario.capacity[i][t], costs.c1[i][t], costs.c2[i][t]);
        }
    }
    for t in 0..tt {
        b.add_var(0.0, scenario.storage_energy_cap[t], 0.0, 0.0);
    }
    for t in 0..tt {
        b.add_var(0.0, scenario.storage_charge_cap[t], 0.0, 0.0);
    }
    for t in 0..tt {
        b.add_var(0.0, scenario.storage_discharge_cap[t], 0.0, 0.0);
    }
    let free_start = scenario.initial_output.is_none();
    for (limits, cost) in [(&scenario.ramp_up, Some(&costs.k)), (&scenario.ramp_down, None)] {
        for i in 0..n {
            // An unlimited ramp is capped by the largest possible output change
            // so that the zero-cost direction r+ = r- stays bounded.
            let swing = scenario.capacity[i].iter().fold(0.0f64, |a, &c| a.max(c));
            for t in 0..tt {
                let upper = if t == 0 && free_start {
                    0.0
                } else {
                    limits[i][t].min(swing)
                };
                let c = cost.map_or(0.0, |k| k[i][t]);
                b.add_var(0.0, upper, c, 0.0);
            }
        }
    }
    if index.curtailment {
        for _ in 0..tt {
            b.add_var(0.0, f64::INFINITY, 0.0, 0.0);
        }
    }

    let mut demand_rows = Vec::with_capacity(tt);
    for t in 0..tt {
        let mut coefs: Vec<(usize, f64)> = (0..n).map(|i| (index.col(Role::Output, i, t), 1.0)).collect();
        coefs.push((index.col(Role::Discharge, 0, t), 1.0));
        coefs.push((index.col(Role::Charge, 0, t), -1.0));
        if index.curtailment {
            coefs.push((index.col(Role::Curtailment, 0, t), -1.0));
        }
        demand_rows.push(b.add_row(&coefs, demand[t], demand[t]));
    }
    let eta = scenario.storage_efficiency;
    let mut storage_rows = Vec::with_capacity(tt);
    for t in 0..tt {
        let mut coefs = vec![
            (index.col(Role::Storage, 0, t), 1.0),
            (index.col(Role::Charge, 0, t), -eta),
            (index.col(Role::Discharge, 0, t), 1.0 / eta),
        ];
        let rhs = if t == 0 {
            scenario.initial_storage
        } else {
            coefs.push((index.col(Role::Storage, 0, t - 1), -1.0));
            0.0
        };
        storage_rows.push(b.add_row(&coefs, rhs, rhs));
    }
    let mut ramp_rows = vec![vec![None; tt]; n];
    for (i, rows) in ramp_rows.iter_mut().enumerate() {
        for (t, row) in rows.iter_mut().enumerate() {
            let mut coefs = vec![
                (index.col(Role::Output, i, t), 1.0),
                (index.col(Role::RampUp, i, t), -1.0),
                (index.col(Role::RampDown, i, t), 1.0),
            ];
            let rhs = if t == 0 {
                match &scenario.initial_output {
                    Some(x0) => x0[i],
                    None => continue,
                }
            } else {
                coefs.push((index.col(Role::Output, i, t - 1), -1.0));
                0.0
            };
            *row = Some(b.add_row(&coefs, rhs, rhs));
        }
    }

    Ok(ForwardQp {
        problem: b.build()?,
        index,
        demand,
        demand_rows,
        storage_rows,
        ramp_rows,
    })
}

/// Primal dispatch and all multipliers. Inequality multipliers are
/// non-positive; `price` and `storage_dual` are the multipliers of the
/// demand and storage balance rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub x: TechSeries,
    pub s: Vec<f64>,
    pub y_plus: Vec<f64>,
    pub y_minus: Vec<f64>,
    pub r_plus: TechSeries,
    pub r_minus: TechSeries,
    pub curtailment: Vec<f64>,
    pub price: Vec<f64>,
    pub storage_dual: Vec<f64>,
    pub alpha_upper: TechSeries,
    pub alpha_lower: TechSeries,
    pub beta_upper: Vec<f64>,
    pub beta_lower: Vec<f64>,
    pub gamma_plus_upper: Vec<f64>,
    pub gamma_plus_lower: Vec<f64>,
    pub gamma_minus_upper: Vec<f64>,
    pub gamma_minus_lower: Vec<f64>,
    pub delta_upper: TechSeries,
    pub delta_lower: TechSeries,
    pub theta_upper: TechSeries,
    pub theta_lower: TechSeries,
    /// Ramp row multipliers; zero where the row is absent.
    pub mu: TechSeries,
    pub objective: f64,
    #[serde(skip)]
    pub kkt: KktResiduals,
}

impl DispatchSolution {
    /// Reads an optimal QP solution of `forward`.
    pub fn from_qp(forward: &ForwardQp, sol: &QpSolution) -> Self {
        let ix = forward.index;
        let (n, tt) = (ix.n_tech, ix.n_periods);
        let per_t =
            |role: Role, v: &[f64], sign: f64| -> Vec<f64> { (0..tt).map(|t| sign * v[ix.col(role, 0, t)]).collect() };
        let per_it = |role: Role, v: &[f64], sign: f64| -> TechSeries {
            (0..n)
                .map(|i| (0..tt).map(|t| sign * v[ix.col(role, i, t)]).collect())
                .collect()
        };
        let (x, zl, zu) = (&sol.primal, &sol.dual_bounds_lower, &sol.dual_bounds_upper);
        let y = &sol.dual_general;
        Self {
            x: per_it(Role::Output, x, 1.0),
            s: per_t(Role::Storage, x, 1.0),
            y_plus: per_t(Role::Charge, x, 1.0),
            y_minus: per_t(Role::Discharge, x, 1.0),
            r_plus: per_it(Role::RampUp, x, 1.0),
            r_minus: per_it(Role::RampDown, x, 1.0),
            curtailment: if ix.curtailment {
                per_t(Role::Curtailment, x, 1.0)
            } else {
                vec![0.0; tt]
            },
            price: forward.demand_rows.iter().map(|&r| -y[r]).collect(),
            storage_dual: forward.storage_rows.iter().map(|&r| y[r]).collect(),
            alpha_upper: per_it(Role::Output, zu, -1.0),
            alpha_lower: per_it(Role::Output, zl, -1.0),
            beta_upper: per_t(Role::Storage, zu, -1.0),
            beta_lower: per_t(Role::Storage, zl, -1.0),
            gamma_plus_upper: per_t(Role::Charge, zu, -1.0),
            gamma_plus_lower: per_t(Role::Charge, zl, -1.0),
            gamma_minus_upper: per_t(Role::Discharge, zu, -1.0),
            gamma_minus_lower: per_t(Role::Discharge, zl, -1.0),
            delta_upper: per_it(Role::RampUp, zu, -1.0),
            delta_lower: per_it(Role::RampUp, zl, -1.0),
            theta_upper: per_it(Role::RampDown, zu, -1.0),
            theta_lower: per_it(Role::RampDown, zl, -1.0),
            mu: forward
                .ramp_rows
                .iter()
                .map(|rows| rows.iter().map(|r| r.map_or(0.0, |r| -y[r])).collect())
                .collect(),
            objective: sol.objective_value,
            kkt: sol.kkt_residuals,
        }
    }

    pub fn n_periods(&self) -> usize {
        self.price.len()
    }

    fn concat(parts: Vec<DispatchSolution>) -> Self {
        let mut it = parts.into_iter();
        let mut acc = it.next().expect("at least one window");
        for p in it {
            let join = |a: &mut TechSeries, b: TechSeries| {
                for (ra, rb) in a.iter_mut().zip(b) {
                    ra.extend(rb);
                }
            };
            join(&mut acc.x, p.x);
            join(&mut acc.r_plus, p.r_plus);
            join(&mut acc.r_minus, p.r_minus);
            join(&mut acc.alpha_upper, p.alpha_upper);
            join(&mut acc.alpha_lower, p.alpha_lower);
            join(&mut acc.delta_upper, p.delta_upper);
            join(&mut acc.delta_lower, p.delta_lower);
            join(&mut acc.theta_upper, p.theta_upper);
            join(&mut acc.theta_lower, p.theta_lower);
            join(&mut acc.mu, p.mu);
            acc.s.extend(p.s);
            acc.y_plus.extend(p.y_plus);
            acc.y_minus.extend(p.y_minus);
            acc.curtailment.extend(p.curtailment);
            acc.price.extend(p.price);
            acc.storage_dual.extend(p.storage_dual);
            acc.beta_upper.extend(p.beta_upper);
            acc.beta_lower.extend(p.beta_lower);
            acc.gamma_plus_upper.extend(p.gamma_plus_upper);
            acc.gamma_plus_lower.extend(p.gamma_plus_lower);
            acc.gamma_minus_upper.extend(p.gamma_minus_upper);
            acc.gamma_minus_lower.extend(p.gamma_minus_lower);
            acc.objective += p.objective;
            let k = &mut acc.kkt;
            k.stationarity_inf_norm = k.stationarity_inf_norm.max(p.kkt.stationarity_inf_norm);
            k.primal_inf_norm = k.primal_inf_norm.max(p.kkt.primal_inf_norm);
            k.dual_inf_norm = k.dual_inf_norm.max(p.kkt.dual_inf_norm);
            k.complementarity_inf_norm = k.complementarity_inf_norm.max(p.kkt.complementarity_inf_norm);
        }
        acc
    }
}

/// Largest per-period shortfall of generation plus storage discharge power.
fn capacity_shortfall(scenario: &MarketScenario, demand: &[f64]) -> Option<(usize, f64)> {
    let mut worst: Option<(usize, f64)> = None;
    for (t, &d) in demand.iter().enumerate() {
        let supply: f64 = scenario.capacity.iter().map(|row| row[t]).sum::<f64>() + scenario.storage_discharge_cap[t];
        let gap = d - supply;
        if gap > 1e-9 * d.abs().max(1.0) && worst.is_none_or(|(_, g)| gap > g) {
            worst = Some((t, gap));
        }
    }
    worst
}

pub fn solve_dispatch(
    scenario: &MarketScenario,
    costs: &CostCurves,
    settings: &DispatchSettings,
) -> Result<DispatchSolution> {
    let forward = build_forward_qp_with(scenario, costs, settings.negative_demand)?;
    if let Some((period, gap)) = capacity_shortfall(scenario, &forward.demand) {
        return Err(CoreError::Infeasible { period, gap });
    }
    let sol = solve_qp(&forward.problem, &settings.solver)?;
    match sol.status {
        Status::Optimal => Ok(DispatchSolution::from_qp(&forward, &sol)),
        Status::Infeasible => Err(CoreError::InfeasibleCoupled),
        status => Err(CoreError::Solver {
            status,
            detail: format!(
                "{} periods, {} iterations, residuals {:?}",
                scenario.n_periods(),
                sol.iterations,
                sol.kkt_residuals
            ),
        }),
    }
}

/// Price set by the static merit order: the cost of the cheapest unit whose
/// cumulative capacity covers `demand`. Ties keep input order.
pub fn merit_order_price(c1: &[f64], caps: &[f64], demand: f64) -> Result<f64> {
    if c1.len() != caps.len() {
        return Err(CoreError::Dimension(format!(
            "{} costs for {} capacities",
            c1.len(),
            caps.len()
        )));
    }
    if caps.iter().any(|c| c.is_nan() || *c < 0.0) {
        return Err(CoreError::InvalidInput("capacities must be non-negative".into()));
    }
    let mut order: Vec<usize> = (0..c1.len()).collect();
    order.sort_by(|&a, &b| c1[a].total_cmp(&c1[b]));
    let mut cumulative = 0.0;
    for i in order {
        cumulative += caps[i];
        if cumulative >= demand {
            return Ok(c1[i]);
        }
    }
    Err(CoreError::InvalidInput(format!(
        "demand {demand} exceeds total capacity {cumulative}"
    )))
}

/// Solves consecutive windows of `window_hours` periods and concatenates
/// them. With `carryover` the final storage level and output of a window seed
/// the next; without it every window starts from the scenario's initial state
/// and windows are solved in parallel.
pub fn rolling_horizon_dispatch(
    scenario: &MarketScenario,
    costs: &CostCurves,
    settings: &DispatchSettings,
    window_hours: usize,
    carryover: bool,
) -> Result<DispatchSolution> {
    if window_hours < 24 {
        return Err(CoreError::InvalidInput(format!(
            "window of {window_hours} hours is shorter than 24"
        )));
    }
    scenario.validate()?;
    costs.validate(scenario.n_tech(), scenario.n_periods())?;
    let tt = scenario.n_periods();
    if tt == 0 {
        return Err(CoreError::InvalidInput("empty horizon".into()));
    }
    let windows: Vec<Range<usize>> = (0..tt)
        .step_by(window_hours)
        .map(|a| a..(a + window_hours).min(tt))
        .collect();
    let wrap = |w: usize| {
        move |e: CoreError| CoreError::Window {
            window: w,
            source: Box::new(e),
        }
    };

    let parts = if carryover {
        let mut parts: Vec<DispatchSolution> = Vec::with_capacity(windows.len());
        for (w, range) in windows.iter().enumerate() {
            let mut sub = scenario.slice(range.clone());
            if let Some(prev) = parts.last() {
                let last = prev.n_periods() - 1;
                // Guard against solver round-off pushing the level past the
                // next window's bounds.
                sub.initial_storage = prev.s[last].clamp(0.0, sub.storage_energy_cap[0]);
                sub.initial_output = Some(prev.x.iter().map(|row| row[last]).collect());
            }
            parts.push(solve_dispatch(&sub, &costs.slice(range.clone()), settings).map_err(wrap(w))?);
        }
        parts
    } else {
        windows
            .par_iter()
            .enumerate()
            .map(|(w, range)| {
                solve_dispatch(&scenario.slice(range.clone()), &costs.slice(range.clone()), settings).map_err(wrap(w))
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(DispatchSolution::concat(parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn techs(n: usize) -> Vec<Technology> {
        (0..n).map(|i| Technology::conventional(&format!("t{i}"))).collect()
    }

    #[test]
    fn variable_count_for_two_techs_three_periods() {
        let sc = MarketScenario::simple(techs(2), vec![1.0; 3], vec![vec![5.0; 3]; 2]);
        let f = build_forward_qp(&sc, &CostCurves::linear(&[1.0, 2.0], 3)).unwrap();
        assert_eq!(f.problem.n_vars(), 27);
    }

    #[test]
    fn index_map_is_a_bijection() {
        let ix = VarIndex {
            n_tech: 3,
            n_periods: 5,
            curtailment: true,
        };
        let mut seen = vec![false; ix.n_vars()];
        for role in [Role::Output, Role::RampUp, Role::RampDown] {
            for i in 0..3 {
                for t in 0..5 {
                    let c = ix.col(role, i, t);
                    assert!(!seen[c]);
                    seen[c] = true;
                    assert_eq!(ix.role_of(c), Some((role, i, t)));
                }
            }
        }
        for role in [Role::Storage, Role::Charge, Role::Discharge, Role::Curtailment] {
            for t in 0..5 {
                let c = ix.col(role, 0, t);
                assert!(!seen[c]);
                seen[c] = true;
                assert_eq!(ix.role_of(c), Some((role, 0, t)));
            }
        }
        assert!(seen.iter().all(|s| *s));
        assert_eq!(ix.role_of(ix.n_vars()), None);
    }

    #[test]
    fn first_period_storage_row() {
        let mut sc = MarketScenario::simple(techs(1), vec![1.0], vec![vec![5.0]]);
        sc.storage_energy_cap = vec![10.0];
        let f = build_forward_qp(&sc, &CostCurves::linear(&[1.0], 1)).unwrap();
        let row = f.storage_rows[0];
        let a = &f.problem.constraints;
        assert_eq!(a.row_nnz(row), 3);
        assert_eq!(a.get(row, f.index.col(Role::Storage, 0, 0)), 1.0);
        assert_eq!(a.get(row, f.index.col(Role::Charge, 0, 0)), -0.9);
        assert!((a.get(row, f.index.col(Role::Discharge, 0, 0)) - 1.0 / 0.9).abs() < 1e-15);
        assert_eq!(f.problem.row_lower[row], 0.0);
    }

    #[test]
    fn single_technology_sets_price() {
        let sc = MarketScenario::simple(techs(1), vec![50.0; 4], vec![vec![100.0; 4]]);
        let sol = solve_dispatch(&sc, &CostCurves::linear(&[10.0], 4), &DispatchSettings::default()).unwrap();
        for p in &sol.price {
            assert!((p - 10.0).abs() < 1e-7, "{p}");
        }
    }

    #[test]
    fn shortfall_names_the_period() {
        let sc = MarketScenario::simple(techs(1), vec![50.0, 150.0], vec![vec![100.0; 2]]);
        match solve_dispatch(&sc, &CostCurves::linear(&[10.0], 2), &DispatchSettings::default()) {
            Err(CoreError::Infeasible { period, gap }) => {
                assert_eq!(period, 1);
                assert!((gap - 50.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn merit_order_examples() {
        assert_eq!(merit_order_price(&[10.0, 30.0], &[50.0, 50.0], 75.0).unwrap(), 30.0);
        assert_eq!(merit_order_price(&[10.0, 30.0], &[50.0, 50.0], 25.0).unwrap(), 10.0);
        assert!(merit_order_price(&[10.0, 30.0], &[50.0, 50.0], 110.0).is_err());
    }

    #[test]
    fn curtailment_absorbs_negative_demand() {
        let sc = MarketScenario::simple(techs(1), vec![-5.0, 10.0], vec![vec![20.0; 2]]);
        let settings = DispatchSettings {
            negative_demand: NegativeDemand::Curtail,
            ..Default::default()
        };
        let sol = solve_dispatch(&sc, &CostCurves::linear(&[10.0], 2), &settings).unwrap();
        assert!((sol.curtailment[0] - 5.0).abs() < 1e-6);
        assert!(sol.x[0][0].abs() < 1e-6);
    }
}
