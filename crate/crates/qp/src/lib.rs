//! Convex quadratic programs with a diagonal Hessian and sparse linear
//! constraints.
//!
//! ```text
//!     minimize    sum_i c1_i x_i + c2_i x_i^2
//!     subject to  row_lower <= A x <= row_upper
//!                 var_lower <= x   <= var_upper
//! ```
//!
//! [`solve_qp`] is a sparse primal-dual interior point method. [`brute_force_qp`]
//! enumerates active sets and serves as an independent oracle on tiny
//! instances. [`check_kkt`] certifies a primal-dual pair.

mod brute;
mod dense;
mod error;
mod ipm;
mod kkt;
mod ldl;
mod problem;

pub use brute::{brute_force_qp, BRUTE_FORCE_LIMIT};
pub use error::QpError;
pub use ipm::solve_qp;
pub use kkt::{check_kkt, kkt_residuals, to_non_positive, ConditionCheck, KktReport, NonPositiveDuals};
pub use problem::{KktResiduals, QpBuilder, QpProblem, QpSolution, SolverSettings, SparseMatrix, Status};
