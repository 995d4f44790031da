//! Regression baselines and hyperparameter search.

pub mod cmaes;
pub mod cv;
pub mod lasso;

pub use cmaes::{cmaes_minimize, CmaesOptions, CmaesResult};
pub use cv::{contiguous_folds, cross_validate, log_grid, CvResult, Predictor};
pub use lasso::{fit_lasso_cd, lambda_max, soft_threshold, LassoModel};
