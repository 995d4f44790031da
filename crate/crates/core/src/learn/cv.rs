//! K-fold cross-validation over a penalty grid with contiguous folds.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub trait Predictor {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64>;
}

impl Predictor for super::LassoModel {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        super::LassoModel::predict(self, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best_lambda: f64,
    /// Grid in ascending order.
    pub lambdas: Vec<f64>,
    /// Mean validation weighted MSE per grid entry.
    pub mean_losses: Vec<f64>,
}

/// Row ranges of `k` contiguous folds over `n` rows.
pub fn contiguous_folds(n: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    (0..k).map(|f| f * n / k..(f + 1) * n / k).collect()
}

fn take_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |r, c| x[(rows[r], c)])
}

/// Returns the grid value with the lowest mean validation loss; ties go to
/// the smallest penalty. Folds whose validation weights sum to zero are
/// skipped.
pub fn cross_validate<M, F>(
    fit: F,
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    k: usize,
    lambda_grid: &[f64],
) -> Result<CvResult>
where
    M: Predictor,
    F: Fn(&DMatrix<f64>, &[f64], &[f64], f64) -> Result<M> + Sync,
{
    if lambda_grid.is_empty() {
        return Err(CoreError::InvalidInput("empty penalty grid".into()));
    }
    if k < 2 {
        return Err(CoreError::InvalidInput(format!("{k} folds; need at least 2")));
    }
    let n = x.nrows();
    if n < k {
        return Err(CoreError::InvalidInput(format!("{n} rows cannot form {k} folds")));
    }
    if y.len() != n || w.len() != n {
        return Err(CoreError::Dimension("targets and weights must match the design".into()));
    }
    let mut lambdas = lambda_grid.to_vec();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();

    let folds = contiguous_folds(n, k);
    let per_fold: Vec<Vec<Option<f64>>> = folds
        .par_iter()
        .map(|valid| {
            let train: Vec<usize> = (0..n).filter(|r| !valid.contains(r)).collect();
            let test: Vec<usize> = valid.clone().collect();
            let wt: f64 = test.iter().map(|&r| w[r]).sum();
            if wt <= 0.0 {
                return Ok(vec![None; lambdas.len()]);
            }
            let (xtr, xte) = (take_rows(x, &train), take_rows(x, &test));
            let ytr: Vec<f64> = train.iter().map(|&r| y[r]).collect();
            let wtr: Vec<f64> = train.iter().map(|&r| w[r]).collect();
            lambdas
                .iter()
                .map(|&l| {
                    let model = fit(&xtr, &ytr, &wtr, l)?;
                    let pred = model.predict(&xte);
                    let loss: f64 = test.iter().zip(&pred).map(|(&r, p)| w[r] * (y[r] - p).powi(2)).sum();
                    Ok(Some(loss / wt))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut mean_losses = Vec::with_capacity(lambdas.len());
    for g in 0..lambdas.len() {
        let vals: Vec<f64> = per_fold.iter().filter_map(|f| f[g]).collect();
        if vals.is_empty() {
            return Err(CoreError::InvalidInput("every validation fold has zero weight".into()));
        }
        mean_losses.push(vals.iter().sum::<f64>() / vals.len() as f64);
    }
    let mut best = 0;
    for g in 1..lambdas.len() {
        if mean_losses[g] < mean_losses[best] {
            best = g;
        }
    }
    Ok(CvResult {
        best_lambda: lambdas[best],
        lambdas,
        mean_losses,
    })
}

/// `count` penalties spaced evenly in log scale from `hi` down to
/// `hi * ratio`, plus zero.
pub fn log_grid(hi: f64, ratio: f64, count: usize) -> Vec<f64> {
    let mut g = vec![0.0];
    if hi > 0.0 && count > 0 {
        let step = if count > 1 {
            ratio.ln() / (count - 1) as f64
        } else {
            0.0
        };
        g.extend((0..count).map(|i| hi * (step * i as f64).exp()));
    }
    g
}
