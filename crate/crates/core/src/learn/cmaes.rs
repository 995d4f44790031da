//! (mu/mu_w, lambda)-CMA-ES with cumulative step-size adaptation.
//!
//! Default strategy parameters follow Hansen's tutorial. Candidates may be
//! confined to a box; out-of-box samples are projected before evaluation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CmaesOptions {
    pub sigma0: f64,
    /// Maximum number of objective evaluations.
    pub budget: usize,
    pub seed: u64,
    /// Optional box `(lower, upper)`.
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
    /// Population size; `None` uses `4 + floor(3 ln n)`.
    pub population: Option<usize>,
}

impl Default for CmaesOptions {
    fn default() -> Self {
        Self {
            sigma0: 1.0,
            budget: 2000,
            seed: 0,
            bounds: None,
            population: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaesResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub evaluations_used: usize,
    /// Best value found so far, after each generation.
    pub trace: Vec<f64>,
}

pub fn default_population(dim: usize) -> usize {
    4 + (3.0 * (dim as f64).ln()).floor() as usize
}

pub fn cmaes_minimize<F>(objective: F, x0: &[f64], opts: &CmaesOptions) -> Result<CmaesResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x0.len();
    if n == 0 {
        return Err(CoreError::InvalidInput("CMA-ES needs at least one dimension".into()));
    }
    let lambda = opts.population.unwrap_or_else(|| default_population(n)).max(2);
    if opts.budget < lambda {
        return Err(CoreError::InvalidInput(format!(
            "budget {} is smaller than one generation of {lambda}",
            opts.budget
        )));
    }
    if !(opts.sigma0 > 0.0) {
        return Err(CoreError::InvalidInput("sigma0 must be positive".into()));
    }
    if let Some((lo, hi)) = &opts.bounds {
        if lo.len() != n || hi.len() != n || lo.iter().zip(hi).any(|(l, h)| l > h) {
            return Err(CoreError::InvalidInput("malformed bounds".into()));
        }
    }
    let project = |x: &mut DVector<f64>| {
        if let Some((lo, hi)) = &opts.bounds {
            for i in 0..n {
                x[i] = x[i].clamp(lo[i], hi[i]);
            }
        }
    };

    let nf = n as f64;
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu)
        .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln())
        .collect();
    let wsum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / wsum).collect();
    let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
    let cs = (mueff + 2.0) / (nf + mueff + 5.0);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
    let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
    let damps = 1.0 + 2.0 * (0.0f64).max(((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0) + cs;
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut mean = DVector::from_column_slice(x0);
    project(&mut mean);
    let mut sigma = opts.sigma0;
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut basis = DMatrix::<f64>::identity(n, n);
    let mut scales = DVector::<f64>::from_element(n, 1.0);
    let mut pc = DVector::<f64>::zeros(n);
    let mut ps = DVector::<f64>::zeros(n);

    let mut best_point = mean.as_slice().to_vec();
    let mut best_value = f64::INFINITY;
    let mut evaluations = 0;
    let mut trace = Vec::new();
    let mut generation = 0usize;

    while evaluations + lambda <= opts.budget {
        generation += 1;
        let zs: Vec<DVector<f64>> = (0..lambda)
            .map(|_| DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let candidates: Vec<(DVector<f64>, DVector<f64>)> = zs
            .iter()
            .map(|z| {
                let y = &basis * z.component_mul(&scales);
                let mut x = &mean + &y * sigma;
                project(&mut x);
                // Steps are measured from the point actually evaluated.
                let y = (&x - &mean) / sigma;
                (x, y)
            })
            .collect();
        let values: Vec<f64> = candidates
            .par_iter()
            .map(|(x, _)| {
                let v = objective(x.as_slice());
                if v.is_finite() {
                    v
                } else {
                    log::debug!("rejecting point with non-finite objective");
                    f64::INFINITY
                }
            })
            .collect();
        evaluations += lambda;

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        if values[order[0]] < best_value {
            best_value = values[order[0]];
            best_point = candidates[order[0]].0.as_slice().to_vec();
        }
        trace.push(best_value);
        if values[order[0]] == f64::INFINITY {
            continue;
        }

        let old_mean = mean.clone();
        let mut y_w = DVector::<f64>::zeros(n);
        for (k, &idx) in order.iter().take(mu).enumerate() {
            y_w += &candidates[idx].1 * weights[k];
        }
        mean = &old_mean + &y_w * sigma;
        project(&mut mean);

        // C^{-1/2} y_w = B D^{-1} B' y_w
        let inv_sqrt = &basis * DMatrix::from_diagonal(&scales.map(|d| 1.0 / d)) * basis.transpose();
        ps = &ps * (1.0 - cs) + (&inv_sqrt * &y_w) * (cs * (2.0 - cs) * mueff).sqrt();
        let ps_norm = ps.norm();
        let hsig = ps_norm / (1.0 - (1.0 - cs).powi(2 * generation as i32)).sqrt() / chi_n < 1.4 + 2.0 / (nf + 1.0);
        let hs = if hsig { 1.0 } else { 0.0 };
        pc = &pc * (1.0 - cc) + &y_w * (hs * (cc * (2.0 - cc) * mueff).sqrt());

        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (k, &idx) in order.iter().take(mu).enumerate() {
            let y = &candidates[idx].1;
            rank_mu += (y * y.transpose()) * weights[k];
        }
        cov = &cov * (1.0 - c1 - cmu)
            + (&pc * pc.transpose() + &cov * ((1.0 - hs) * cc * (2.0 - cc))) * c1
            + rank_mu * cmu;
        cov = (&cov + cov.transpose()) * 0.5;
        sigma *= ((cs / damps) * (ps_norm / chi_n - 1.0)).exp();

        let eig = SymmetricEigen::new(cov.clone());
        basis = eig.eigenvectors;
        scales = eig.eigenvalues.map(|e| e.max(1e-300).sqrt());
        if !sigma.is_finite() || sigma * scales.max() < 1e-15 * (1.0 + mean.amax()) {
            break;
        }
    }

    Ok(CmaesResult {
        best_point,
        best_value,
        evaluations_used: evaluations,
        trace,
    })
}
