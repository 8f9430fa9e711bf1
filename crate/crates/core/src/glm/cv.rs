//! Penalty path construction and K-fold selection of the penalty.

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::solver::{fit_lasso_logistic, fit_raw, Design};
use super::{log_predictive_likelihood, FittedModel, GlmOptions};
use crate::error::{PhcError, Result};
use crate::math::{clip_probability, sigmoid};

/// Strictly decreasing, log-spaced penalty grid starting at `lambda_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPath {
    values: Vec<f64>,
    pub eps_ratio: f64,
}

impl LambdaPath {
    pub fn from_lambda_max(lambda_max: f64, n_lambda: usize, eps_ratio: f64) -> LambdaPath {
        let values = if lambda_max <= 0.0 || n_lambda == 0 {
            vec![0.0]
        } else if n_lambda == 1 {
            vec![lambda_max]
        } else {
            let step = eps_ratio.ln() / (n_lambda - 1) as f64;
            (0..n_lambda)
                .map(|k| {
                    if k == n_lambda - 1 {
                        lambda_max * eps_ratio
                    } else {
                        lambda_max * (step * k as f64).exp()
                    }
                })
                .collect()
        };
        LambdaPath { values, eps_ratio }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn make_lambda_path(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    n_lambda: usize,
    eps_ratio: f64,
) -> Result<LambdaPath> {
    if !(eps_ratio > 0.0 && eps_ratio < 1.0) {
        return Err(PhcError::InvalidInput(format!(
            "eps_ratio must lie in (0, 1), got {eps_ratio}"
        )));
    }
    if x.nrows() != y.len() {
        return Err(PhcError::DimensionMismatch {
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    let lmax = Design::new(x).lambda_max(y);
    Ok(LambdaPath::from_lambda_max(lmax.value, n_lambda, eps_ratio))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub lambda: f64,
    /// Held-out log-likelihood averaged over folds.
    pub mean_loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSelection {
    pub lambda: f64,
    pub curve: Vec<CvPoint>,
    /// False when class counts were too small to stratify the folds.
    pub stratified: bool,
}

/// Fold index per row. Stratified by class when both classes have at least
/// `k` members; otherwise a plain shuffle.
fn make_folds(y: &[f64], k: usize, seed: u64) -> (Vec<usize>, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; y.len()];
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| y[i] > 0.5);
    let stratified = pos.len() >= k && neg.len() >= k;
    if stratified {
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        for (slot, &i) in pos.iter().chain(&neg).enumerate() {
            folds[i] = slot % k;
        }
    } else {
        let mut all: Vec<usize> = (0..y.len()).collect();
        all.shuffle(&mut rng);
        for (slot, &i) in all.iter().enumerate() {
            folds[i] = slot % k;
        }
    }
    (folds, stratified)
}

fn fold_curve(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    folds: &[usize],
    fold: usize,
    path: &LambdaPath,
    opts: &GlmOptions,
) -> Vec<f64> {
    let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != fold).collect();
    let test: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == fold).collect();
    let x_train = x.select(Axis(0), &train);
    let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let y_test: Vec<f64> = test.iter().map(|&i| y[i]).collect();
    let design = Design::new(x_train.view());
    let test_design =
        Design::with_standardization(x.select(Axis(0), &test).view(), design.standardization());

    let mut warm: Option<(f64, Vec<f64>)> = None;
    path.values()
        .iter()
        .map(|&lambda| {
            let fit = fit_raw(
                &design,
                &y_train,
                lambda,
                warm.as_ref().map(|(b0, beta)| (*b0, beta.as_slice())),
                opts.cv_tol,
                opts,
            );
            match fit {
                Ok(fit) => {
                    let p: Vec<f64> = fit
                        .eta(&test_design)
                        .into_iter()
                        .map(|e| clip_probability(sigmoid(e)))
                        .collect();
                    warm = Some((fit.b0, fit.beta));
                    log_predictive_likelihood(&y_test, &p).unwrap_or(f64::NEG_INFINITY)
                }
                Err(_) => f64::NEG_INFINITY,
            }
        })
        .collect()
}

/// Chooses the penalty with the largest mean held-out log-likelihood.
///
/// Each fold walks the path with warm starts. Ties go to the larger
/// penalty. Folds are evaluated in parallel and combined in fold order.
pub fn cv_select_lambda(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    path: &LambdaPath,
    k_folds: usize,
    seed: u64,
    opts: &GlmOptions,
) -> Result<CvSelection> {
    if k_folds < 2 {
        return Err(PhcError::InvalidInput(format!(
            "need at least 2 folds, got {k_folds}"
        )));
    }
    if x.nrows() != y.len() {
        return Err(PhcError::DimensionMismatch {
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    if path.is_empty() {
        return Err(PhcError::InvalidInput("empty penalty path".into()));
    }
    let (folds, stratified) = make_folds(y, k_folds, seed);
    if path.len() == 1 {
        return Ok(CvSelection {
            lambda: path.values()[0],
            curve: vec![CvPoint {
                lambda: path.values()[0],
                mean_loglik: f64::NAN,
            }],
            stratified,
        });
    }
    if y.len() < 2 * k_folds {
        return Err(PhcError::InvalidInput(format!(
            "{} rows are too few for {k_folds}-fold cross-validation",
            y.len()
        )));
    }
    let per_fold: Vec<Vec<f64>> = (0..k_folds)
        .into_par_iter()
        .map(|fold| fold_curve(x, y, &folds, fold, path, opts))
        .collect();
    let curve: Vec<CvPoint> = path
        .values()
        .iter()
        .enumerate()
        .map(|(k, &lambda)| CvPoint {
            lambda,
            mean_loglik: per_fold.iter().map(|f| f[k]).sum::<f64>() / k_folds as f64,
        })
        .collect();
    let mut best = 0;
    for (k, point) in curve.iter().enumerate() {
        if point.mean_loglik > curve[best].mean_loglik {
            best = k;
        }
    }
    Ok(CvSelection {
        lambda: curve[best].lambda,
        curve,
        stratified,
    })
}

#[derive(Debug, Clone)]
pub struct CvFit {
    pub model: FittedModel,
    pub selection: CvSelection,
}

/// Builds the path, cross-validates the penalty and refits on all rows.
pub fn fit_with_cv(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    opts: &GlmOptions,
    seed: u64,
) -> Result<CvFit> {
    let path = make_lambda_path(x, y, opts.n_lambda, opts.eps_ratio)?;
    let selection = cv_select_lambda(x, y, &path, opts.k_folds, seed, opts)?;
    let model = fit_lasso_logistic(x, y, selection.lambda, opts)?;
    Ok(CvFit { model, selection })
}

/// `fit_with_cv`, falling back to a fixed penalty of `0.01 * lambda_max`
/// when cross-validation cannot run (too few rows per fold, for instance).
pub fn fit_with_fallback(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    opts: &GlmOptions,
    seed: u64,
) -> Result<FittedModel> {
    match fit_with_cv(x, y, opts, seed) {
        Ok(fit) => Ok(fit.model),
        Err(err) if !err.is_numerical() => {
            log::warn!("cross-validated fit failed ({err}); retrying at fixed penalty");
            let lmax = Design::new(x).lambda_max(y).value;
            fit_lasso_logistic(x, y, 0.01 * lmax, opts)
        }
        Err(err) => Err(err),
    }
}
