//! Lasso-penalized logistic regression.
//!
//! Fits minimize the mean negative Bernoulli log-likelihood plus
//! `lambda * ||beta||_1` over internally standardized columns, with an
//! unpenalized intercept. Coefficients are reported on the original scale.

mod cv;
mod solver;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{PhcError, Result};
use crate::math::{clip_probability, sigmoid};

pub use cv::{
    cv_select_lambda, fit_with_cv, fit_with_fallback, make_lambda_path, CvFit, CvPoint,
    CvSelection, LambdaPath,
};
pub use solver::{fit_lasso_logistic, kkt_violation, lambda_max, Design, LambdaMax};

/// Solver and model-selection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmOptions {
    pub n_lambda: usize,
    /// `lambda_min / lambda_max` of the path.
    pub eps_ratio: f64,
    pub k_folds: usize,
    /// KKT tolerance for returned fits.
    pub tol: f64,
    /// KKT tolerance for the internal cross-validation fits.
    pub cv_tol: f64,
    pub max_outer: usize,
    pub max_sweeps: usize,
    /// Lower bound on IRLS working weights.
    pub weight_floor: f64,
}

impl Default for GlmOptions {
    fn default() -> Self {
        GlmOptions {
            n_lambda: 50,
            eps_ratio: 1e-3,
            k_folds: 5,
            tol: 1e-7,
            cv_tol: 1e-5,
            max_outer: 1000,
            max_sweeps: 10_000,
            weight_floor: 1e-5,
        }
    }
}

/// Per-column centering and scaling applied before fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for constant columns.
    pub scale: Vec<f64>,
    pub constant: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub active_set: usize,
    pub kkt_violation: f64,
    /// Outcome was constant; the model is intercept-only.
    pub degenerate: bool,
    /// Penalized objective at each accepted outer iterate.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub intercept: f64,
    /// Original-scale coefficients in input column order.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub standardization: Standardization,
    pub n_train: usize,
    pub diagnostics: FitDiagnostics,
}

impl FittedModel {
    pub fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    /// Coefficients on the standardized scale the solver works in.
    pub fn standardized_coefficients(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .zip(&self.standardization.scale)
            .map(|(b, s)| b * s)
            .collect()
    }

    pub fn standardized_intercept(&self) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(&self.standardization.mean)
                .map(|(b, m)| b * m)
                .sum::<f64>()
    }

    pub fn linear_predictor(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.coefficients.len() {
            return Err(PhcError::DimensionMismatch {
                expected: self.coefficients.len(),
                actual: x.ncols(),
            });
        }
        Ok(x.rows()
            .into_iter()
            .map(|row| {
                self.intercept
                    + row
                        .iter()
                        .zip(&self.coefficients)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect())
    }

    /// JSON export with named coefficients.
    pub fn to_export(&self, names: &[String]) -> ModelExport {
        ModelExport {
            intercept: self.intercept,
            coefficients: names
                .iter()
                .zip(&self.coefficients)
                .map(|(name, &value)| NamedCoefficient {
                    name: name.clone(),
                    value,
                })
                .collect(),
            lambda: self.lambda,
            n_train: self.n_train,
            converged: self.diagnostics.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCoefficient {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelExport {
    pub intercept: f64,
    pub coefficients: Vec<NamedCoefficient>,
    pub lambda: f64,
    pub n_train: usize,
    pub converged: bool,
}

/// Logistic probabilities, clipped to `[EPS_CLIP, 1 - EPS_CLIP]`.
pub fn predict_proba(model: &FittedModel, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    Ok(model
        .linear_predictor(x)?
        .into_iter()
        .map(|eta| clip_probability(sigmoid(eta)))
        .collect())
}

/// `sum(y ln p + (1 - y) ln(1 - p))`; zero for empty input.
pub fn log_predictive_likelihood(y: &[f64], p_hat: &[f64]) -> Result<f64> {
    if y.len() != p_hat.len() {
        return Err(PhcError::DimensionMismatch {
            expected: y.len(),
            actual: p_hat.len(),
        });
    }
    Ok(y.iter()
        .zip(p_hat)
        .map(|(&yi, &p)| if yi > 0.5 { p.ln() } else { (-p).ln_1p() })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn hand_model(intercept: f64, coefficients: Vec<f64>) -> FittedModel {
        let p = coefficients.len();
        FittedModel {
            intercept,
            coefficients,
            lambda: 0.0,
            standardization: Standardization {
                mean: vec![0.0; p],
                scale: vec![1.0; p],
                constant: vec![false; p],
            },
            n_train: 0,
            diagnostics: FitDiagnostics {
                iterations: 0,
                converged: true,
                active_set: p,
                kkt_violation: 0.0,
                degenerate: false,
                objective_trace: Vec::new(),
            },
        }
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = hand_model(0.0, vec![0.0, 0.0]);
        let p = predict_proba(&m, array![[1.0, 2.0], [-3.0, 0.5]].view()).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn saturation_is_clipped() {
        let m = hand_model(0.0, vec![1.0]);
        let p = predict_proba(&m, array![[0.0], [40.0], [-40.0]].view()).unwrap();
        assert_eq!(p[0], 0.5);
        assert_eq!(p[1], 1.0 - crate::math::EPS_CLIP);
        assert_eq!(p[2], crate::math::EPS_CLIP);
    }

    #[test]
    fn hand_model_probability() {
        let m = hand_model(-1.0, vec![2.0]);
        let p = predict_proba(&m, array![[1.0]].view()).unwrap();
        let direct = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((p[0] - direct).abs() < 1e-15);
        assert!((p[0] - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn column_mismatch_is_an_error() {
        let m = hand_model(0.0, vec![1.0, 1.0]);
        assert!(predict_proba(&m, array![[1.0]].view()).is_err());
    }

    #[test]
    fn predictive_likelihood_cases() {
        let ll = log_predictive_likelihood(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((ll - 2.0 * 0.5f64.ln()).abs() < 1e-15);
        assert!((ll + 1.386294).abs() < 1e-6);
        let ll = log_predictive_likelihood(&[1.0], &[0.9]).unwrap();
        assert!((ll + 0.105361).abs() < 1e-6);
        assert_eq!(log_predictive_likelihood(&[], &[]).unwrap(), 0.0);
        assert!(log_predictive_likelihood(&[1.0], &[]).is_err());
    }

    #[test]
    fn predictive_likelihood_is_additive() {
        let y = [1.0, 0.0, 1.0, 1.0, 0.0];
        let p = [0.2, 0.3, 0.9, 0.6, 0.01];
        let whole = log_predictive_likelihood(&y, &p).unwrap();
        let parts = log_predictive_likelihood(&y[..2], &p[..2]).unwrap()
            + log_predictive_likelihood(&y[2..], &p[2..]).unwrap();
        assert!((whole - parts).abs() < 1e-12);
    }

    #[test]
    fn export_names_coefficients() {
        let m = hand_model(0.25, vec![1.5, 0.0]);
        let e = m.to_export(&["a".into(), "b".into()]);
        let json = serde_json::to_value(&e).unwrap();
        assert_eq!(json["coefficients"][0]["name"], "a");
        assert_eq!(json["coefficients"][0]["value"], 1.5);
        assert_eq!(json["intercept"], 0.25);
        assert_eq!(json["converged"], true);
    }
}
