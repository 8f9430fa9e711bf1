//! Cyclic coordinate descent on the IRLS quadratic approximation, with a
//! step-halving line search on the penalized objective so accepted outer
//! iterates never increase it.

use ndarray::ArrayView2;

use super::{FitDiagnostics, FittedModel, GlmOptions, Standardization};
use crate::error::{PhcError, Result};
use crate::math::{clip_probability, logit, sigmoid};

/// Column-major standardized design matrix.
#[derive(Debug, Clone)]
pub struct Design {
    n: usize,
    p: usize,
    cols: Vec<f64>,
    standardization: Standardization,
}

impl Design {
    /// Standardizes `x` with its own column means and population scales.
    pub fn new(x: ArrayView2<'_, f64>) -> Design {
        let n = x.nrows();
        let p = x.ncols();
        let mut mean = vec![0.0; p];
        let mut scale = vec![1.0; p];
        let mut constant = vec![false; p];
        for j in 0..p {
            let col = x.column(j);
            let m = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            mean[j] = m;
            if sd <= 1e-12 * m.abs().max(1.0) {
                constant[j] = true;
            } else {
                scale[j] = sd;
            }
        }
        let standardization = Standardization {
            mean,
            scale,
            constant,
        };
        Design::with_standardization(x, &standardization)
    }

    /// Applies an existing standardization to `x`.
    pub fn with_standardization(x: ArrayView2<'_, f64>, st: &Standardization) -> Design {
        let n = x.nrows();
        let p = x.ncols();
        let mut cols = vec![0.0; n * p];
        for j in 0..p {
            if st.constant[j] {
                continue;
            }
            let dst = &mut cols[j * n..(j + 1) * n];
            for (d, v) in dst.iter_mut().zip(x.column(j)) {
                *d = (v - st.mean[j]) / st.scale[j];
            }
        }
        Design {
            n,
            p,
            cols,
            standardization: st.clone(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.p
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    #[inline]
    fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.n..(j + 1) * self.n]
    }

    fn eta(&self, b0: f64, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![b0; self.n];
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (e, x) in eta.iter_mut().zip(self.col(j)) {
                    *e += b * x;
                }
            }
        }
        eta
    }

    /// Smallest penalty whose solution has every coefficient at zero.
    pub fn lambda_max(&self, y: &[f64]) -> LambdaMax {
        let ybar = y.iter().sum::<f64>() / self.n as f64;
        let degenerate = ybar <= 0.0 || ybar >= 1.0;
        if degenerate {
            return LambdaMax {
                value: 0.0,
                degenerate,
            };
        }
        let value = (0..self.p)
            .map(|j| {
                self.col(j)
                    .iter()
                    .zip(y)
                    .map(|(x, yi)| x * (yi - ybar))
                    .sum::<f64>()
                    .abs()
                    / self.n as f64
            })
            .fold(0.0, f64::max);
        LambdaMax { value, degenerate }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaMax {
    pub value: f64,
    /// Outcome is constant; no penalty path exists.
    pub degenerate: bool,
}

/// `max_j |<x_j, y - ybar>| / n` for an already standardized `x`.
pub fn lambda_max(x_std: ArrayView2<'_, f64>, y: &[f64]) -> LambdaMax {
    let p = x_std.ncols();
    let st = Standardization {
        mean: vec![0.0; p],
        scale: vec![1.0; p],
        constant: vec![false; p],
    };
    Design::with_standardization(x_std, &st).lambda_max(y)
}

#[derive(Debug, Clone)]
pub(crate) struct RawFit {
    pub b0: f64,
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub kkt: f64,
    pub degenerate: bool,
    pub trace: Vec<f64>,
}

impl RawFit {
    pub fn into_model(self, design: &Design) -> FittedModel {
        let st = design.standardization().clone();
        let coefficients: Vec<f64> = self
            .beta
            .iter()
            .zip(&st.scale)
            .zip(&st.constant)
            .map(|((b, s), &c)| if c { 0.0 } else { b / s })
            .collect();
        let intercept = self.b0
            - coefficients
                .iter()
                .zip(&st.mean)
                .map(|(b, m)| b * m)
                .sum::<f64>();
        let active_set = self.beta.iter().filter(|b| **b != 0.0).count();
        FittedModel {
            intercept,
            coefficients,
            lambda: self.lambda,
            standardization: st,
            n_train: design.n_rows(),
            diagnostics: FitDiagnostics {
                iterations: self.iterations,
                converged: true,
                active_set,
                kkt_violation: self.kkt,
                degenerate: self.degenerate,
                objective_trace: self.trace,
            },
        }
    }

    /// Linear predictor on a design standardized with the same parameters.
    pub fn eta(&self, design: &Design) -> Vec<f64> {
        design.eta(self.b0, &self.beta)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn objective(y: &[f64], eta: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let n = y.len() as f64;
    let nll = eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| softplus(e) - yi * e)
        .sum::<f64>()
        / n;
    nll + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Largest KKT excess over the features, and the intercept gradient.
fn kkt_excess(design: &Design, y: &[f64], prob: &[f64], beta: &[f64], lambda: f64) -> (f64, f64) {
    let n = design.n as f64;
    let mut worst: f64 = 0.0;
    for (j, &b) in beta.iter().enumerate() {
        if design.standardization.constant[j] {
            continue;
        }
        let g = design
            .col(j)
            .iter()
            .zip(prob.iter().zip(y))
            .map(|(x, (p, yi))| x * (p - yi))
            .sum::<f64>()
            / n;
        let excess = if b != 0.0 {
            (g + lambda * b.signum()).abs()
        } else {
            (g.abs() - lambda).max(0.0)
        };
        worst = worst.max(excess);
    }
    let g0 = prob.iter().zip(y).map(|(p, yi)| p - yi).sum::<f64>() / n;
    (worst, g0.abs())
}

/// KKT violation of `model` on the data it was fit to (standardized space).
pub fn kkt_violation(x: ArrayView2<'_, f64>, y: &[f64], model: &FittedModel) -> f64 {
    let design = Design::with_standardization(x, &model.standardization);
    let beta = model.standardized_coefficients();
    let eta = design.eta(model.standardized_intercept(), &beta);
    let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
    let (features, intercept) = kkt_excess(&design, y, &prob, &beta, model.lambda);
    if model.diagnostics.degenerate {
        features
    } else {
        features.max(intercept)
    }
}

#[inline]
fn soft_threshold(u: f64, lambda: f64) -> f64 {
    if u > lambda {
        u - lambda
    } else if u < -lambda {
        u + lambda
    } else {
        0.0
    }
}

struct Quadratic<'a> {
    design: &'a Design,
    w: Vec<f64>,
    /// Working residual `z - eta` at the current quadratic iterate.
    resid: Vec<f64>,
    xwx: Vec<f64>,
    sw: f64,
}

impl Quadratic<'_> {
    fn update_coordinate(&mut self, j: usize, beta: &mut [f64], lambda: f64) -> f64 {
        let h = self.xwx[j];
        if h <= 0.0 {
            return 0.0;
        }
        let n = self.design.n as f64;
        let x = self.design.col(j);
        let g = x
            .iter()
            .zip(self.w.iter().zip(&self.resid))
            .map(|(xi, (wi, ri))| xi * wi * ri)
            .sum::<f64>()
            / n;
        let old = beta[j];
        let new = soft_threshold(g + h * old, lambda) / h;
        if new == old {
            return 0.0;
        }
        let delta = new - old;
        for (r, xi) in self.resid.iter_mut().zip(x) {
            *r -= xi * delta;
        }
        beta[j] = new;
        h * delta.abs()
    }

    fn update_intercept(&mut self, b0: &mut f64) -> f64 {
        let n = self.design.n as f64;
        let g = self
            .w
            .iter()
            .zip(&self.resid)
            .map(|(w, r)| w * r)
            .sum::<f64>()
            / n;
        let delta = g / self.sw;
        for r in &mut self.resid {
            *r -= delta;
        }
        *b0 += delta;
        g.abs()
    }

    /// Runs coordinate descent to `inner_tol`, cycling over the active set
    /// between full sweeps.
    fn solve(
        &mut self,
        b0: &mut f64,
        beta: &mut [f64],
        lambda: f64,
        inner_tol: f64,
        max_sweeps: usize,
    ) -> Result<()> {
        let p = beta.len();
        let mut sweeps = 0;
        loop {
            let mut change = self.update_intercept(b0);
            for j in 0..p {
                change = change.max(self.update_coordinate(j, beta, lambda));
            }
            sweeps += 1;
            if change < inner_tol {
                return Ok(());
            }
            let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
            loop {
                let mut change = self.update_intercept(b0);
                for &j in &active {
                    change = change.max(self.update_coordinate(j, beta, lambda));
                }
                sweeps += 1;
                if change < inner_tol {
                    break;
                }
                if sweeps >= max_sweeps {
                    return Err(PhcError::NoConvergence {
                        iterations: sweeps,
                        kkt_violation: change,
                    });
                }
            }
            if sweeps >= max_sweeps {
                return Err(PhcError::NoConvergence {
                    iterations: sweeps,
                    kkt_violation: change,
                });
            }
        }
    }
}

pub(crate) fn fit_raw(
    design: &Design,
    y: &[f64],
    lambda: f64,
    warm: Option<(f64, &[f64])>,
    tol: f64,
    opts: &GlmOptions,
) -> Result<RawFit> {
    let n = design.n;
    let p = design.p;
    if n < 2 {
        return Err(PhcError::InvalidInput(format!(
            "need at least 2 training rows, got {n}"
        )));
    }
    if y.len() != n {
        return Err(PhcError::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(PhcError::InvalidInput(format!(
            "penalty must be >= 0, got {lambda}"
        )));
    }
    let ybar = y.iter().sum::<f64>() / n as f64;
    let lmax = design.lambda_max(y);
    if lmax.degenerate || lambda >= lmax.value {
        let b0 = logit(clip_probability(ybar));
        let beta = vec![0.0; p];
        let eta = vec![b0; n];
        let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let (kkt, _) = kkt_excess(design, y, &prob, &beta, lambda);
        return Ok(RawFit {
            b0,
            trace: vec![objective(y, &eta, &beta, lambda)],
            beta,
            lambda,
            iterations: 0,
            kkt,
            degenerate: lmax.degenerate,
        });
    }

    let (mut b0, mut beta) = match warm {
        Some((b0, beta)) => (b0, beta.to_vec()),
        None => (logit(ybar), vec![0.0; p]),
    };
    let mut eta = design.eta(b0, &beta);
    let mut obj = objective(y, &eta, &beta, lambda);
    let mut trace = vec![obj];
    let mut prob = vec![0.0; n];
    let inner_tol = 0.1 * tol;
    let mut iterations = 0;
    let mut quad = Quadratic {
        design,
        w: vec![0.0; n],
        resid: vec![0.0; n],
        xwx: vec![0.0; p],
        sw: 0.0,
    };

    loop {
        for (pr, &e) in prob.iter_mut().zip(&eta) {
            *pr = sigmoid(e);
        }
        let (kf, k0) = kkt_excess(design, y, &prob, &beta, lambda);
        let kkt = kf.max(k0);
        if kkt <= tol {
            return Ok(RawFit {
                b0,
                beta,
                lambda,
                iterations,
                kkt,
                degenerate: false,
                trace,
            });
        }
        if iterations >= opts.max_outer {
            return Err(PhcError::NoConvergence {
                iterations,
                kkt_violation: kkt,
            });
        }
        iterations += 1;

        for i in 0..n {
            let w = (prob[i] * (1.0 - prob[i])).max(opts.weight_floor);
            quad.w[i] = w;
            quad.resid[i] = (y[i] - prob[i]) / w;
        }
        quad.sw = quad.w.iter().sum::<f64>() / n as f64;
        for j in 0..p {
            quad.xwx[j] = if design.standardization.constant[j] {
                0.0
            } else {
                design
                    .col(j)
                    .iter()
                    .zip(&quad.w)
                    .map(|(x, w)| w * x * x)
                    .sum::<f64>()
                    / n as f64
            };
        }
        let resid0 = quad.resid.clone();
        let mut nb0 = b0;
        let mut nbeta = beta.clone();
        quad.solve(&mut nb0, &mut nbeta, lambda, inner_tol, opts.max_sweeps)?;

        // eta moves by the drop in working residual.
        let d_eta: Vec<f64> = resid0.iter().zip(&quad.resid).map(|(a, b)| a - b).collect();
        let slack = 1e-13 * (1.0 + obj.abs());
        let mut step = 1.0;
        let mut accepted = false;
        let mut cand_eta = vec![0.0; n];
        let mut cand_beta = vec![0.0; p];
        while step > 1e-12 {
            for i in 0..n {
                cand_eta[i] = eta[i] + step * d_eta[i];
            }
            for j in 0..p {
                cand_beta[j] = beta[j] + step * (nbeta[j] - beta[j]);
            }
            let cand_obj = objective(y, &cand_eta, &cand_beta, lambda);
            if cand_obj <= obj + slack {
                b0 += step * (nb0 - b0);
                std::mem::swap(&mut beta, &mut cand_beta);
                std::mem::swap(&mut eta, &mut cand_eta);
                obj = cand_obj;
                trace.push(obj);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            for (pr, &e) in prob.iter_mut().zip(&eta) {
                *pr = sigmoid(e);
            }
            let (kf, k0) = kkt_excess(design, y, &prob, &beta, lambda);
            return Err(PhcError::NoConvergence {
                iterations,
                kkt_violation: kf.max(k0),
            });
        }
    }
}

/// Fits a lasso logistic regression at a fixed penalty from a cold start.
///
/// The returned fit satisfies the KKT conditions to `opts.tol`; a constant
/// outcome produces an intercept-only model at the clipped logit.
pub fn fit_lasso_logistic(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    lambda: f64,
    opts: &GlmOptions,
) -> Result<FittedModel> {
    if x.nrows() != y.len() {
        return Err(PhcError::DimensionMismatch {
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    let design = Design::new(x);
    let raw = fit_raw(&design, y, lambda, None, opts.tol, opts)?;
    Ok(raw.into_model(&design))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::predict_proba;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_problem(seed: u64, n: usize, p: usize, signal: f64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal) * 2.0 + 1.0);
        let beta: Vec<f64> = (0..p)
            .map(|j| if j % 2 == 0 { signal } else { -0.5 * signal })
            .collect();
        let y = x
            .rows()
            .into_iter()
            .map(|r| {
                let eta: f64 = 0.3 + r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
                f64::from(u8::from(rng.random::<f64>() < sigmoid(eta)))
            })
            .collect();
        (x, y)
    }

    #[test]
    fn lambda_max_hand_example() {
        let lm = lambda_max(array![[1.0], [-1.0]].view(), &[1.0, 0.0]);
        assert!(!lm.degenerate);
        assert!((lm.value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lambda_max_orthogonal_column_is_zero() {
        // y - ybar = [0.5, -0.5, 0.5, -0.5]; x pairs cancel.
        let lm = lambda_max(
            array![[1.0], [1.0], [-1.0], [-1.0]].view(),
            &[1.0, 0.0, 1.0, 0.0],
        );
        assert_eq!(lm.value, 0.0);
    }

    #[test]
    fn lambda_max_flags_constant_outcome() {
        let lm = lambda_max(array![[1.0], [-1.0]].view(), &[1.0, 1.0]);
        assert!(lm.degenerate);
        assert_eq!(lm.value, 0.0);
    }

    #[test]
    fn above_lambda_max_gives_zero_solution() {
        let (x, y) = random_problem(1, 80, 4, 0.6);
        let design = Design::new(x.view());
        let lmax = design.lambda_max(&y).value;
        let model = fit_lasso_logistic(x.view(), &y, 1.01 * lmax, &GlmOptions::default()).unwrap();
        assert!(model.coefficients.iter().all(|&b| b == 0.0));
        let ybar = y.iter().sum::<f64>() / y.len() as f64;
        assert!((model.intercept - logit(ybar)).abs() < 1e-12);
        // Just below lambda_max something enters.
        let model = fit_lasso_logistic(x.view(), &y, 0.9 * lmax, &GlmOptions::default()).unwrap();
        assert!(model.coefficients.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn constant_outcome_is_intercept_only() {
        let (x, _) = random_problem(2, 30, 3, 0.0);
        let y = vec![1.0; 30];
        let model = fit_lasso_logistic(x.view(), &y, 0.0, &GlmOptions::default()).unwrap();
        assert!(model.diagnostics.degenerate);
        assert!(model.coefficients.iter().all(|&b| b == 0.0));
        let p = predict_proba(&model, x.view()).unwrap();
        assert!(p
            .iter()
            .all(|&v| (v - (1.0 - crate::math::EPS_CLIP)).abs() < 1e-15));
        assert!(kkt_violation(x.view(), &y, &model) <= 1e-7);
    }

    #[test]
    fn constant_column_gets_zero_coefficient() {
        let (mut x, y) = random_problem(3, 60, 3, 0.8);
        x.column_mut(1).fill(4.2);
        let model = fit_lasso_logistic(x.view(), &y, 0.01, &GlmOptions::default()).unwrap();
        assert_eq!(model.coefficients[1], 0.0);
        assert_eq!(model.standardization.scale[1], 1.0);
        assert!(model.standardization.constant[1]);
        assert!(kkt_violation(x.view(), &y, &model) <= 1e-7);
    }

    #[test]
    fn kkt_and_monotone_objective() {
        for seed in 0..10 {
            let (x, y) = random_problem(seed, 120, 6, 0.7);
            let lmax = Design::new(x.view()).lambda_max(&y).value;
            for frac in [0.5, 0.1, 0.01] {
                let model =
                    fit_lasso_logistic(x.view(), &y, frac * lmax, &GlmOptions::default()).unwrap();
                assert!(kkt_violation(x.view(), &y, &model) <= 1e-7);
                for w in model.diagnostics.objective_trace.windows(2) {
                    assert!(w[1] <= w[0] + 1e-10, "objective rose: {w:?}");
                }
            }
        }
    }

    #[test]
    fn standardization_round_trip() {
        let (x, y) = random_problem(4, 100, 5, 0.5);
        let model = fit_lasso_logistic(x.view(), &y, 0.005, &GlmOptions::default()).unwrap();
        let raw = model.linear_predictor(x.view()).unwrap();
        let design = Design::with_standardization(x.view(), &model.standardization);
        let std_eta = design.eta(
            model.standardized_intercept(),
            &model.standardized_coefficients(),
        );
        for (a, b) in raw.iter().zip(&std_eta) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn warm_start_reaches_same_optimum() {
        let (x, y) = random_problem(5, 100, 4, 0.5);
        let design = Design::new(x.view());
        let opts = GlmOptions::default();
        let lmax = design.lambda_max(&y).value;
        let first = fit_raw(&design, &y, 0.3 * lmax, None, 1e-9, &opts).unwrap();
        let warm = fit_raw(
            &design,
            &y,
            0.05 * lmax,
            Some((first.b0, &first.beta)),
            1e-9,
            &opts,
        )
        .unwrap();
        let cold = fit_raw(&design, &y, 0.05 * lmax, None, 1e-9, &opts).unwrap();
        for (a, b) in warm.beta.iter().zip(&cold.beta) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn separable_data_without_penalty_fails_to_converge() {
        let x = array![[-2.0], [-1.0], [1.0], [2.0]];
        let y = [0.0, 0.0, 1.0, 1.0];
        let opts = GlmOptions {
            max_outer: 50,
            ..GlmOptions::default()
        };
        let err = fit_lasso_logistic(x.view(), &y, 0.0, &opts).unwrap_err();
        assert!(matches!(err, PhcError::NoConvergence { .. }));
    }

    #[test]
    fn rejects_bad_arguments() {
        let x = array![[1.0], [2.0]];
        assert!(fit_lasso_logistic(x.view(), &[1.0], 0.1, &GlmOptions::default()).is_err());
        assert!(fit_lasso_logistic(x.view(), &[1.0, 0.0], -0.1, &GlmOptions::default()).is_err());
        let one = array![[1.0]];
        assert!(fit_lasso_logistic(one.view(), &[1.0], 0.1, &GlmOptions::default()).is_err());
    }
}
