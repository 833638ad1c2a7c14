//! Ordinary least squares with a fitted intercept.
//!
//! Solved by CGLS on the implicitly centred design matrix, starting from zero. On a
//! rank-deficient design (more terms than samples is the usual case) this converges to the
//! minimum-norm solution.

use serde::{Deserialize, Serialize};

use super::features::{dot, FeatureMatrix};
use super::text::Regressor;
use super::{check_keys, param_f64, param_usize, Params, PredictorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearRegressionParams {
    /// Relative tolerance on `‖Xᵀ r‖ / ‖Xᵀ y‖`.
    pub tol: f64,
    /// Defaults to `2 · n_features + 10` when unset.
    pub max_iter: Option<usize>,
}

impl Default for LinearRegressionParams {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LinearFit {
    coef: Vec<f64>,
    intercept: f64,
    iterations: usize,
    relative_residual: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LinearRegression {
    params: LinearRegressionParams,
    fit: Option<LinearFit>,
}

impl LinearRegression {
    pub fn new(params: LinearRegressionParams) -> Self {
        Self { params, fit: None }
    }

    pub fn coefficients(&self) -> Option<(&[f64], f64)> {
        self.fit.as_ref().map(|f| (f.coef.as_slice(), f.intercept))
    }

    /// Iterations used and final relative normal-equation residual.
    pub fn convergence(&self) -> Option<(usize, f64)> {
        self.fit.as_ref().map(|f| (f.iterations, f.relative_residual))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Regressor for LinearRegression {
    const NAME: &'static str = "linear_regression";
    const PARAM_KEYS: &'static [&'static str] = &["tol", "max_iter"];

    fn from_params(params: &Params) -> Result<Self, PredictorError> {
        check_keys(params, Self::PARAM_KEYS)?;
        let mut p = LinearRegressionParams::default();
        if let Some(t) = param_f64(params, "tol")? {
            if !(t > 0.0 && t.is_finite()) {
                return Err(PredictorError::InvalidHyperparameter(format!("tol must be positive, got {t}")));
            }
            p.tol = t;
        }
        p.max_iter = param_usize(params, "max_iter")?;
        Ok(Self::new(p))
    }

    fn fit(&mut self, x: &FeatureMatrix, y: &[f64], _seed: u64) -> Result<(), PredictorError> {
        if x.n_rows() != y.len() {
            return Err(PredictorError::LengthMismatch(x.n_rows(), y.len()));
        }
        if y.is_empty() {
            return Err(PredictorError::EmptyTraining);
        }
        let n = y.len() as f64;
        let p = x.n_features;
        let mu = x.column_means();
        let y_mean = y.iter().sum::<f64>() / n;
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

        // Xc v = X v - (mu . v) 1 ;  Xc' u = X' u - mu * sum(u)
        let xc_mul = |v: &[f64]| {
            let shift: f64 = mu.iter().zip(v).map(|(a, b)| a * b).sum();
            x.mul_vec(v).into_iter().map(|t| t - shift).collect::<Vec<f64>>()
        };
        let xc_tmul = |u: &[f64]| {
            let s: f64 = u.iter().sum();
            let mut out = x.tmul_vec(u);
            out.iter_mut().zip(&mu).for_each(|(o, m)| *o -= m * s);
            out
        };

        let mut w = vec![0.0; p];
        let mut r = yc.clone();
        let mut s = xc_tmul(&r);
        let s0 = norm(&s);
        let mut d = s.clone();
        let mut gamma = s0 * s0;
        let max_iter = self.params.max_iter.unwrap_or(2 * p + 10);
        let mut iterations = 0;
        let mut rel = if s0 > 0.0 { 1.0 } else { 0.0 };
        while s0 > 0.0 && iterations < max_iter && rel > self.params.tol {
            let q = xc_mul(&d);
            let qq: f64 = q.iter().map(|v| v * v).sum();
            if qq <= 0.0 {
                break;
            }
            let alpha = gamma / qq;
            w.iter_mut().zip(&d).for_each(|(wi, di)| *wi += alpha * di);
            r.iter_mut().zip(&q).for_each(|(ri, qi)| *ri -= alpha * qi);
            s = xc_tmul(&r);
            let gamma_new: f64 = s.iter().map(|v| v * v).sum();
            iterations += 1;
            rel = gamma_new.sqrt() / s0;
            let beta = gamma_new / gamma;
            d.iter_mut().zip(&s).for_each(|(di, si)| *di = si + beta * *di);
            gamma = gamma_new;
        }
        if rel > self.params.tol {
            log::warn!("least squares stopped after {iterations} iterations at relative residual {rel:.3e}");
        }
        let intercept = y_mean - mu.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        self.fit = Some(LinearFit {
            coef: w,
            intercept,
            iterations,
            relative_residual: rel,
        });
        Ok(())
    }

    fn predict_row(&self, row: &[(u32, f64)]) -> f64 {
        let f = self.fit.as_ref().expect("fitted");
        f.intercept + dot(row, &f.coef)
    }

    fn is_fitted(&self) -> bool {
        self.fit.is_some()
    }

    fn hyperparameters(&self) -> Params {
        let mut p = Params::new();
        p.insert("tol".into(), self.params.tol.into());
        if let Some(m) = self.params.max_iter {
            p.insert("max_iter".into(), m.into());
        }
        p
    }
}
