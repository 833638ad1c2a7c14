//! Epsilon-insensitive support vector regression trained by SMO with second-order working
//! set selection (the libsvm formulation).

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::features::{sparse_dot, sq_norm, FeatureMatrix, SparseRow};
use super::text::Regressor;
use super::{check_keys, param_f64, param_str, param_usize, Params, PredictorError};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Rbf,
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Linear => "linear",
            Kernel::Rbf => "rbf",
        })
    }
}

/// RBF width. `Scale` resolves to `1 / (n_features · Var(X))` at fit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma {
    Scale,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    pub kernel: Kernel,
    pub gamma: Gamma,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_iter: usize,
    /// Kernel cache size in MiB.
    pub cache_mb: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.1,
            kernel: Kernel::Rbf,
            gamma: Gamma::Scale,
            tol: 1e-3,
            max_iter: 10_000_000,
            cache_mb: 200,
        }
    }
}

impl SvrParams {
    pub fn validate(&self) -> Result<(), PredictorError> {
        let bad = |m: String| Err(PredictorError::InvalidHyperparameter(m));
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad(format!("C must be positive, got {}", self.c));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if let Gamma::Value(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gamma must be positive, got {g}"));
            }
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum SvrModel {
    /// Linear kernel collapsed to a weight vector.
    Linear { w: Vec<f64>, b: f64 },
    Rbf { gamma: f64, support: Vec<(SparseRow, f64)>, b: f64 },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Svr {
    params: SvrParams,
    model: Option<SvrModel>,
    #[serde(default)]
    iterations: usize,
}

impl Svr {
    pub fn new(params: SvrParams) -> Result<Self, PredictorError> {
        params.validate()?;
        Ok(Self {
            params,
            model: None,
            iterations: 0,
        })
    }

    pub fn params(&self) -> &SvrParams {
        &self.params
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn n_support(&self) -> Option<usize> {
        match self.model.as_ref()? {
            SvrModel::Linear { .. } => None,
            SvrModel::Rbf { support, .. } => Some(support.len()),
        }
    }

    /// Resolved gamma of a fitted rbf model.
    pub fn gamma(&self) -> Option<f64> {
        match self.model.as_ref()? {
            SvrModel::Rbf { gamma, .. } => Some(*gamma),
            SvrModel::Linear { .. } => None,
        }
    }
}

struct KernelCache<'a> {
    x: &'a [SparseRow],
    norms: Vec<f64>,
    kernel: Kernel,
    gamma: f64,
    rows: Vec<Option<Vec<f64>>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a [SparseRow], kernel: Kernel, gamma: f64, cache_mb: usize) -> Self {
        let n = x.len();
        let row_bytes = (n * 8).max(1);
        let capacity = ((cache_mb << 20) / row_bytes).max(2);
        Self {
            x,
            norms: x.iter().map(|r| sq_norm(r)).collect(),
            kernel,
            gamma,
            rows: vec![None; n],
            order: VecDeque::new(),
            capacity,
        }
    }

    fn eval(&self, i: usize, j: usize) -> f64 {
        let d = sparse_dot(&self.x[i], &self.x[j]);
        match self.kernel {
            Kernel::Linear => d,
            Kernel::Rbf => (-self.gamma * (self.norms[i] + self.norms[j] - 2.0 * d).max(0.0)).exp(),
        }
    }

    fn diag(&self, i: usize) -> f64 {
        match self.kernel {
            Kernel::Linear => self.norms[i],
            Kernel::Rbf => 1.0,
        }
    }

    fn ensure(&mut self, i: usize) {
        if self.rows[i].is_some() {
            return;
        }
        if self.order.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.rows[old] = None;
            }
        }
        let row = (0..self.x.len()).map(|j| self.eval(i, j)).collect();
        self.rows[i] = Some(row);
        self.order.push_back(i);
    }

    fn row(&self, i: usize) -> &[f64] {
        self.rows[i].as_deref().expect("ensured")
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Bound {
    Lower,
    Upper,
    Free,
}

/// Dual solution: `coef[i] = α_i − α*_i` and the offset `b` (= −ρ).
fn solve(x: &[SparseRow], y: &[f64], p: &SvrParams, gamma: f64) -> (Vec<f64>, f64, usize) {
    let n = x.len();
    let l = 2 * n;
    let c = p.c;
    let mut cache = KernelCache::new(x, p.kernel, gamma, p.cache_mb);
    // variable t < n is α_t with sign +1, t >= n is α*_{t-n} with sign −1
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let real = |t: usize| if t < n { t } else { t - n };
    let qd: Vec<f64> = (0..l).map(|t| cache.diag(real(t))).collect();
    let mut alpha = vec![0.0; l];
    let mut status = vec![Bound::Lower; l];
    let mut grad: Vec<f64> = (0..l)
        .map(|t| if t < n { p.epsilon - y[t] } else { p.epsilon + y[t - n] })
        .collect();
    let update_status = |a: f64| {
        if a >= c {
            Bound::Upper
        } else if a <= 0.0 {
            Bound::Lower
        } else {
            Bound::Free
        }
    };

    let mut iter = 0;
    while iter < p.max_iter {
        // select i
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax_idx = usize::MAX;
        for t in 0..l {
            if sign(t) > 0.0 {
                if status[t] != Bound::Upper && -grad[t] >= gmax {
                    gmax = -grad[t];
                    gmax_idx = t;
                }
            } else if status[t] != Bound::Lower && grad[t] >= gmax {
                gmax = grad[t];
                gmax_idx = t;
            }
        }
        if gmax_idx == usize::MAX {
            break;
        }
        let i = gmax_idx;
        let yi = sign(i);
        cache.ensure(real(i));
        // select j
        let mut gmax2 = f64::NEG_INFINITY;
        let mut gmin_idx = usize::MAX;
        let mut obj_min = f64::INFINITY;
        {
            let ki = cache.row(real(i));
            for t in 0..l {
                let yt = sign(t);
                let q_it = yi * yt * ki[real(t)];
                if yt > 0.0 {
                    if status[t] != Bound::Lower {
                        let grad_diff = gmax + grad[t];
                        if grad[t] >= gmax2 {
                            gmax2 = grad[t];
                        }
                        if grad_diff > 0.0 {
                            let quad = qd[i] + qd[t] - 2.0 * yi * q_it;
                            let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                            if obj <= obj_min {
                                gmin_idx = t;
                                obj_min = obj;
                            }
                        }
                    }
                } else if status[t] != Bound::Upper {
                    let grad_diff = gmax - grad[t];
                    if -grad[t] >= gmax2 {
                        gmax2 = -grad[t];
                    }
                    if grad_diff > 0.0 {
                        let quad = qd[i] + qd[t] + 2.0 * yi * q_it;
                        let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                        if obj <= obj_min {
                            gmin_idx = t;
                            obj_min = obj;
                        }
                    }
                }
            }
        }
        if gmax + gmax2 < p.tol || gmin_idx == usize::MAX {
            break;
        }
        let j = gmin_idx;
        let yj = sign(j);
        iter += 1;
        cache.ensure(real(j));
        cache.ensure(real(i));
        let q_ij = yi * yj * cache.row(real(i))[real(j)];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if yi != yj {
            let mut quad = qd[i] + qd[j] + 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = qd[i] + qd[j] - 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        let ki = cache.row(real(i));
        let kj = cache.row(real(j));
        for t in 0..l {
            let yt = sign(t);
            let rt = real(t);
            grad[t] += yi * yt * ki[rt] * di + yj * yt * kj[rt] * dj;
        }
        status[i] = update_status(alpha[i]);
        status[j] = update_status(alpha[j]);
    }
    if iter >= p.max_iter {
        log::warn!("SMO reached max_iter = {}", p.max_iter);
    }

    // rho
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..l {
        let yg = sign(t) * grad[t];
        match status[t] {
            Bound::Upper => {
                if sign(t) < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            }
            Bound::Lower => {
                if sign(t) > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            }
            Bound::Free => {
                n_free += 1;
                sum_free += yg;
            }
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    let coef = (0..n).map(|k| alpha[k] - alpha[k + n]).collect();
    (coef, -rho, iter)
}

impl Regressor for Svr {
    const NAME: &'static str = "svr";
    const PARAM_KEYS: &'static [&'static str] = &["C", "epsilon", "kernel", "gamma", "tol", "max_iter"];

    fn from_params(params: &Params) -> Result<Self, PredictorError> {
        check_keys(params, Self::PARAM_KEYS)?;
        let mut p = SvrParams::default();
        if let Some(c) = param_f64(params, "C")? {
            p.c = c;
        }
        if let Some(e) = param_f64(params, "epsilon")? {
            p.epsilon = e;
        }
        if let Some(k) = param_str(params, "kernel")? {
            p.kernel = match k {
                "linear" => Kernel::Linear,
                "rbf" => Kernel::Rbf,
                other => return Err(PredictorError::InvalidHyperparameter(format!("unknown kernel `{other}`"))),
            };
        }
        match params.get("gamma") {
            None | Some(serde_json::Value::Null) => {}
            Some(serde_json::Value::String(s)) if s == "scale" => p.gamma = Gamma::Scale,
            Some(v) => {
                p.gamma = Gamma::Value(v.as_f64().ok_or_else(|| {
                    PredictorError::InvalidHyperparameter(format!("gamma must be \"scale\" or a number, got {v}"))
                })?)
            }
        }
        if let Some(t) = param_f64(params, "tol")? {
            p.tol = t;
        }
        if let Some(m) = param_usize(params, "max_iter")? {
            p.max_iter = m;
        }
        Self::new(p)
    }

    fn fit(&mut self, x: &FeatureMatrix, y: &[f64], _seed: u64) -> Result<(), PredictorError> {
        self.params.validate()?;
        if x.n_rows() != y.len() {
            return Err(PredictorError::LengthMismatch(x.n_rows(), y.len()));
        }
        if y.is_empty() {
            return Err(PredictorError::EmptyTraining);
        }
        let gamma = match self.params.gamma {
            Gamma::Value(g) => g,
            Gamma::Scale => {
                let v = x.entry_variance();
                if v > 0.0 && x.n_features > 0 {
                    1.0 / (x.n_features as f64 * v)
                } else {
                    1.0
                }
            }
        };
        let (coef, b, iterations) = solve(&x.rows, y, &self.params, gamma);
        self.iterations = iterations;
        self.model = Some(match self.params.kernel {
            Kernel::Linear => {
                let mut w = vec![0.0; x.n_features];
                for (row, &a) in x.rows.iter().zip(&coef) {
                    if a != 0.0 {
                        for &(j, v) in row {
                            w[j as usize] += a * v;
                        }
                    }
                }
                SvrModel::Linear { w, b }
            }
            Kernel::Rbf => SvrModel::Rbf {
                gamma,
                support: x
                    .rows
                    .iter()
                    .zip(&coef)
                    .filter(|(_, a)| **a != 0.0)
                    .map(|(r, a)| (r.clone(), *a))
                    .collect(),
                b,
            },
        });
        Ok(())
    }

    fn predict_row(&self, row: &[(u32, f64)]) -> f64 {
        match self.model.as_ref().expect("fitted") {
            SvrModel::Linear { w, b } => b + super::features::dot(row, w),
            SvrModel::Rbf { gamma, support, b } => {
                let rn = sq_norm(row);
                b + support
                    .iter()
                    .map(|(s, a)| {
                        let d2 = (sq_norm(s) + rn - 2.0 * sparse_dot(s, row)).max(0.0);
                        a * (-gamma * d2).exp()
                    })
                    .sum::<f64>()
            }
        }
    }

    fn is_fitted(&self) -> bool {
        self.model.is_some()
    }

    fn hyperparameters(&self) -> Params {
        let mut p = Params::new();
        p.insert("C".into(), self.params.c.into());
        p.insert("epsilon".into(), self.params.epsilon.into());
        p.insert("kernel".into(), self.params.kernel.to_string().into());
        p.insert(
            "gamma".into(),
            match self.params.gamma {
                Gamma::Scale => "scale".into(),
                Gamma::Value(g) => g.into(),
            },
        );
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn svr(c: f64, epsilon: f64, kernel: Kernel, gamma: Gamma) -> Svr {
        Svr::new(SvrParams {
            c,
            epsilon,
            kernel,
            gamma,
            tol: 1e-6,
            ..Default::default()
        })
        .unwrap()
    }

    /// Primal objective `½‖w‖² + C Σ max(0, |y − f(x)| − ε)` for the linear kernel.
    fn primal(x: &FeatureMatrix, y: &[f64], w: &[f64], b: f64, c: f64, eps: f64) -> f64 {
        let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() / 2.0;
        let loss: f64 = x
            .rows
            .iter()
            .zip(y)
            .map(|(r, yi)| ((yi - b - super::super::features::dot(r, w)).abs() - eps).max(0.0))
            .sum();
        reg + c * loss
    }

    #[test]
    fn linear_kernel_matches_primal_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dense: Vec<Vec<f64>> = (0..60).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = dense
            .iter()
            .map(|r| 2.0 * r[0] - r[1] + 0.5 + rng.random_range(-0.3..0.3))
            .collect();
        let x = FeatureMatrix::from_dense(&dense);
        let (c, eps) = (1.0, 0.1);
        let mut m = svr(c, eps, Kernel::Linear, Gamma::Scale);
        m.fit(&x, &y, 0).unwrap();
        let Some(SvrModel::Linear { w, b }) = &m.model else { panic!() };
        let opt = primal(&x, &y, w, *b, c, eps);
        // no small perturbation of (w, b) improves the primal objective
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let w2: Vec<f64> = w.iter().map(|v| v + rng.random_range(-0.01..0.01)).collect();
            let b2 = b + rng.random_range(-0.01..0.01);
            assert!(primal(&x, &y, &w2, b2, c, eps) >= opt - 1e-4);
        }
        assert!((w[0] - 2.0).abs() < 0.3 && (w[1] + 1.0).abs() < 0.3, "{w:?}");
    }

    #[test]
    fn predictions_stay_in_epsilon_tube_when_separable() {
        // y = x exactly, large C: every training residual lies within ε (up to tolerance)
        let dense: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let x = FeatureMatrix::from_dense(&dense);
        let mut m = svr(100.0, 0.05, Kernel::Linear, Gamma::Scale);
        m.fit(&x, &y, 0).unwrap();
        for (r, yi) in x.rows.iter().zip(&y) {
            assert!((m.predict_row(r) - yi).abs() <= 0.05 + 1e-3);
        }
    }

    #[test]
    fn rbf_fits_nonlinear_signal() {
        let dense: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 40.0 * 6.0]).collect();
        let y: Vec<f64> = dense.iter().map(|r| r[0].sin() * 3.0 + 3.0).collect();
        let x = FeatureMatrix::from_dense(&dense);
        let mut m = svr(10.0, 0.01, Kernel::Rbf, Gamma::Value(1.0));
        m.fit(&x, &y, 0).unwrap();
        let mse: f64 = x.rows.iter().zip(&y).map(|(r, yi)| (m.predict_row(r) - yi).powi(2)).sum::<f64>() / 40.0;
        assert!(mse < 0.01, "{mse}");
        assert!(m.n_support().unwrap() > 0);
    }

    #[test]
    fn fits_identity_line_with_zero_tube() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 49.0 * 4.0 - 2.0).collect();
        let x = FeatureMatrix::from_dense(&xs.iter().map(|&v| vec![v]).collect::<Vec<_>>());
        let mut m = svr(1000.0, 0.0, Kernel::Linear, Gamma::Scale);
        m.fit(&x, &xs, 0).unwrap();
        let mae = xs.iter().map(|&v| (m.predict_row(&[(0, v)]) - v).abs()).sum::<f64>() / 50.0;
        assert!(mae < 0.05, "{mae}");
    }

    #[test]
    fn wide_tube_predicts_constant() {
        // ε larger than the label range: w = 0 and all α = 0
        let x = FeatureMatrix::from_dense(&[vec![1.0], vec![2.0], vec![3.0]]);
        let mut m = svr(1.0, 5.0, Kernel::Rbf, Gamma::Scale);
        m.fit(&x, &[1.0, 2.0, 3.0], 0).unwrap();
        assert_eq!(m.n_support(), Some(0));
        let p = m.predict_row(&[(0, 2.0)]);
        assert!((0.0..=4.0).contains(&p));
    }

    #[test]
    fn gamma_scale_uses_feature_variance() {
        let x = FeatureMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut m = svr(1.0, 0.0, Kernel::Rbf, Gamma::Scale);
        m.fit(&x, &[0.0, 1.0], 0).unwrap();
        // entries 1,0,0,1: var 0.25, 2 features
        assert!((m.gamma().unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_hyperparameters() {
        for (c, e) in [(0.0, 0.1), (-1.0, 0.1), (1.0, -0.1), (f64::NAN, 0.1)] {
            assert!(matches!(
                Svr::new(SvrParams { c, epsilon: e, ..Default::default() }),
                Err(PredictorError::InvalidHyperparameter(_))
            ));
        }
        let mut p = Params::new();
        p.insert("kernel".into(), "poly".into());
        assert!(Svr::from_params(&p).is_err());
        let mut p = Params::new();
        p.insert("gamma".into(), "auto".into());
        assert!(Svr::from_params(&p).is_err());
    }

    #[test]
    fn tiny_cache_gives_same_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dense: Vec<Vec<f64>> = (0..50).map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let y: Vec<f64> = dense.iter().map(|r| r[0] * 4.0 + r[2]).collect();
        let x = FeatureMatrix::from_dense(&dense);
        let mut a = svr(1.0, 0.1, Kernel::Rbf, Gamma::Scale);
        a.fit(&x, &y, 0).unwrap();
        let mut b = Svr::new(SvrParams {
            cache_mb: 0,
            ..*a.params()
        })
        .unwrap();
        b.fit(&x, &y, 0).unwrap();
        for r in &x.rows {
            assert_eq!(a.predict_row(r), b.predict_row(r));
        }
    }
}
