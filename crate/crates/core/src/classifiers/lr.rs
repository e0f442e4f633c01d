use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{softmax_rows, Standardizer, TrainingMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrConfig {
    /// Ridge penalty on the slopes (intercepts are not penalized).
    pub l2: f64,
    /// Convergence threshold on the max-norm of the gradient.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig {
            l2: 1e-4,
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

/// Softmax regression with the first class as reference.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub standardizer: Standardizer,
    /// (c-1)×(d+1) coefficients on standardized predictors; column 0 is the
    /// intercept, row k belongs to class k+1.
    pub coefficients: DMatrix<f64>,
    pub l2: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after each accepted step, starting value first.
    pub loss_history: Vec<f64>,
}

impl LogisticModel {
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        probabilities(&self.standardizer.apply(x), &self.coefficients)
    }
}

fn probabilities(x: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let c = w.nrows() + 1;
    let slopes_t = w.columns(1, w.ncols() - 1).transpose();
    let lin = x * slopes_t;
    let mut z = DMatrix::zeros(n, c);
    for i in 0..n {
        for k in 1..c {
            z[(i, k)] = lin[(i, k - 1)] + w[(k - 1, 0)];
        }
    }
    softmax_rows(&mut z);
    z
}

/// Mean negative log-likelihood plus `(l2/2)·‖slopes‖²` and its gradient with
/// respect to `w` ((c-1)×(d+1), intercept in column 0). `x` is used as given.
pub fn lr_loss_and_gradient(
    x: &DMatrix<f64>,
    y: &[usize],
    w: &DMatrix<f64>,
    l2: f64,
) -> (f64, DMatrix<f64>) {
    let n = x.nrows();
    let nf = n as f64;
    let c = w.nrows() + 1;
    let p = probabilities(x, w);
    let mut nll = 0.0;
    let mut resid = DMatrix::zeros(n, c - 1);
    for i in 0..n {
        nll -= p[(i, y[i])].max(f64::MIN_POSITIVE).ln();
        for k in 1..c {
            resid[(i, k - 1)] = (p[(i, k)] - f64::from(y[i] == k)) / nf;
        }
    }
    let slopes = w.columns(1, w.ncols() - 1);
    let penalty = 0.5 * l2 * slopes.norm_squared();
    let mut grad = DMatrix::zeros(w.nrows(), w.ncols());
    let gs = x.tr_mul(&resid).transpose() + slopes * l2;
    grad.columns_mut(1, w.ncols() - 1).copy_from(&gs);
    for k in 0..c - 1 {
        grad[(k, 0)] = resid.column(k).sum();
    }
    (nll / nf + penalty, grad)
}

pub fn train_multinomial_lr(data: &TrainingMatrix, cfg: &LrConfig) -> Result<LogisticModel> {
    let w0 = DMatrix::zeros(data.n_classes() - 1, data.n_features() + 1);
    train_multinomial_lr_from(data, cfg, w0)
}

/// Gradient descent with Armijo backtracking from the starting point `w0`.
/// Trial steps use the Barzilai-Borwein length; every accepted step lowers
/// the objective.
pub fn train_multinomial_lr_from(data: &TrainingMatrix, cfg: &LrConfig, w0: DMatrix<f64>) -> Result<LogisticModel> {
    if !(cfg.l2 >= 0.0) || !cfg.l2.is_finite() {
        return Err(Error::validation(format!("l2 must be a non-negative number, got {}", cfg.l2)));
    }
    let c = data.n_classes();
    let d = data.n_features();
    if w0.shape() != (c - 1, d + 1) {
        return Err(Error::validation("starting coefficients have the wrong shape"));
    }
    let standardizer = Standardizer::fit(&data.x);
    let x = standardizer.apply(&data.x);
    let y = &data.y;

    let mut w = w0;
    let (mut f, mut g) = lr_loss_and_gradient(&x, y, &w, cfg.l2);
    let mut history = vec![f];
    let mut prev: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        if !f.is_finite() {
            break;
        }
        let gmax = g.amax();
        if gmax < cfg.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut t = match &prev {
            Some((s, yv)) => {
                let sy = s.dot(yv);
                if sy > 0.0 {
                    (s.norm_squared() / sy).clamp(1e-10, 1e10)
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let g2 = g.norm_squared();
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &w - &g * t;
            let (ft, gt) = lr_loss_and_gradient(&x, y, &trial, cfg.l2);
            if ft.is_finite() && ft <= f - 1e-4 * t * g2 {
                accepted = Some((trial, ft, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((wn, fn_, gn)) = accepted.filter(|(wn, _, _)| *wn != w) else {
            // No descent step left at machine precision.
            converged = gmax < cfg.tol.max(1e-8);
            break;
        };
        prev = Some((&wn - &w, &gn - &g));
        w = wn;
        f = fn_;
        g = gn;
        history.push(f);
    }
    if !f.is_finite() {
        return Err(Error::numerical(
            "logistic regression loss became non-finite; the classes may be separable, set l2 > 0",
        ));
    }
    if cfg.l2 == 0.0 && f < 1e-4 {
        let p = probabilities(&x, &w);
        let separated = (0..x.nrows()).all(|i| {
            (0..c).all(|k| k == y[i] || p[(i, k)] < p[(i, y[i])])
        });
        if separated {
            return Err(Error::numerical(
                "training classes are perfectly separable and l2 = 0, so the coefficients diverge; set l2 > 0",
            ));
        }
    }
    Ok(LogisticModel {
        feature_names: data.feature_names.clone(),
        class_names: data.class_names.clone(),
        standardizer,
        coefficients: w,
        l2: cfg.l2,
        converged,
        iterations,
        loss_history: history,
    })
}
