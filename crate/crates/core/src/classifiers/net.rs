use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{softmax_rows, Standardizer, TrainingMatrix};
use crate::error::{Error, Result};
use crate::numeric::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: 4,
            epochs: 10_000,
            learning_rate: 0.1,
        }
    }
}

/// Weights of a d→h→c network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    /// h×d
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// c×h
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl NetParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(d: usize, h: usize, c: usize, rng: &mut impl Rng) -> Self {
        let l1 = (6.0 / (d + h) as f64).sqrt();
        let l2 = (6.0 / (h + c) as f64).sqrt();
        NetParams {
            w1: DMatrix::from_fn(h, d, |_, _| rng.random_range(-l1..l1)),
            b1: DVector::zeros(h),
            w2: DMatrix::from_fn(c, h, |_, _| rng.random_range(-l2..l2)),
            b2: DVector::zeros(c),
        }
    }

    fn axpy(&mut self, a: f64, g: &NetParams) {
        self.w1 += &g.w1 * a;
        self.b1 += &g.b1 * a;
        self.w2 += &g.w2 * a;
        self.b2 += &g.b2 * a;
    }

    pub fn max_abs(&self) -> f64 {
        self.w1.amax().max(self.b1.amax()).max(self.w2.amax()).max(self.b2.amax())
    }

    fn hidden_activations(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = x * self.w1.transpose();
        for mut row in a.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.b1.iter()) {
                *v = 1.0 / (1.0 + (-(*v + b)).exp());
            }
        }
        a
    }

    fn output(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = a * self.w2.transpose();
        for mut row in z.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.b2.iter()) {
                *v += b;
            }
        }
        softmax_rows(&mut z);
        z
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.output(&self.hidden_activations(x))
    }
}

/// Mean cross-entropy and its gradient by backpropagation. `x` is used as given.
pub fn net_loss_and_gradient(p: &NetParams, x: &DMatrix<f64>, y: &[usize]) -> (f64, NetParams) {
    let n = x.nrows();
    let nf = n as f64;
    let a = p.hidden_activations(x);
    let mut dz = p.output(&a);
    let mut loss = 0.0;
    for i in 0..n {
        loss -= dz[(i, y[i])].max(f64::MIN_POSITIVE).ln();
        dz[(i, y[i])] -= 1.0;
    }
    dz /= nf;
    let w2 = a.tr_mul(&dz).transpose();
    let b2 = DVector::from_iterator(dz.ncols(), dz.column_iter().map(|c| c.sum()));
    let mut dh = &dz * &p.w2;
    dh.zip_apply(&a, |g, act| *g *= act * (1.0 - act));
    let w1 = x.tr_mul(&dh).transpose();
    let b1 = DVector::from_iterator(dh.ncols(), dh.column_iter().map(|c| c.sum()));
    (loss / nf, NetParams { w1, b1, w2, b2 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralNet {
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub standardizer: Standardizer,
    pub params: NetParams,
    pub hidden: usize,
    /// Training loss of the kept snapshot.
    pub best_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

impl NeuralNet {
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.params.predict_proba(&self.standardizer.apply(x))
    }
}

/// Full-batch gradient descent on standardized inputs. The returned weights
/// are those with the lowest training loss seen.
pub fn train_neural_net(data: &TrainingMatrix, cfg: &NetConfig, seed: u64) -> Result<NeuralNet> {
    if cfg.hidden == 0 {
        return Err(Error::validation("hidden layer needs at least one unit"));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::validation("learning_rate must be positive"));
    }
    let standardizer = Standardizer::fit(&data.x);
    let x = standardizer.apply(&data.x);
    let mut rng = rng_from(seed, &[]);
    let mut params = NetParams::init(data.n_features(), cfg.hidden, data.n_classes(), &mut rng);
    let mut best = (f64::INFINITY, params.clone(), 0);
    let mut epochs_run = 0;
    for epoch in 0..=cfg.epochs {
        let (loss, grad) = net_loss_and_gradient(&params, &x, &data.y);
        if !loss.is_finite() {
            return Err(Error::numerical(format!("network loss became non-finite at epoch {epoch}")));
        }
        if loss < best.0 {
            best = (loss, params.clone(), epoch);
        }
        if epoch == cfg.epochs || grad.max_abs() < 1e-12 {
            break;
        }
        params.axpy(-cfg.learning_rate, &grad);
        epochs_run = epoch + 1;
    }
    Ok(NeuralNet {
        feature_names: data.feature_names.clone(),
        class_names: data.class_names.clone(),
        standardizer,
        params: best.1,
        hidden: cfg.hidden,
        best_loss: best.0,
        best_epoch: best.2,
        epochs_run,
    })
}
