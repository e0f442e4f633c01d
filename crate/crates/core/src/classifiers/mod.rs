//! The three model families behind one train/predict interface:
//! multinomial logistic regression, random forest with Gini importance, and
//! a one-hidden-layer network.

mod forest;
mod lr;
mod net;
mod persist;
mod tune;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forest::{gini_importance, train_random_forest, DecisionTree, ForestConfig, GiniImportance, RandomForest, TreeNode};
pub use lr::{lr_loss_and_gradient, train_multinomial_lr, train_multinomial_lr_from, LogisticModel, LrConfig};
pub use net::{net_loss_and_gradient, train_neural_net, NetConfig, NetParams, NeuralNet};
pub use persist::{load_model, save_model, MODEL_FORMAT_VERSION};
pub use tune::{tune_neural_net, TuneReport};

/// Predictors and labels for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMatrix {
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: Vec<usize>,
}

impl TrainingMatrix {
    pub fn new(feature_names: Vec<String>, class_names: Vec<String>, x: DMatrix<f64>, y: Vec<usize>) -> Result<Self> {
        let (n, d) = x.shape();
        if feature_names.len() != d {
            return Err(Error::validation(format!("{} feature names for {d} columns", feature_names.len())));
        }
        if y.len() != n {
            return Err(Error::validation(format!("{} labels for {n} rows", y.len())));
        }
        if d == 0 {
            return Err(Error::validation("training matrix has no predictors"));
        }
        let c = class_names.len();
        if c < 2 {
            return Err(Error::validation("need at least two classes"));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite predictor value in column `{}`, row {}",
                feature_names[pos / n],
                pos % n + 1
            )));
        }
        let mut counts = vec![0usize; c];
        for &l in &y {
            if l >= c {
                return Err(Error::validation(format!("label {l} outside the {c} classes")));
            }
            counts[l] += 1;
        }
        if let Some(k) = counts.iter().position(|&k| k == 0) {
            return Err(Error::validation(format!("class `{}` has no training rows", class_names[k])));
        }
        Ok(TrainingMatrix {
            feature_names,
            class_names,
            x,
            y,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes()];
        for &l in &self.y {
            c[l] += 1;
        }
        c
    }

    /// Rows `idx` only. Fails if a class disappears.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        TrainingMatrix::new(
            self.feature_names.clone(),
            self.class_names.clone(),
            self.x.select_rows(idx),
            idx.iter().map(|&i| self.y[i]).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    MultinomialLr,
    RandomForest,
    NeuralNet,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] = [ModelFamily::MultinomialLr, ModelFamily::RandomForest, ModelFamily::NeuralNet];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::MultinomialLr => "multinomial-lr",
            ModelFamily::RandomForest => "random-forest",
            ModelFamily::NeuralNet => "neural-net",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Column means and standard deviations learnt from training data. Constant
/// columns get sd 1 so they standardize to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let means: Vec<f64> = x.column_iter().map(|c| c.sum() / n).collect();
        let sds = x
            .column_iter()
            .zip(&means)
            .map(|(c, m)| {
                let ss: f64 = c.iter().map(|v| (v - m) * (v - m)).sum();
                let sd = if n > 1.0 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { means, sds }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x.clone();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            let (m, s) = (self.means[j], self.sds[j]);
            col.apply(|v| *v = (*v - m) / s);
        }
        z
    }
}

/// Row-wise softmax in place, stable against overflow.
pub(crate) fn softmax_rows(z: &mut DMatrix<f64>) {
    for i in 0..z.nrows() {
        let mut row = z.row_mut(i);
        let mx = row.max();
        row.apply(|v| *v = (*v - mx).exp());
        let s = row.sum();
        row /= s;
    }
}

/// A trained model of any family.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Lr(LogisticModel),
    Forest(RandomForest),
    Net(NeuralNet),
}

impl FittedModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            FittedModel::Lr(_) => ModelFamily::MultinomialLr,
            FittedModel::Forest(_) => ModelFamily::RandomForest,
            FittedModel::Net(_) => ModelFamily::NeuralNet,
        }
    }

    pub fn feature_names(&self) -> &[String] {
        match self {
            FittedModel::Lr(m) => &m.feature_names,
            FittedModel::Forest(m) => &m.feature_names,
            FittedModel::Net(m) => &m.feature_names,
        }
    }

    pub fn class_names(&self) -> &[String] {
        match self {
            FittedModel::Lr(m) => &m.class_names,
            FittedModel::Forest(m) => &m.class_names,
            FittedModel::Net(m) => &m.class_names,
        }
    }

    /// n×c class probabilities; rows sum to one.
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.ncols(), self.feature_names().len(), "predictor count mismatch");
        match self {
            FittedModel::Lr(m) => m.predict_proba(x),
            FittedModel::Forest(m) => m.predict_proba(x),
            FittedModel::Net(m) => m.predict_proba(x),
        }
    }

    /// Argmax of the probabilities, ties to the lowest class index.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<usize> {
        argmax_rows(&self.predict_proba(x))
    }
}

pub(crate) fn argmax_rows(p: &DMatrix<f64>) -> Vec<usize> {
    p.row_iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().copied().collect();
            crate::numeric::argmax(&v)
        })
        .collect()
}

/// How the network's hidden size is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HiddenChoice {
    Fixed(usize),
    /// Inner stratified cross-validation over `min..=max` hidden units.
    Tuned { min: usize, max: usize, folds: usize },
}

/// Hyperparameters for all three families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub lr: LrConfig,
    pub forest: ForestConfig,
    pub net: NetConfig,
    pub hidden: HiddenChoice,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lr: LrConfig::default(),
            forest: ForestConfig::default(),
            net: NetConfig::default(),
            hidden: HiddenChoice::Tuned { min: 1, max: 10, folds: 5 },
        }
    }
}

/// Train one family with the shared config. `seed` drives every random choice.
pub fn fit_model(family: ModelFamily, cfg: &ModelConfig, data: &TrainingMatrix, seed: u64) -> Result<FittedModel> {
    match family {
        ModelFamily::MultinomialLr => train_multinomial_lr(data, &cfg.lr).map(FittedModel::Lr),
        ModelFamily::RandomForest => train_random_forest(data, &cfg.forest, seed).map(FittedModel::Forest),
        ModelFamily::NeuralNet => match cfg.hidden {
            HiddenChoice::Fixed(h) => {
                let net = NetConfig { hidden: h, ..cfg.net.clone() };
                train_neural_net(data, &net, seed).map(FittedModel::Net)
            }
            HiddenChoice::Tuned { min, max, folds } => {
                tune_neural_net(data, min..=max, folds, &cfg.net, seed).map(|r| FittedModel::Net(r.model))
            }
        },
    }
}
